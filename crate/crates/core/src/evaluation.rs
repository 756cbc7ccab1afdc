//! Metrics, baselines and the repeated-split experiment grid.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_time_series, split, standardize, FeatureTable, MetaDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::meta_models::{train, Family, ModelSpec, Samples, Task, DECISION_THRESHOLD};
use crate::seg_metrics::MEAN_ENTROPY_INDEX;

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::invalid("empty input"));
    }
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Fraction of rows where `score >= threshold` agrees with the label.
pub fn accuracy(labels: &[bool], scores: &[f64], threshold: f64) -> Result<f64> {
    check_pair(labels.len(), scores.len())?;
    let hits = labels.iter().zip(scores).filter(|(l, s)| (**s >= threshold) == **l).count();
    Ok(hits as f64 / labels.len() as f64)
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUROC needs at least one positive and one negative"));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the Mann-Whitney statistic: the chance that
/// a random positive outscores a random negative, ties counting one half.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_pair(labels.len(), scores.len())?;
    let (pos, neg) = class_counts(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points `(fpr, tpr)` from sweeping the threshold over every distinct
/// score, highest first, starting at `(0, 0)`.
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_pair(labels.len(), scores.len())?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoid area under [`roc_curve`].
pub fn auroc_sweep(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let pts = roc_curve(labels, scores)?;
    Ok(pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum())
}

pub fn r_squared(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    check_pair(targets.len(), predictions.len())?;
    if targets.len() < 2 {
        return Err(Error::invalid("R² needs at least two targets"));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("R² undefined for constant targets"));
    }
    let ss_res: f64 = targets.iter().zip(predictions).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Root mean squared residual.
pub fn regression_sigma(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    check_pair(targets.len(), predictions.len())?;
    let mse = targets.iter().zip(predictions).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / targets.len() as f64;
    Ok(mse.sqrt())
}

/// Accuracy of thresholding random scores: the majority-class fraction.
pub fn naive_baseline_accuracy(n_total: usize, n_iou_zero: usize) -> f64 {
    assert!(n_total >= 1 && n_iou_zero <= n_total, "invalid counts");
    n_iou_zero.max(n_total - n_iou_zero) as f64 / n_total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Acc,
    Auroc,
    Sigma,
    R2,
}

impl Metric {
    pub fn for_task(task: Task) -> [Metric; 2] {
        match task {
            Task::Classification => [Metric::Acc, Metric::Auroc],
            Task::Regression => [Metric::Sigma, Metric::R2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc => "ACC",
            Metric::Auroc => "AUROC",
            Metric::Sigma => "sigma",
            Metric::R2 => "R2",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Model,
    NaiveBaseline,
    EntropyBaseline,
    /// Gradient boosting on the baseline set only, per history length.
    UOnlyBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(metric: Metric, values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            metric,
            mean,
            std: var.sqrt(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub family: Option<Family>,
    pub task: Task,
    pub m: usize,
    pub history: usize,
    pub metrics: Vec<MetricSummary>,
}

impl ReportRow {
    pub fn metric(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|s| s.metric == metric)
    }
}

/// Best grid cell for one (family, task, metric), by mean over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub family: Family,
    pub task: Task,
    pub metric: Metric,
    pub m: usize,
    pub history: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: usize,
    pub base_seed: u64,
    pub num_records: usize,
    pub num_iou_zero: usize,
    pub rows: Vec<ReportRow>,
    pub best: Vec<BestCell>,
}

pub const REPORT_CSV_HEADER: &str = "kind,family,task,m,T,metric,mean,std,best";

impl EvalReport {
    pub fn find(&self, kind: RowKind, family: Option<Family>, task: Task, m: usize, history: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && r.family == family && r.task == task && r.m == m && r.history == history)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<report csv>", e);
        writeln!(out, "{REPORT_CSV_HEADER}").map_err(io)?;
        for r in &self.rows {
            for s in &r.metrics {
                let best = r.kind == RowKind::Model
                    && self.best.iter().any(|b| {
                        Some(b.family) == r.family
                            && b.task == r.task
                            && b.metric == s.metric
                            && b.m == r.m
                            && b.history == r.history
                    });
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    kind_name(r.kind),
                    r.family.map(|f| f.short_name()).unwrap_or(""),
                    task_name(r.task),
                    r.m,
                    r.history,
                    s.metric.name(),
                    s.mean,
                    s.std,
                    best as u8
                )
                .map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn kind_name(k: RowKind) -> &'static str {
    match k {
        RowKind::Model => "model",
        RowKind::NaiveBaseline => "naive",
        RowKind::EntropyBaseline => "entropy_gb",
        RowKind::UOnlyBaseline => "u_only_gb",
    }
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Classification => "classification",
        Task::Regression => "regression",
    }
}

/// Experiment configuration. `template` supplies hyperparameters; family,
/// task and seed are overridden per job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub families: Vec<Family>,
    pub tasks: Vec<Task>,
    pub ms: Vec<usize>,
    pub histories: Vec<usize>,
    pub split: SplitSpec,
    pub template: ModelSpec,
    pub baselines: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            tasks: vec![Task::Classification, Task::Regression],
            ms: vec![0],
            histories: vec![0],
            split: SplitSpec::default(),
            template: ModelSpec::new(Family::GradientBoosting, Task::Classification, 0),
            baselines: true,
        }
    }
}

/// Metrics of one trained model on one split.
fn evaluate_run(
    dataset: &MetaDataset,
    spec: &ModelSpec,
    split_spec: &SplitSpec,
    run: usize,
    columns: Option<&[usize]>,
) -> Result<Vec<(Metric, f64)>> {
    let sp = split(dataset.len(), split_spec, run)?;
    let std = standardize(dataset, &sp)?;
    let (slots, width) = (dataset.slots(), dataset.slot_width());
    let prepare = |records| -> Result<Samples> {
        let s = Samples::from_records(records, slots, width, spec.task)?;
        match columns {
            Some(c) => s.select_features(c),
            None => Ok(s),
        }
    };
    let (tr, va, te) = (prepare(&std.train)?, prepare(&std.val)?, prepare(&std.test)?);
    let mut spec = spec.clone();
    spec.seed = split_spec.seed_for(run);
    let model = train(&spec, &tr, &va)?;
    let pred = model.predict(&te)?;
    Ok(match spec.task {
        Task::Classification => {
            let labels: Vec<bool> = te.y.iter().map(|&y| y == 1.0).collect();
            vec![
                (Metric::Acc, accuracy(&labels, &pred, DECISION_THRESHOLD)?),
                (Metric::Auroc, auroc(&labels, &pred)?),
            ]
        }
        Task::Regression => vec![
            (Metric::Sigma, regression_sigma(&te.y, &pred)?),
            (Metric::R2, r_squared(&te.y, &pred)?),
        ],
    })
}

struct Job<'a> {
    kind: RowKind,
    dataset: &'a MetaDataset,
    family: Family,
    task: Task,
    columns: Option<&'a [usize]>,
}

fn run_jobs(jobs: &[Job<'_>], cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let runs = cfg.split.runs;
    let flat: Vec<(usize, usize)> = (0..jobs.len()).flat_map(|j| (0..runs).map(move |r| (j, r))).collect();
    let results: Vec<Result<Vec<(Metric, f64)>>> = flat
        .par_iter()
        .map(|&(j, run)| {
            let job = &jobs[j];
            let mut spec = cfg.template.clone();
            spec.family = job.family;
            spec.task = job.task;
            evaluate_run(job.dataset, &spec, &cfg.split, run, job.columns)
        })
        .collect();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut it = results.into_iter();
    for job in jobs {
        let mut per_run = Vec::with_capacity(runs);
        for _ in 0..runs {
            per_run.push(it.next().expect("one result per job and run")?);
        }
        let metrics = Metric::for_task(job.task)
            .iter()
            .enumerate()
            .map(|(k, &metric)| MetricSummary::from_values(metric, per_run.iter().map(|r| r[k].1).collect()))
            .collect();
        rows.push(ReportRow {
            kind: job.kind,
            family: (job.kind != RowKind::NaiveBaseline).then_some(job.family),
            task: job.task,
            m: job.dataset.m,
            history: job.dataset.history,
            metrics,
        });
    }
    Ok(rows)
}

/// Gradient boosting on the mean segment entropy alone. The dataset must be
/// built with `m = 0` and `T = 0`.
pub fn entropy_baseline(dataset: &MetaDataset, cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    if dataset.m != 0 || dataset.history != 0 {
        return Err(Error::Config("entropy baseline needs a dataset with m = 0 and T = 0".into()));
    }
    let columns = [MEAN_ENTROPY_INDEX];
    let jobs: Vec<Job> = cfg
        .tasks
        .iter()
        .map(|&task| Job {
            kind: RowKind::EntropyBaseline,
            dataset,
            family: Family::GradientBoosting,
            task,
            columns: Some(&columns),
        })
        .collect();
    run_jobs(&jobs, cfg)
}

/// Evaluates every (family, task, m, T) cell over all runs plus, optionally,
/// the naive, entropy and baseline-set rows. `table` must carry at least
/// `max(ms)` stability blocks and track ids.
pub fn run_experiment(table: &FeatureTable, cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.split.validate()?;
    cfg.template.validate()?;
    if cfg.families.is_empty() || cfg.tasks.is_empty() || cfg.ms.is_empty() || cfg.histories.is_empty() {
        return Err(Error::Config("experiment grid is empty".into()));
    }
    let mut datasets = Vec::new();
    for &m in &cfg.ms {
        let reduced = table.with_m(m)?;
        for &t in &cfg.histories {
            datasets.push(build_time_series(&reduced, t)?);
        }
    }
    let base_u = table.with_m(0)?;
    let mut u_sets = Vec::new();
    if cfg.baselines {
        for &t in &cfg.histories {
            u_sets.push(build_time_series(&base_u, t)?);
        }
    }
    let entropy_set = if cfg.baselines { Some(build_time_series(&base_u, 0)?) } else { None };

    let entropy_cols = [MEAN_ENTROPY_INDEX];
    let mut jobs = Vec::new();
    for ds in &datasets {
        for &family in &cfg.families {
            for &task in &cfg.tasks {
                jobs.push(Job {
                    kind: RowKind::Model,
                    dataset: ds,
                    family,
                    task,
                    columns: None,
                });
            }
        }
    }
    if let Some(es) = &entropy_set {
        for &task in &cfg.tasks {
            jobs.push(Job {
                kind: RowKind::EntropyBaseline,
                dataset: es,
                family: Family::GradientBoosting,
                task,
                columns: Some(&entropy_cols),
            });
        }
        for ds in &u_sets {
            for &task in &cfg.tasks {
                jobs.push(Job {
                    kind: RowKind::UOnlyBaseline,
                    dataset: ds,
                    family: Family::GradientBoosting,
                    task,
                    columns: None,
                });
            }
        }
    }
    let mut rows = run_jobs(&jobs, cfg)?;

    let first = &datasets[0];
    let num_iou_zero = first.records.iter().filter(|r| r.label()).count();
    if cfg.baselines && cfg.tasks.contains(&Task::Classification) && !first.is_empty() {
        let acc = naive_baseline_accuracy(first.len(), num_iou_zero);
        rows.push(ReportRow {
            kind: RowKind::NaiveBaseline,
            family: None,
            task: Task::Classification,
            m: 0,
            history: 0,
            metrics: vec![
                MetricSummary::from_values(Metric::Acc, vec![acc; cfg.split.runs]),
                MetricSummary::from_values(Metric::Auroc, vec![0.5; cfg.split.runs]),
            ],
        });
    }

    let best = best_cells(&rows);
    Ok(EvalReport {
        runs: cfg.split.runs,
        base_seed: cfg.split.base_seed,
        num_records: first.len(),
        num_iou_zero,
        rows,
        best,
    })
}

/// First cell in grid order wins ties.
fn best_cells(rows: &[ReportRow]) -> Vec<BestCell> {
    let mut best: Vec<BestCell> = Vec::new();
    for r in rows.iter().filter(|r| r.kind == RowKind::Model) {
        let family = r.family.expect("model rows carry a family");
        for s in &r.metrics {
            let slot = best
                .iter_mut()
                .find(|b| b.family == family && b.task == r.task && b.metric == s.metric);
            let cell = BestCell {
                family,
                task: r.task,
                metric: s.metric,
                m: r.m,
                history: r.history,
                mean: s.mean,
                std: s.std,
            };
            match slot {
                None => best.push(cell),
                Some(b) => {
                    let better = if s.metric.higher_is_better() { s.mean > b.mean } else { s.mean < b.mean };
                    if better {
                        *b = cell;
                    }
                }
            }
        }
    }
    best
}
