use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use segmeta::dataset::{build_time_series, split, standardize, FeatureTable, MetaDataset, SplitSpec, MAX_HISTORY};
use segmeta::evaluation::{
    accuracy, auroc, r_squared, regression_sigma, run_experiment, ExperimentConfig,
};
use segmeta::meta_models::{train, Family, ModelSpec, Samples, Task, DECISION_THRESHOLD};
use segmeta::pipeline::{extract_stream, feature_table, segment_frame, track_id_map, ExtractConfig};
use segmeta::segmentation::write_segments_csv;
use segmeta::synth::{write_stream, SynthConfig};
use segmeta::tensor_io::read_manifest;
use segmeta::tracking::{track_sequence, write_tracking_csv, TrackingParams};

/// Segment-wise quality prediction for video segmentation streams.
#[derive(Parser)]
#[command(name = "segmeta", version)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream (tensors plus manifest.json).
    Synth(SynthArgs),
    /// Compute segment features for every frame of a stream.
    Extract(ExtractArgs),
    /// Assign track ids and write them into the feature table.
    Track(TrackArgs),
    /// Build time-series meta records from a tracked feature table.
    Dataset(DatasetArgs),
    /// Train one meta model on one split of a dataset.
    Train(TrainArgs),
    /// Run the repeated-split evaluation and write a report.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with generator settings; unset fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    p_err: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Number of cell-state stability metrics, at most num_blocks - 1.
    #[arg(long, default_value_t = 0)]
    m: usize,
    /// Odd box kernel for label smoothing; 1 disables it.
    #[arg(long, default_value_t = 1)]
    smoothing: usize,
    /// Feature CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-segment geometry CSV.
    #[arg(long)]
    segments: Option<PathBuf>,
}

#[derive(Args)]
struct TrackingArgs {
    #[arg(long, default_value_t = 10.0)]
    c_near: f64,
    #[arg(long, default_value_t = 0.35)]
    c_over: f64,
    #[arg(long, default_value_t = 100.0)]
    c_dist: f64,
    #[arg(long, default_value_t = 50.0)]
    c_lin: f64,
    /// Frames used by the center regression.
    #[arg(long, default_value_t = 5)]
    lr: usize,
}

impl TrackingArgs {
    fn params(&self) -> TrackingParams {
        TrackingParams {
            c_near: self.c_near,
            c_over: self.c_over,
            c_dist: self.c_dist,
            c_lin: self.c_lin,
            lr: self.lr,
        }
    }
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Feature CSV from `extract`.
    #[arg(long)]
    features: PathBuf,
    /// Must match the value used for `extract`.
    #[arg(long, default_value_t = 1)]
    smoothing: usize,
    /// Tracking CSV (frame, component, track_id, matched_step).
    #[arg(long)]
    out: PathBuf,
    /// Feature CSV with track ids filled in.
    #[arg(long)]
    features_out: PathBuf,
    #[command(flatten)]
    tracking: TrackingArgs,
}

#[derive(Args)]
struct DatasetArgs {
    /// Tracked feature CSV.
    #[arg(long)]
    features: PathBuf,
    /// History length T.
    #[arg(long, default_value_t = 0)]
    history: usize,
    /// Use only the first m stability metrics (default: all in the table).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Header JSON (default: the output path with a .json extension).
    #[arg(long)]
    header: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Records drawn per run (default: all).
    #[arg(long)]
    sample_size: Option<usize>,
    /// Train/val/test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.1, 0.2])]
    fractions: Vec<f64>,
}

impl SplitArgs {
    fn spec(&self) -> Result<SplitSpec> {
        let [a, b, c] = self.fractions[..] else {
            bail!("--fractions needs exactly three values");
        };
        let spec = SplitSpec {
            fractions: [a, b, c],
            sample_size: self.sample_size,
            runs: self.runs,
            base_seed: self.base_seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Header JSON written by `dataset` (default: dataset path with .json).
    #[arg(long)]
    header: Option<PathBuf>,
    /// linear | gb | nn | lstm
    #[arg(long, default_value = "gb")]
    family: String,
    /// classification | regression
    #[arg(long, default_value = "classification")]
    task: String,
    /// Which split to train on.
    #[arg(long, default_value_t = 0)]
    run: usize,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Tracked feature CSV.
    #[arg(long)]
    features: PathBuf,
    /// Full grid: m = 0..=table m, T = 0..=max-history, all four families.
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value_t = MAX_HISTORY)]
    max_history: usize,
    /// Cells to evaluate without --grid.
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', default_values_t = [0usize])]
    histories: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ["linear".to_string(), "gb".to_string()])]
    families: Vec<String>,
    /// Skip the naive, entropy and baseline-set rows.
    #[arg(long)]
    no_baselines: bool,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_json: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn header_path(explicit: &Option<PathBuf>, data: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| data.with_extension("json"))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SynthConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.frames {
        cfg.num_frames = f;
    }
    if let Some(p) = a.p_err {
        cfg.p_err = p;
    }
    let manifest = write_stream(&cfg, &a.out)?;
    println!("wrote {} frames, manifest {}", cfg.num_frames, manifest.display());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let cfg = ExtractConfig {
        m: a.m,
        smoothing_kernel: a.smoothing,
    };
    let frames = extract_stream(&manifest, &cfg)?;
    let table = feature_table(&frames, manifest.num_classes, a.m)?;
    let mut out = create(&a.out)?;
    table.write_csv(&mut out)?;
    out.flush()?;
    if let Some(p) = &a.segments {
        let segs: Vec<_> = frames.iter().flat_map(|f| f.segments.iter().cloned()).collect();
        let mut out = create(p)?;
        write_segments_csv(&mut out, &segs)?;
        out.flush()?;
    }
    let interior = table.rows.iter().filter(|r| r.has_interior()).count();
    println!(
        "{} segments ({interior} with interior), {} features each",
        table.rows.len(),
        table.width()
    );
    Ok(())
}

fn cmd_track(a: TrackArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let mut table = FeatureTable::read_csv(&a.features)?;
    let mut segments = (0..manifest.num_frames)
        .map(|t| segment_frame(&manifest, t, a.smoothing))
        .collect::<segmeta::Result<Vec<_>>>()?;
    let count: usize = segments.iter().map(|s| s.len()).sum();
    if count != table.rows.len() {
        bail!(
            "feature table has {} rows but the stream has {count} segments; was extract run with --smoothing {}?",
            table.rows.len(),
            a.smoothing
        );
    }
    let assignments = track_sequence(&mut segments, manifest.height, manifest.width, &a.tracking.params())?;
    let mut out = create(&a.out)?;
    write_tracking_csv(&mut out, &segments, &assignments)?;
    out.flush()?;
    table.set_track_ids(&track_id_map(&segments, &assignments));
    let mut out = create(&a.features_out)?;
    table.write_csv(&mut out)?;
    out.flush()?;
    let tracks = assignments.iter().flatten().map(|x| x.track_id).max().unwrap_or(0);
    println!("{count} segments linked into {tracks} tracks");
    Ok(())
}

fn cmd_dataset(a: DatasetArgs) -> Result<()> {
    let mut table = FeatureTable::read_csv(&a.features)?;
    if let Some(m) = a.m {
        table = table.with_m(m)?;
    }
    if table.rows.iter().any(|r| r.track_id.is_none()) && a.history > 0 {
        bail!("feature table has no track ids; run `segmeta track` first");
    }
    let ds = build_time_series(&table, a.history)?;
    let mut out = create(&a.out)?;
    ds.write_csv(&mut out)?;
    out.flush()?;
    let header = header_path(&a.header, &a.out);
    let mut h = create(&header)?;
    serde_json::to_writer_pretty(&mut h, &ds.header())?;
    writeln!(h)?;
    h.flush()?;
    let zero = ds.records.iter().filter(|r| r.label()).count();
    println!("{} records ({zero} with IoU_adj = 0), {} slots x {} features", ds.len(), ds.slots(), ds.slot_width());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let ds = MetaDataset::read(&a.dataset, header_path(&a.header, &a.dataset))?;
    let spec_split = a.split.spec()?;
    if a.run >= spec_split.runs {
        bail!("--run {} must be below --runs {}", a.run, spec_split.runs);
    }
    let family = Family::parse(&a.family)?;
    let task = Task::parse(&a.task)?;
    let sp = split(ds.len(), &spec_split, a.run)?;
    let st = standardize(&ds, &sp)?;
    let (slots, width) = (ds.slots(), ds.slot_width());
    let tr = Samples::from_records(&st.train, slots, width, task)?;
    let va = Samples::from_records(&st.val, slots, width, task)?;
    let te = Samples::from_records(&st.test, slots, width, task)?;
    let spec = ModelSpec::new(family, task, spec_split.seed_for(a.run));
    let model = train(&spec, &tr, &va)?;
    let mut out = create(&a.out)?;
    out.write_all(model.to_json()?.as_bytes())?;
    writeln!(out)?;
    out.flush()?;
    let pred = model.predict(&te)?;
    match task {
        Task::Classification => {
            let labels: Vec<bool> = te.y.iter().map(|&y| y == 1.0).collect();
            println!(
                "{} classification, run {}: test ACC {:.4}, AUROC {:.4}",
                family.short_name(),
                a.run,
                accuracy(&labels, &pred, DECISION_THRESHOLD)?,
                auroc(&labels, &pred)?
            );
        }
        Task::Regression => println!(
            "{} regression, run {}: test sigma {:.4}, R2 {:.4}",
            family.short_name(),
            a.run,
            regression_sigma(&te.y, &pred)?,
            r_squared(&te.y, &pred)?
        ),
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let table = FeatureTable::read_csv(&a.features)?;
    if table.rows.iter().any(|r| r.track_id.is_none()) {
        bail!("feature table has no track ids; run `segmeta track` first");
    }
    let mut cfg = ExperimentConfig {
        split: a.split.spec()?,
        baselines: !a.no_baselines,
        ..ExperimentConfig::default()
    };
    if a.grid {
        if a.max_history > MAX_HISTORY {
            bail!("--max-history must be at most {MAX_HISTORY}");
        }
        cfg.ms = (0..=table.m).collect();
        cfg.histories = (0..=a.max_history).collect();
        cfg.families = Family::ALL.to_vec();
    } else {
        cfg.ms = a.ms.clone().unwrap_or_else(|| vec![table.m]);
        cfg.histories = a.histories.clone();
        cfg.families = a.families.iter().map(|f| Family::parse(f)).collect::<segmeta::Result<_>>()?;
    }
    let report = run_experiment(&table, &cfg)?;
    let mut out = create(&a.out_csv)?;
    report.write_csv(&mut out)?;
    out.flush()?;
    let mut out = create(&a.out_json)?;
    out.write_all(report.to_json()?.as_bytes())?;
    writeln!(out)?;
    out.flush()?;
    for b in &report.best {
        println!(
            "{:>4} {:<14} {:<5} best m={} T={}: {:.4} ± {:.4}",
            b.family.short_name(),
            format!("{:?}", b.task).to_lowercase(),
            b.metric.name(),
            b.m,
            b.history,
            b.mean,
            b.std
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Track(a) => cmd_track(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    }
}
