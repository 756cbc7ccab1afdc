//! Meta models for segment-wise quality prediction.
//!
//! Four families share one train/predict contract: a linear model, gradient
//! boosted trees, a one-hidden-layer network and a single-layer LSTM over
//! the metric history. Each can solve meta classification (`IoU_adj = 0`)
//! or meta regression (`IoU_adj` itself).

mod gbdt;
mod linear;
mod lstm;
mod nn;
mod optim;

use serde::{Deserialize, Serialize};

use crate::dataset::MetaRecord;
use crate::error::{Error, Result};

pub use gbdt::{GbParams, GradientBoosting, Tree, TreeNode};
pub use linear::{LinearModel, LinearParams};
pub use lstm::LstmNet;
pub use nn::{Mlp, NnParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Decision threshold used for accuracy.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    GradientBoosting,
    ShallowNn,
    ShallowLstm,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Linear,
        Family::GradientBoosting,
        Family::ShallowNn,
        Family::ShallowLstm,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Family::Linear => "LR",
            Family::GradientBoosting => "GB",
            Family::ShallowNn => "NN",
            Family::ShallowLstm => "LSTM",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lr" => Ok(Family::Linear),
            "gradient_boosting" | "gb" => Ok(Family::GradientBoosting),
            "shallow_nn" | "nn" => Ok(Family::ShallowNn),
            "shallow_lstm" | "lstm" => Ok(Family::ShallowLstm),
            other => Err(Error::Config(format!("unknown model family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classification" | "cls" => Ok(Task::Classification),
            "regression" | "reg" => Ok(Task::Regression),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub task: Task,
    pub seed: u64,
    #[serde(default)]
    pub linear: LinearParams,
    #[serde(default)]
    pub gb: GbParams,
    /// Shared by the NN and the LSTM.
    #[serde(default)]
    pub nn: NnParams,
}

impl ModelSpec {
    pub fn new(family: Family, task: Task, seed: u64) -> Self {
        Self {
            family,
            task,
            seed,
            linear: LinearParams::default(),
            gb: GbParams::default(),
            nn: NnParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.linear.validate()?;
        self.gb.validate()?;
        self.nn.validate()
    }
}

/// Training or evaluation data: `n` rows of `slots × width` features (slot 0
/// is the current frame) with a presence mask per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub slots: usize,
    pub width: usize,
    pub x: Vec<f64>,
    pub mask: Vec<f64>,
    pub y: Vec<f64>,
}

impl Samples {
    pub fn new(slots: usize, width: usize, x: Vec<f64>, mask: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if slots == 0 || width == 0 {
            return Err(Error::invalid("samples need at least one slot and one feature"));
        }
        if x.len() != n * slots * width || mask.len() != n * slots {
            return Err(Error::invalid("sample buffers disagree with (n, slots, width)"));
        }
        Ok(Self {
            slots,
            width,
            x,
            mask,
            y,
        })
    }

    /// Rows from records with the task's target: the `IoU_adj = 0` indicator
    /// for classification, `IoU_adj` for regression.
    pub fn from_records(records: &[MetaRecord], slots: usize, width: usize, task: Task) -> Result<Self> {
        let mut x = Vec::with_capacity(records.len() * slots * width);
        let mut mask = Vec::with_capacity(records.len() * slots);
        let mut y = Vec::with_capacity(records.len());
        for r in records {
            if r.features.len() != slots * width || r.mask.len() != slots {
                return Err(Error::LayoutMismatch {
                    expected: format!("{slots} slots x {width} features"),
                    found: format!("{} values, {} mask slots", r.features.len(), r.mask.len()),
                });
            }
            x.extend_from_slice(&r.features);
            mask.extend(r.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }));
            y.push(match task {
                Task::Classification => r.label() as u8 as f64,
                Task::Regression => r.iou_adj,
            });
        }
        Self::new(slots, width, x, mask, y)
    }

    /// Single-slot samples from a plain row-major matrix.
    pub fn from_matrix(width: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(1, width, x, vec![1.0; n], y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Width of the flattened row used by non-recurrent models.
    pub fn flat_width(&self) -> usize {
        self.slots * self.width + self.slots
    }

    /// Features of all slots followed by the mask.
    pub fn flat_row(&self, i: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.flat_width());
        row.extend_from_slice(self.features(i));
        row.extend_from_slice(&self.mask[i * self.slots..(i + 1) * self.slots]);
        row
    }

    pub fn features(&self, i: usize) -> &[f64] {
        let k = self.slots * self.width;
        &self.x[i * k..(i + 1) * k]
    }

    pub fn slot(&self, i: usize, s: usize) -> &[f64] {
        let start = (i * self.slots + s) * self.width;
        &self.x[start..start + self.width]
    }

    pub fn present(&self, i: usize, s: usize) -> bool {
        self.mask[i * self.slots + s] != 0.0
    }

    /// Keeps only the listed feature columns in every slot.
    pub fn select_features(&self, columns: &[usize]) -> Result<Self> {
        if columns.iter().any(|&c| c >= self.width) || columns.is_empty() {
            return Err(Error::invalid("feature selection out of range"));
        }
        let mut x = Vec::with_capacity(self.len() * self.slots * columns.len());
        for i in 0..self.len() {
            for s in 0..self.slots {
                let slot = self.slot(i, s);
                x.extend(columns.iter().map(|&c| slot[c]));
            }
        }
        Self::new(self.slots, columns.len(), x, self.mask.clone(), self.y.clone())
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let k = self.slots * self.width;
        let mut x = Vec::with_capacity(rows.len() * k);
        let mut mask = Vec::with_capacity(rows.len() * self.slots);
        let mut y = Vec::with_capacity(rows.len());
        for &i in rows {
            x.extend_from_slice(&self.x[i * k..(i + 1) * k]);
            mask.extend_from_slice(&self.mask[i * self.slots..(i + 1) * self.slots]);
            y.push(self.y[i]);
        }
        Self {
            slots: self.slots,
            width: self.width,
            x,
            mask,
            y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub slots: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epochs for the networks, boosting rounds kept for GB, iterations for
    /// logistic regression, 1 for the closed-form least squares fit.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearModel),
    GradientBoosting(GradientBoosting),
    ShallowNn(Mlp),
    ShallowLstm(LstmNet),
}

/// A fitted meta model. Prediction is a pure function of the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub family: Family,
    pub task: Task,
    pub layout: Layout,
    pub meta: TrainingMeta,
    pub params: ModelParams,
}

pub fn train(spec: &ModelSpec, train: &Samples, val: &Samples) -> Result<TrainedModel> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if !val.is_empty() && (val.slots != train.slots || val.width != train.width) {
        return Err(Error::LayoutMismatch {
            expected: format!("{}x{}", train.slots, train.width),
            found: format!("{}x{}", val.slots, val.width),
        });
    }
    let (params, iterations) = match spec.family {
        Family::Linear => {
            let (m, it) = linear::train_linear(train, spec.task, &spec.linear)?;
            (ModelParams::Linear(m), it)
        }
        Family::GradientBoosting => {
            let m = gbdt::train_gb(train, val, spec.task, &spec.gb)?;
            let rounds = m.trees.len();
            (ModelParams::GradientBoosting(m), rounds)
        }
        Family::ShallowNn => {
            let (m, epochs) = nn::train_nn(train, val, spec.task, &spec.nn, spec.seed)?;
            (ModelParams::ShallowNn(m), epochs)
        }
        Family::ShallowLstm => {
            let (m, epochs) = lstm::train_lstm(train, val, spec.task, &spec.nn, spec.seed)?;
            (ModelParams::ShallowLstm(m), epochs)
        }
    };
    Ok(TrainedModel {
        version: MODEL_FORMAT_VERSION,
        family: spec.family,
        task: spec.task,
        layout: Layout {
            slots: train.slots,
            width: train.width,
        },
        meta: TrainingMeta {
            seed: spec.seed,
            iterations,
        },
        params,
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps a raw model output to the task's score range.
pub(crate) fn finish(task: Task, raw: f64, raw_is_logit: bool) -> f64 {
    match task {
        Task::Classification if raw_is_logit => sigmoid(raw),
        Task::Classification => raw.clamp(0.0, 1.0),
        Task::Regression => raw.clamp(0.0, 1.0),
    }
}

impl TrainedModel {
    /// Classification: probability of `IoU_adj = 0`. Regression: predicted
    /// `IoU_adj` clamped to `[0, 1]`.
    pub fn predict(&self, samples: &Samples) -> Result<Vec<f64>> {
        if samples.slots != self.layout.slots || samples.width != self.layout.width {
            return Err(Error::LayoutMismatch {
                expected: format!("{} slots x {} features", self.layout.slots, self.layout.width),
                found: format!("{} slots x {} features", samples.slots, samples.width),
            });
        }
        Ok((0..samples.len()).map(|i| self.predict_row(samples, i)).collect())
    }

    fn predict_row(&self, samples: &Samples, i: usize) -> f64 {
        let raw = match &self.params {
            ModelParams::Linear(m) => m.raw(&samples.flat_row(i)),
            ModelParams::GradientBoosting(m) => m.raw(&samples.flat_row(i)),
            ModelParams::ShallowNn(m) => m.raw(&samples.flat_row(i)),
            ModelParams::ShallowLstm(m) => m.raw(samples, i),
        };
        finish(self.task, raw, true)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", model.version)));
        }
        Ok(model)
    }
}
