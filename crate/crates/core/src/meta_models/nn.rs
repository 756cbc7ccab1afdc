//! One-hidden-layer ReLU network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::fit_adam;
use super::{sigmoid, Samples, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// All weights start at zero instead of the seeded random init.
    #[serde(default)]
    pub zero_init: bool,
}

impl Default for NnParams {
    fn default() -> Self {
        Self {
            hidden: 50,
            learning_rate: 1e-3,
            batch_size: 256,
            patience: 20,
            max_epochs: 300,
            zero_init: false,
        }
    }
}

impl NnParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !(self.learning_rate > 0.0) || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "nn: hidden, learning_rate, batch_size and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss on one raw output and its derivative: logistic loss on a logit for
/// classification, half squared error for regression.
pub(crate) fn output_loss(task: Task, out: f64, y: f64) -> (f64, f64) {
    match task {
        Task::Classification => (
            out.max(0.0) - out * y + (-out.abs()).exp().ln_1p(),
            sigmoid(out) - y,
        ),
        Task::Regression => (0.5 * (out - y) * (out - y), out - y),
    }
}

/// Parameters live in one flat vector: `W1 (hidden × input)`, `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub task: Task,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, task: Task, seed: u64, zero_init: bool) -> Self {
        let mut params = vec![0.0; hidden * input + 2 * hidden + 1];
        if !zero_init {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a1 = (6.0 / input as f64).sqrt();
            for w in &mut params[..hidden * input] {
                *w = rng.random_range(-a1..a1);
            }
            let a2 = (6.0 / (hidden + 1) as f64).sqrt();
            let off = hidden * input + hidden;
            for w in &mut params[off..off + hidden] {
                *w = rng.random_range(-a2..a2);
            }
        }
        Self {
            input,
            hidden,
            task,
            params,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn raw(&self, row: &[f64]) -> f64 {
        forward(self.input, self.hidden, &self.params, row, None)
    }

    /// Mean loss over `rows` of `samples` (flattened features plus mask).
    pub fn loss(&self, samples: &Samples, rows: &[usize]) -> f64 {
        let (x, p) = flatten(samples);
        batch(self, &self.params, &x, p, &samples.y, rows, false).0
    }

    pub fn loss_and_gradient(&self, samples: &Samples, rows: &[usize]) -> (f64, Vec<f64>) {
        let (x, p) = flatten(samples);
        batch(self, &self.params, &x, p, &samples.y, rows, true)
    }
}

fn flatten(samples: &Samples) -> (Vec<f64>, usize) {
    let p = samples.flat_width();
    let mut x = Vec::with_capacity(samples.len() * p);
    for i in 0..samples.len() {
        x.extend(samples.flat_row(i));
    }
    (x, p)
}

/// Forward pass; with `grad` set, stores the hidden pre-activations there.
fn forward(input: usize, hidden: usize, params: &[f64], row: &[f64], mut pre: Option<&mut Vec<f64>>) -> f64 {
    let (w1, rest) = params.split_at(hidden * input);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden);
    let mut out = b2[0];
    if let Some(p) = pre.as_deref_mut() {
        p.clear();
    }
    for j in 0..hidden {
        let a = b1[j] + w1[j * input..(j + 1) * input].iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
        if let Some(p) = pre.as_deref_mut() {
            p.push(a);
        }
        out += w2[j] * a.max(0.0);
    }
    out
}

fn batch(net: &Mlp, params: &[f64], x: &[f64], p: usize, y: &[f64], rows: &[usize], want_grad: bool) -> (f64, Vec<f64>) {
    let (input, hidden) = (net.input, net.hidden);
    let mut grad = if want_grad { vec![0.0; params.len()] } else { Vec::new() };
    let mut pre = Vec::with_capacity(hidden);
    let mut total = 0.0;
    let off_b1 = hidden * input;
    let off_w2 = off_b1 + hidden;
    let off_b2 = off_w2 + hidden;
    for &i in rows {
        let row = &x[i * p..(i + 1) * p];
        let out = forward(input, hidden, params, row, Some(&mut pre));
        let (l, d) = output_loss(net.task, out, y[i]);
        total += l;
        if !want_grad {
            continue;
        }
        grad[off_b2] += d;
        for j in 0..hidden {
            let a = pre[j];
            if a > 0.0 {
                grad[off_w2 + j] += d * a;
                let da = d * params[off_w2 + j];
                grad[off_b1 + j] += da;
                for (g, xv) in grad[j * input..(j + 1) * input].iter_mut().zip(row) {
                    *g += da * xv;
                }
            }
        }
    }
    let n = rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

pub(crate) fn train_nn(train: &Samples, val: &Samples, task: Task, cfg: &NnParams, seed: u64) -> Result<(Mlp, usize)> {
    let (xt, p) = flatten(train);
    let (xv, _) = flatten(val);
    let mut net = Mlp::new(p, cfg.hidden, task, seed, cfg.zero_init);
    let mut params = std::mem::take(&mut net.params);
    let val_rows: Vec<usize> = (0..val.len()).collect();
    let epochs = fit_adam(
        &mut params,
        train.len(),
        cfg,
        seed,
        |theta, rows| batch(&net, theta, &xt, p, &train.y, rows, true),
        |theta| (!val.is_empty()).then(|| batch(&net, theta, &xv, p, &val.y, &val_rows, false).0),
    )?;
    net.params = params;
    Ok((net, epochs))
}
