//! Single-layer LSTM over the metric history with a dense head on the last
//! hidden state.
//!
//! Slots are fed oldest first. A slot whose mask is 0 is skipped: hidden and
//! cell state pass through unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{output_loss, NnParams};
use super::optim::fit_adam;
use super::{sigmoid, Samples, Task};
use crate::error::Result;

/// Flat layout: `W (4H × I)`, `U (4H × H)`, `b (4H)`, `v (H)`, `c`.
/// Gate blocks are ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNet {
    pub input: usize,
    pub hidden: usize,
    pub task: Task,
    pub params: Vec<f64>,
}

struct Offsets {
    u: usize,
    b: usize,
    v: usize,
    c: usize,
}

impl LstmNet {
    pub fn new(input: usize, hidden: usize, task: Task, seed: u64, zero_init: bool) -> Self {
        let h4 = 4 * hidden;
        let mut params = vec![0.0; h4 * input + h4 * hidden + h4 + hidden + 1];
        let net = Self {
            input,
            hidden,
            task,
            params: Vec::new(),
        };
        let o = net.offsets();
        if !zero_init {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = 1.0 / (hidden as f64).sqrt();
            for w in &mut params[..o.b] {
                *w = rng.random_range(-a..a);
            }
            let av = (6.0 / (hidden + 1) as f64).sqrt();
            for w in &mut params[o.v..o.c] {
                *w = rng.random_range(-av..av);
            }
            for w in &mut params[o.b + hidden..o.b + 2 * hidden] {
                *w = 1.0;
            }
        }
        Self { params, ..net }
    }

    fn offsets(&self) -> Offsets {
        let h4 = 4 * self.hidden;
        let u = h4 * self.input;
        let b = u + h4 * self.hidden;
        let v = b + h4;
        Offsets { u, b, v, c: v + self.hidden }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn raw(&self, samples: &Samples, i: usize) -> f64 {
        self.run(&self.params, samples, i, None)
    }

    pub fn loss(&self, samples: &Samples, rows: &[usize]) -> f64 {
        self.batch(&self.params, samples, rows, false).0
    }

    pub fn loss_and_gradient(&self, samples: &Samples, rows: &[usize]) -> (f64, Vec<f64>) {
        self.batch(&self.params, samples, rows, true)
    }

    /// Forward pass; with `cache` set, records every executed step.
    fn run(&self, params: &[f64], s: &Samples, i: usize, mut cache: Option<&mut Vec<Step>>) -> f64 {
        let (ni, nh) = (self.input, self.hidden);
        let o = self.offsets();
        let mut h = vec![0.0; nh];
        let mut c = vec![0.0; nh];
        let mut z = vec![0.0; 4 * nh];
        for slot in (0..s.slots).rev() {
            if !s.present(i, slot) {
                continue;
            }
            let x = s.slot(i, slot);
            for (r, zr) in z.iter_mut().enumerate() {
                let wx: f64 = params[r * ni..(r + 1) * ni].iter().zip(x).map(|(a, b)| a * b).sum();
                let uh: f64 = params[o.u + r * nh..o.u + (r + 1) * nh].iter().zip(&h).map(|(a, b)| a * b).sum();
                *zr = wx + uh + params[o.b + r];
            }
            let mut step = Step {
                x: x.to_vec(),
                h_prev: h.clone(),
                c_prev: c.clone(),
                gates: vec![0.0; 4 * nh],
                tanh_c: vec![0.0; nh],
            };
            for k in 0..nh {
                let ig = sigmoid(z[k]);
                let fg = sigmoid(z[nh + k]);
                let gg = z[2 * nh + k].tanh();
                let og = sigmoid(z[3 * nh + k]);
                c[k] = fg * c[k] + ig * gg;
                let tc = c[k].tanh();
                h[k] = og * tc;
                step.gates[k] = ig;
                step.gates[nh + k] = fg;
                step.gates[2 * nh + k] = gg;
                step.gates[3 * nh + k] = og;
                step.tanh_c[k] = tc;
            }
            if let Some(cache) = cache.as_deref_mut() {
                cache.push(step);
            }
        }
        params[o.c] + params[o.v..o.c].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
    }

    fn batch(&self, params: &[f64], s: &Samples, rows: &[usize], want_grad: bool) -> (f64, Vec<f64>) {
        let (ni, nh) = (self.input, self.hidden);
        let o = self.offsets();
        let mut grad = if want_grad { vec![0.0; params.len()] } else { Vec::new() };
        let mut total = 0.0;
        let mut steps = Vec::new();
        for &i in rows {
            steps.clear();
            let out = self.run(params, s, i, want_grad.then_some(&mut steps));
            let (l, d) = output_loss(self.task, out, s.y[i]);
            total += l;
            if !want_grad {
                continue;
            }
            grad[o.c] += d;
            let mut dh: Vec<f64> = params[o.v..o.c].iter().map(|v| d * v).collect();
            if let Some(last) = steps.last() {
                for k in 0..nh {
                    grad[o.v + k] += d * last.gates[3 * nh + k] * last.tanh_c[k];
                }
            }
            let mut dc = vec![0.0; nh];
            let mut da = vec![0.0; 4 * nh];
            for st in steps.iter().rev() {
                for k in 0..nh {
                    let (ig, fg, gg, og) = (st.gates[k], st.gates[nh + k], st.gates[2 * nh + k], st.gates[3 * nh + k]);
                    let tc = st.tanh_c[k];
                    let dct = dc[k] + dh[k] * og * (1.0 - tc * tc);
                    da[k] = dct * gg * ig * (1.0 - ig);
                    da[nh + k] = dct * st.c_prev[k] * fg * (1.0 - fg);
                    da[2 * nh + k] = dct * ig * (1.0 - gg * gg);
                    da[3 * nh + k] = dh[k] * tc * og * (1.0 - og);
                    dc[k] = dct * fg;
                }
                let mut dh_prev = vec![0.0; nh];
                for (r, &dar) in da.iter().enumerate() {
                    if dar == 0.0 {
                        continue;
                    }
                    for (g, xv) in grad[r * ni..(r + 1) * ni].iter_mut().zip(&st.x) {
                        *g += dar * xv;
                    }
                    let urow = o.u + r * nh;
                    for k in 0..nh {
                        grad[urow + k] += dar * st.h_prev[k];
                        dh_prev[k] += dar * params[urow + k];
                    }
                    grad[o.b + r] += dar;
                }
                dh = dh_prev;
            }
        }
        let n = rows.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }
}

struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub(crate) fn train_lstm(train: &Samples, val: &Samples, task: Task, cfg: &NnParams, seed: u64) -> Result<(LstmNet, usize)> {
    let mut net = LstmNet::new(train.width, cfg.hidden, task, seed, cfg.zero_init);
    let mut params = std::mem::take(&mut net.params);
    let val_rows: Vec<usize> = (0..val.len()).collect();
    let epochs = fit_adam(
        &mut params,
        train.len(),
        cfg,
        seed,
        |theta, rows| net.batch(theta, train, rows, true),
        |theta| (!val.is_empty()).then(|| net.batch(theta, val, &val_rows, false).0),
    )?;
    net.params = params;
    Ok((net, epochs))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Label is the sign of the oldest slot's feature; later slots are noise.
    fn memory_task(n: usize, slots: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let mut row = vec![0.0; slots];
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            y.push((row[slots - 1] > 0.0) as u8 as f64);
            x.extend(row);
        }
        Samples::new(slots, 1, x, vec![1.0; n * slots], y).unwrap()
    }

    #[test]
    fn remembers_the_oldest_step() {
        let train = memory_task(400, 5, 1);
        let test = memory_task(200, 5, 2);
        let cfg = NnParams {
            hidden: 8,
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 150,
            ..Default::default()
        };
        let empty = Samples::new(5, 1, vec![], vec![], vec![]).unwrap();
        let (net, _) = train_lstm(&train, &empty, Task::Classification, &cfg, 3).unwrap();
        let acc = (0..test.len())
            .filter(|&i| (sigmoid(net.raw(&test, i)) >= 0.5) == (test.y[i] == 1.0))
            .count() as f64
            / test.len() as f64;
        assert!(acc > 0.9, "{acc}");
    }

    #[test]
    fn masked_slots_are_skipped() {
        let net = LstmNet::new(2, 3, Task::Regression, 5, false);
        let a = Samples::new(3, 2, vec![9.0, 9.0, 0.5, -0.5, 0.1, 0.2], vec![1.0, 1.0, 0.0], vec![0.0]).unwrap();
        let b = Samples::new(2, 2, vec![9.0, 9.0, 0.5, -0.5], vec![1.0, 1.0], vec![0.0]).unwrap();
        assert_eq!(net.raw(&a, 0), net.raw(&b, 0));
    }
}
