//! Mini-batch Adam with early stopping on a validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nn::NnParams;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Runs Adam over `n` training rows. `loss_grad(params, batch)` returns the
/// mean batch loss and its gradient; `val_loss(params)` returns `None` when
/// there is no validation set, which disables early stopping.
///
/// The best parameters seen on validation are restored on exit. Returns the
/// number of epochs run.
pub(crate) fn fit_adam<F, V>(
    params: &mut Vec<f64>,
    n: usize,
    cfg: &NnParams,
    seed: u64,
    mut loss_grad: F,
    mut val_loss: V,
) -> Result<usize>
where
    F: FnMut(&[f64], &[usize]) -> (f64, Vec<f64>),
    V: FnMut(&[f64]) -> Option<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..n).collect();

    let mut best = val_loss(params);
    let mut best_params = params.clone();
    let mut stale = 0;
    let mut epochs = 0;

    for _ in 0..cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = loss_grad(params, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("non-finite training loss at epoch {epochs}")));
            }
            step += 1;
            let c1 = 1.0 - BETA1.powi(step);
            let c2 = 1.0 - BETA2.powi(step);
            for (k, g) in grad.into_iter().enumerate() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                params[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
            }
        }
        if let (Some(b), Some(l)) = (best, val_loss(params)) {
            if !l.is_finite() {
                return Err(Error::Diverged(format!("non-finite validation loss at epoch {epochs}")));
            }
            if l < b {
                best = Some(l);
                best_params.clone_from(params);
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if best.is_some() {
        *params = best_params;
    }
    Ok(epochs)
}
