//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Tensors with at most this many entries are checked exhaustively;
    /// larger ones at this many random entries plus their largest-gradient entry.
    pub max_entries: usize,
    /// Denominator floor of the relative error, so entries whose gradient
    /// vanishes are judged on absolute error. Near a LeakyReLU kink the
    /// difference quotient is only good to about 1e-10, which rules out
    /// floors much below 1e-5.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_entries: 48, floor: 1e-5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Agreement good enough to skip the retry steps.
const AGREED: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `grads` against central differences of `loss` around `params`.
///
/// A piecewise-linear activation makes the difference quotient wrong when a
/// perturbation crosses its kink; entries that disagree are retried with
/// steps 10x and 100x smaller and keep the best agreement.
pub fn check_gradients(
    names: &[String],
    params: &[Tensor],
    grads: &[Tensor],
    mut loss: impl FnMut(&[Tensor]) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<Vec<TensorCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for (t, (p, g)) in params.iter().zip(grads).enumerate() {
        let entries: Vec<usize> = if p.len() <= opts.max_entries {
            (0..p.len()).collect()
        } else {
            let mut e = sample(&mut rng, p.len(), opts.max_entries).into_vec();
            let argmax = (0..g.len()).max_by(|&a, &b| g.data()[a].abs().total_cmp(&g.data()[b].abs())).unwrap_or(0);
            e.push(argmax);
            e.sort_unstable();
            e.dedup();
            e
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for &e in &entries {
            let analytic = g.data()[e];
            let mut best = (f64::INFINITY, f64::INFINITY);
            for h in [opts.step, opts.step / 10.0, opts.step / 100.0] {
                let x0 = params[t].data()[e];
                work[t].data_mut()[e] = x0 + h;
                let up = loss(&work)?;
                work[t].data_mut()[e] = x0 - h;
                let down = loss(&work)?;
                work[t].data_mut()[e] = x0;
                let numeric = (up - down) / (2.0 * h);
                let rel = relative_error(analytic, numeric, opts.floor);
                if rel < best.0 {
                    best = (rel, (analytic - numeric).abs());
                }
                if rel < AGREED {
                    break;
                }
            }
            max_rel = max_rel.max(best.0);
            max_abs = max_abs.max(best.1);
        }
        out.push(TensorCheck {
            name: names.get(t).cloned().unwrap_or_else(|| format!("tensor{t}")),
            entries_checked: entries.len(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(out)
}
