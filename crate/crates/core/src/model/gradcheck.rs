//! Central-difference check of [`backward`](super::backward).

use ndarray::{Array3, ArrayView1};

use super::{backward, bce_grad, bce_loss, forward, ModelConfig, ModelParams};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences of a loss
/// near 1 carry roughly `1e-16 / FD_STEP = 1e-11` of roundoff, so below this
/// floor gradients are compared by absolute difference.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|, REL_FLOOR)`
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_params: usize,
}

/// Compares the analytic gradient of the class-weighted BCE of one example
/// against central differences over every parameter.
pub fn grad_check(
    cfg: &ModelConfig,
    params: &ModelParams,
    x: &Array3<f64>,
    target: &[f64],
    weights: Option<&[f64]>,
) -> Result<GradCheckReport> {
    let out = forward(cfg, params, x)?;
    let dy = bce_grad(out.clip_scores.as_slice().expect("contiguous"), target, weights);
    let analytic = backward(cfg, params, &out, ArrayView1::from(&dy))?.flatten();
    let base = params.flatten();
    let mut probe = params.clone();
    let mut loss_at = |flat: &[f64]| -> Result<f64> {
        probe.unflatten(flat);
        let o = forward(cfg, &probe, x)?;
        Ok(bce_loss(o.clip_scores.as_slice().expect("contiguous"), target, weights))
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_params: base.len(),
    };
    let mut v = base.clone();
    for i in 0..base.len() {
        v[i] = base[i] + FD_STEP;
        let plus = loss_at(&v)?;
        v[i] = base[i] - FD_STEP;
        let minus = loss_at(&v)?;
        v[i] = base[i];
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if err > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic: a,
                numeric,
                n_params: base.len(),
            };
        }
    }
    Ok(report)
}
