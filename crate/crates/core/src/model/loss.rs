//! Class-weighted binary cross-entropy on clip scores.

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

fn weight(weights: Option<&[f64]>, c: usize) -> f64 {
    weights.map_or(1.0, |w| w[c])
}

/// `-sum_c w_c [t ln y + (1 - t) ln(1 - y)] / C`
pub fn bce_loss(y: &[f64], target: &[f64], weights: Option<&[f64]>) -> f64 {
    debug_assert_eq!(y.len(), target.len());
    let n = y.len().max(1) as f64;
    let mut total = 0.0;
    for (c, (&p, &t)) in y.iter().zip(target).enumerate() {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total -= weight(weights, c) * (t * p.ln() + (1.0 - t) * (1.0 - p).ln());
    }
    total / n
}

/// dL/dy; zero wherever the clamp is active.
pub fn bce_grad(y: &[f64], target: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    debug_assert_eq!(y.len(), target.len());
    let n = y.len().max(1) as f64;
    y.iter()
        .zip(target)
        .enumerate()
        .map(|(c, (&p, &t))| {
            if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                0.0
            } else {
                -weight(weights, c) * (t / p - (1.0 - t) / (1.0 - p)) / n
            }
        })
        .collect()
}
