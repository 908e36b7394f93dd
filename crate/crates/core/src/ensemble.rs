//! Weighted-average fusion of posterior grids.

use ndarray::Array2;

use crate::corpus::PosteriorGrid;
use crate::error::{Result, SedError};

/// Linear interpolation of frame-centre values onto `target` frames.
pub fn resample_frames(values: &Array2<f32>, target: usize) -> Array2<f64> {
    let (t_len, c_len) = values.dim();
    if t_len == target {
        return values.mapv(f64::from);
    }
    let scale = t_len as f64 / target as f64;
    Array2::from_shape_fn((target, c_len), |(s, c)| {
        let u = ((s as f64 + 0.5) * scale - 0.5).clamp(0.0, (t_len - 1) as f64);
        let lo = u.floor() as usize;
        let hi = (lo + 1).min(t_len - 1);
        let frac = u - lo as f64;
        let a = values[[lo, c]] as f64;
        let b = values[[hi, c]] as f64;
        a + frac * (b - a)
    })
}

/// Normalizes the weights, aligns every grid to the finest time resolution
/// and averages.
pub fn fuse(grids: &[PosteriorGrid], weights: &[f64]) -> Result<PosteriorGrid> {
    let first = grids
        .first()
        .ok_or_else(|| SedError::Config("fusion needs at least one grid".into()))?;
    if weights.len() != grids.len() {
        return Err(SedError::Config(format!(
            "{} weights for {} grids",
            weights.len(),
            grids.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(SedError::Config(
            "fusion weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(SedError::Config("fusion weights sum to zero".into()));
    }
    for g in grids {
        if g.clip_id != first.clip_id {
            return Err(SedError::Shape(format!(
                "clip id mismatch: {} vs {}",
                g.clip_id, first.clip_id
            )));
        }
        if g.n_classes() != first.n_classes() {
            return Err(SedError::Shape(format!(
                "class count mismatch for {}: {} vs {}",
                g.clip_id,
                g.n_classes(),
                first.n_classes()
            )));
        }
        if g.clip_duration != first.clip_duration {
            return Err(SedError::Shape(format!(
                "clip duration mismatch for {}: {} vs {}",
                g.clip_id, g.clip_duration, first.clip_duration
            )));
        }
    }
    let target = grids.iter().map(PosteriorGrid::n_frames).max().unwrap_or(1);
    let mut acc = Array2::<f64>::zeros((target, first.n_classes()));
    for (g, &w) in grids.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let aligned = resample_frames(&g.values, target);
        acc.scaled_add(w / total, &aligned);
    }
    let values = acc.mapv(|v| v.clamp(0.0, 1.0) as f32);
    PosteriorGrid::new(first.clip_id.clone(), first.clip_duration, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(t: usize, c: usize, seed: u64) -> PosteriorGrid {
        let mut s = seed;
        PosteriorGrid::new(
            "clip",
            10.0,
            Array2::from_shape_fn((t, c), |_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 40) as f32 / (1u64 << 24) as f32
            }),
        )
        .unwrap()
    }

    #[test]
    fn one_zero_weights_select_first() {
        let a = grid(8, 3, 1);
        let b = grid(8, 3, 2);
        assert_eq!(fuse(&[a.clone(), b], &[1.0, 0.0]).unwrap(), a);
    }

    #[test]
    fn identical_grids_fixed_point() {
        let a = grid(6, 4, 3);
        for w in [[0.3, 0.7], [1.0, 1.0], [5.0, 0.001]] {
            assert_eq!(fuse(&[a.clone(), a.clone()], &w).unwrap(), a);
        }
        assert_eq!(fuse(&[a.clone(), a.clone(), a.clone()], &[1.0; 3]).unwrap(), a);
    }

    #[test]
    fn half_half_is_mean() {
        let a = grid(5, 2, 4);
        let b = grid(5, 2, 5);
        let f = fuse(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
        for ((x, y), z) in a.values.iter().zip(b.values.iter()).zip(f.values.iter()) {
            assert_eq!(*z, ((*x as f64 + *y as f64) / 2.0) as f32);
        }
    }

    #[test]
    fn mismatches_rejected() {
        let a = grid(5, 2, 4);
        let mut b = grid(5, 2, 5);
        b.clip_id = "other".into();
        assert!(fuse(&[a.clone(), b], &[1.0, 1.0]).is_err());
        assert!(fuse(&[a.clone(), grid(5, 3, 1)], &[1.0, 1.0]).is_err());
        assert!(fuse(std::slice::from_ref(&a), &[0.0]).is_err());
        assert!(fuse(std::slice::from_ref(&a), &[-1.0]).is_err());
        assert!(fuse(&[], &[]).is_err());
    }

    #[test]
    fn cross_resolution_alignment() {
        // 120 and 160 frame systems fuse onto 160 frames
        let coarse =
            PosteriorGrid::new("clip", 10.0, Array2::from_shape_fn((120, 1), |(t, _)| t as f32 / 119.0)).unwrap();
        let fine = grid(160, 1, 9);
        let f = fuse(&[coarse, fine], &[1.0, 1.0]).unwrap();
        assert_eq!(f.n_frames(), 160);
        let up = resample_frames(&Array2::from_shape_fn((2, 1), |(t, _)| t as f32), 4);
        assert_eq!(up.column(0).to_vec(), vec![0.0, 0.25, 0.75, 1.0]);
    }

    proptest! {
        #[test]
        fn convex_and_scale_invariant(t1 in 1usize..12, t2 in 1usize..12, s1 in any::<u64>(), s2 in any::<u64>(),
                                      w1 in 0.0f64..5.0, w2 in 0.01f64..5.0, k in 0.01f64..100.0) {
            let a = grid(t1, 3, s1);
            let b = grid(t2, 3, s2);
            let f = fuse(&[a.clone(), b.clone()], &[w1, w2]).unwrap();
            prop_assert!(f.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let g = fuse(&[a.clone(), b.clone()], &[k * w1, k * w2]).unwrap();
            let h = fuse(&[b, a], &[w2, w1]).unwrap();
            for ((x, y), z) in f.values.iter().zip(g.values.iter()).zip(h.values.iter()) {
                prop_assert!((x - y).abs() <= 1e-6);
                prop_assert!((x - z).abs() <= 1e-6);
            }
        }
    }
}
