//! Per-class threshold search maximizing event-based F1.

use std::collections::HashSet;

use log::warn;

use crate::corpus::{PosteriorGrid, StrongEvent};
use crate::decode::{decode_class, ClassThresholds, DecodeConfig};
use crate::error::{Result, SedError};
use crate::eval::{class_f1, match_events, CollarSpec};

pub const FALLBACK_THRESHOLD: f64 = 0.5;

/// 0.05, 0.10, ..., 0.95
pub fn default_grid() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

/// F1 of class `class` over all clips when decoded at `theta`.
pub fn class_f1_at(
    grids: &[PosteriorGrid],
    refs: &[StrongEvent],
    class: usize,
    theta: f64,
    decode: &DecodeConfig,
    collar: &CollarSpec,
) -> Result<f64> {
    let class_refs: Vec<StrongEvent> = refs.iter().filter(|r| r.class == class).cloned().collect();
    class_f1_with_refs(grids, &class_refs, class, theta, decode, collar)
}

fn class_f1_with_refs(
    grids: &[PosteriorGrid],
    class_refs: &[StrongEvent],
    class: usize,
    theta: f64,
    decode: &DecodeConfig,
    collar: &CollarSpec,
) -> Result<f64> {
    let mut ests = Vec::new();
    for g in grids {
        ests.extend(decode_class(g, class, theta, decode)?);
    }
    let counts = match_events(class_refs, &ests, class + 1, collar);
    Ok(class_f1(&counts[class]).f1)
}

/// For each class independently, the grid value with the best F1; ties go to
/// the smallest threshold. Classes without reference events get 0.5.
pub fn tune_thresholds(
    grids: &[PosteriorGrid],
    refs: &[StrongEvent],
    candidates: &[f64],
    n_classes: usize,
    decode: &DecodeConfig,
    collar: &CollarSpec,
) -> Result<ClassThresholds> {
    if candidates.is_empty() {
        return Err(SedError::Config("threshold grid is empty".into()));
    }
    if let Some(t) = candidates.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(SedError::Config(format!("grid value {t} outside (0,1)")));
    }
    decode.validate()?;
    if let Some(g) = grids.iter().find(|g| g.n_classes() != n_classes) {
        return Err(SedError::Shape(format!(
            "grid {} has {} classes, expected {n_classes}",
            g.clip_id,
            g.n_classes()
        )));
    }
    // references for clips without a posterior would count as misses at every threshold alike
    let clips: HashSet<&str> = grids.iter().map(|g| g.clip_id.as_str()).collect();
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut theta = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let class_refs: Vec<StrongEvent> = refs
            .iter()
            .filter(|r| r.class == c && clips.contains(r.clip_id.as_str()))
            .cloned()
            .collect();
        if class_refs.is_empty() {
            warn!("class {c} has no reference events; threshold set to {FALLBACK_THRESHOLD}");
            theta.push(FALLBACK_THRESHOLD);
            continue;
        }
        let mut best = (f64::NEG_INFINITY, sorted[0]);
        for &t in &sorted {
            let f = class_f1_with_refs(grids, &class_refs, c, t, decode, collar)?;
            if f > best.0 {
                best = (f, t);
            }
        }
        theta.push(best.1);
    }
    Ok(ClassThresholds { theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ev(clip: &str, on: f64, off: f64, class: usize) -> StrongEvent {
        StrongEvent {
            clip_id: clip.into(),
            onset: on,
            offset: off,
            class,
        }
    }

    /// One class, 10 frames over 10 s; event at frames 2..=5 carries 0.5,
    /// and frames 7..=8 carry a 0.8 distractor.
    fn constructed() -> (PosteriorGrid, Vec<StrongEvent>) {
        let mut v = Array2::from_elem((10, 1), 0.05f32);
        for t in 2..=5 {
            v[[t, 0]] = 0.5;
        }
        for t in 7..=8 {
            v[[t, 0]] = 0.8;
        }
        let g = PosteriorGrid::new("a", 10.0, v).unwrap();
        (g, vec![ev("a", 2.0, 6.0, 0)])
    }

    #[test]
    fn constructed_optimum() {
        let (g, refs) = constructed();
        let collar = CollarSpec::default();
        let d = DecodeConfig::default();
        let grids = [g];
        // 0.3 finds the event plus the distractor, 0.7 only the distractor
        let f_lo = class_f1_at(&grids, &refs, 0, 0.3, &d, &collar).unwrap();
        let f_hi = class_f1_at(&grids, &refs, 0, 0.7, &d, &collar).unwrap();
        assert_eq!(f_hi, 0.0);
        assert!(f_lo > 0.0);
        let th = tune_thresholds(&grids, &refs, &[0.3, 0.7], 1, &d, &collar).unwrap();
        assert_eq!(th.theta, vec![0.3]);
    }

    #[test]
    fn constructed_perfect_at_point_three() {
        let mut v = Array2::from_elem((10, 1), 0.1f32);
        for t in 3..=6 {
            v[[t, 0]] = 0.5;
        }
        let grids = [PosteriorGrid::new("a", 10.0, v).unwrap()];
        let refs = vec![ev("a", 3.0, 7.0, 0)];
        let d = DecodeConfig::default();
        let c = CollarSpec::default();
        assert_eq!(class_f1_at(&grids, &refs, 0, 0.3, &d, &c).unwrap(), 1.0);
        assert_eq!(class_f1_at(&grids, &refs, 0, 0.7, &d, &c).unwrap(), 0.0);
        let th = tune_thresholds(&grids, &refs, &default_grid(), 1, &d, &c).unwrap();
        // all of 0.15..=0.5 reach F1 = 1; the smallest wins
        assert!((th.theta[0] - 0.15).abs() < 1e-12, "{:?}", th.theta);
    }

    #[test]
    fn reference_free_class_defaults() {
        let (g, refs) = constructed();
        let v = Array2::from_shape_fn((10, 2), |(t, c)| if c == 0 { g.values[[t, 0]] } else { 0.9 });
        let grids = [PosteriorGrid::new("a", 10.0, v).unwrap()];
        let th = tune_thresholds(
            &grids,
            &refs,
            &default_grid(),
            2,
            &DecodeConfig::default(),
            &CollarSpec::default(),
        )
        .unwrap();
        assert_eq!(th.theta[1], FALLBACK_THRESHOLD);
    }

    #[test]
    fn singleton_grid() {
        let (g, refs) = constructed();
        let th = tune_thresholds(&[g], &refs, &[0.5], 1, &DecodeConfig::default(), &CollarSpec::default()).unwrap();
        assert_eq!(th.theta, vec![0.5]);
    }

    #[test]
    fn bad_grid() {
        let (g, refs) = constructed();
        let d = DecodeConfig::default();
        let c = CollarSpec::default();
        assert!(tune_thresholds(std::slice::from_ref(&g), &refs, &[], 1, &d, &c).is_err());
        assert!(tune_thresholds(&[g], &refs, &[0.0, 0.5], 1, &d, &c).is_err());
    }

    #[test]
    fn chosen_threshold_is_argmax_and_independent() {
        let mut s = 5u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        };
        let grids: Vec<PosteriorGrid> = (0..4)
            .map(|i| PosteriorGrid::new(format!("c{i}"), 5.0, Array2::from_shape_fn((25, 3), |_| rnd())).unwrap())
            .collect();
        let refs: Vec<StrongEvent> = (0..4)
            .flat_map(|i| (0..3).map(move |c| ev(&format!("c{i}"), 0.4 * c as f64, 0.4 * c as f64 + 1.0, c)))
            .collect();
        let d = DecodeConfig::default();
        let col = CollarSpec::default();
        let cand = default_grid();
        let th = tune_thresholds(&grids, &refs, &cand, 3, &d, &col).unwrap();
        for c in 0..3 {
            let best = class_f1_at(&grids, &refs, c, th.theta[c], &d, &col).unwrap();
            for &t in &cand {
                assert!(best >= class_f1_at(&grids, &refs, c, t, &d, &col).unwrap());
            }
        }
        // scrambling classes 1 and 2 leaves class 0 alone
        let scrambled: Vec<PosteriorGrid> = grids
            .iter()
            .map(|g| {
                let mut v = g.values.clone();
                for t in 0..25 {
                    v[[t, 1]] = g.values[[24 - t, 2]];
                    v[[t, 2]] = g.values[[(t * 7) % 25, 1]];
                }
                PosteriorGrid::new(g.clip_id.clone(), 5.0, v).unwrap()
            })
            .collect();
        let th2 = tune_thresholds(&scrambled, &refs, &cand, 3, &d, &col).unwrap();
        assert_eq!(th.theta[0], th2.theta[0]);
    }
}
