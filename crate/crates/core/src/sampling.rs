//! Class-balanced epoch planning, inverse-frequency loss weights and mixup.

use log::warn;
use ndarray::Array3;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::corpus::WeakLabel;
use crate::error::{Result, SedError};

/// Dataset indices for one epoch, with the class each pick was drawn for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub order: Vec<usize>,
    pub pick_classes: Vec<usize>,
}

impl EpochPlan {
    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &c in &self.pick_classes {
            counts[c] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupConfig {
    pub alpha: f64,
    pub enabled: bool,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            alpha: 0.2,
            enabled: true,
        }
    }
}

/// Clips containing each class.
pub fn class_members(labels: &[WeakLabel], n_classes: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); n_classes];
    for (i, l) in labels.iter().enumerate() {
        for &c in &l.classes {
            members[c].push(i);
        }
    }
    members
}

/// Per-class quota `min(n_c, floor(cap * m))`, `m` the smallest non-empty class.
/// Absent classes get a zero quota.
pub fn class_quotas(members: &[Vec<usize>], cap: f64) -> Vec<usize> {
    let Some(m) = members.iter().map(Vec::len).filter(|&n| n > 0).min() else {
        return vec![0; members.len()];
    };
    let limit = (cap * m as f64).floor() as usize;
    members.iter().map(|v| v.len().min(limit)).collect()
}

/// Each class contributes `quota_c` picks drawn without replacement from its
/// clips; the picks are then shuffled together. A multi-label clip may be
/// picked once per class it carries.
pub fn plan_epoch(labels: &[WeakLabel], n_classes: usize, cap: f64, rng: &mut impl Rng) -> Result<EpochPlan> {
    if cap.is_nan() || cap < 1.0 {
        return Err(SedError::Config(format!("balance cap must be >= 1, got {cap}")));
    }
    let members = class_members(labels, n_classes);
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            warn!("class {c} has no training clips; skipped by the sampler");
        }
    }
    let unlabeled = labels.iter().filter(|l| l.classes.is_empty()).count();
    if unlabeled > 0 {
        warn!("{unlabeled} clips carry no class and are never sampled");
    }
    let quotas = class_quotas(&members, cap);
    let mut picks = Vec::with_capacity(quotas.iter().sum());
    for (c, (pool, &q)) in members.iter().zip(&quotas).enumerate() {
        for j in index::sample(rng, pool.len(), q) {
            picks.push((pool[j], c));
        }
    }
    picks.shuffle(rng);
    let (order, pick_classes) = picks.into_iter().unzip();
    Ok(EpochPlan { order, pick_classes })
}

/// `w_c = (sum_k n_k / C) / n_c` over the classes present; absent classes get weight 1.
pub fn class_weights(labels: &[WeakLabel], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for l in labels {
        for &c in &l.classes {
            counts[c] += 1;
        }
    }
    let present = counts.iter().filter(|&&n| n > 0).count();
    if present == 0 {
        return vec![1.0; n_classes];
    }
    let mean = counts.iter().sum::<usize>() as f64 / present as f64;
    counts
        .iter()
        .map(|&n| if n == 0 { 1.0 } else { mean / n as f64 })
        .collect()
}

/// One training example as seen by mixup: features plus soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MixItem {
    pub x: Array3<f32>,
    pub y: Vec<f64>,
}

/// Partner indices (a permutation of the batch) and one lambda per item.
#[derive(Debug, Clone, PartialEq)]
pub struct MixDraw {
    pub partners: Vec<usize>,
    pub lambdas: Vec<f64>,
}

pub fn draw_mixup(batch_len: usize, cfg: &MixupConfig, rng: &mut impl Rng) -> Result<MixDraw> {
    if cfg.alpha.is_nan() || cfg.alpha <= 0.0 {
        return Err(SedError::Config(format!(
            "mixup alpha must be positive, got {}",
            cfg.alpha
        )));
    }
    let beta = Beta::new(cfg.alpha, cfg.alpha).map_err(|e| SedError::Config(e.to_string()))?;
    let mut partners: Vec<usize> = (0..batch_len).collect();
    partners.shuffle(rng);
    let lambdas = (0..batch_len).map(|_| beta.sample(rng)).collect();
    Ok(MixDraw { partners, lambdas })
}

fn mix_value(lambda: f64, a: f64, b: f64) -> f64 {
    if lambda == 1.0 {
        a
    } else if lambda == 0.0 {
        b
    } else {
        lambda * a + (1.0 - lambda) * b
    }
}

/// `x' = lambda x_i + (1 - lambda) x_j`, `y' = lambda y_i + (1 - lambda) y_j`.
pub fn apply_mixup(batch: &[MixItem], draw: &MixDraw) -> Result<Vec<MixItem>> {
    if draw.partners.len() != batch.len() || draw.lambdas.len() != batch.len() {
        return Err(SedError::Shape("mixup draw does not match batch size".into()));
    }
    if let Some(first) = batch.first() {
        if let Some(bad) = batch
            .iter()
            .find(|b| b.x.dim() != first.x.dim() || b.y.len() != first.y.len())
        {
            return Err(SedError::Shape(format!(
                "mixup batch items differ: {:?}/{} vs {:?}/{}",
                bad.x.dim(),
                bad.y.len(),
                first.x.dim(),
                first.y.len()
            )));
        }
    }
    Ok(batch
        .iter()
        .zip(draw.partners.iter().zip(&draw.lambdas))
        .map(|(item, (&j, &lambda))| {
            let other = &batch[j];
            let mut x = item.x.clone();
            x.zip_mut_with(&other.x, |a, &b| *a = mix_value(lambda, *a as f64, b as f64) as f32);
            let y = item
                .y
                .iter()
                .zip(&other.y)
                .map(|(&a, &b)| mix_value(lambda, a, b))
                .collect();
            MixItem { x, y }
        })
        .collect())
}

/// Draws partners and lambdas, then mixes. Disabled mixup returns the batch unchanged.
pub fn mixup(batch: &[MixItem], cfg: &MixupConfig, rng: &mut impl Rng) -> Result<Vec<MixItem>> {
    if !cfg.enabled {
        return Ok(batch.to_vec());
    }
    let draw = draw_mixup(batch.len(), cfg, rng)?;
    apply_mixup(batch, &draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn label(c: &[usize]) -> WeakLabel {
        WeakLabel {
            clip_id: String::new(),
            classes: c.iter().copied().collect(),
        }
    }

    fn sized(sizes: &[usize]) -> Vec<WeakLabel> {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |_| label(&[c])))
            .collect()
    }

    #[test]
    fn symmetric_classes_are_a_permutation() {
        let labels = sized(&[7, 7, 7]);
        let plan = plan_epoch(&labels, 3, 6.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut order = plan.order.clone();
        order.sort();
        assert_eq!(order, (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn cap_of_six() {
        let labels = sized(&[1000, 50]);
        let plan = plan_epoch(&labels, 2, 6.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(plan.class_counts(2), vec![300, 50]);
        // picks for the big class are distinct clips
        let mut big: Vec<_> = plan
            .order
            .iter()
            .zip(&plan.pick_classes)
            .filter(|(_, &c)| c == 0)
            .map(|(&i, _)| i)
            .collect();
        big.sort();
        big.dedup();
        assert_eq!(big.len(), 300);
    }

    #[test]
    fn absent_class_skipped() {
        let labels = sized(&[4, 0, 10]);
        let plan = plan_epoch(&labels, 3, 2.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(plan.class_counts(3), vec![4, 0, 8]);
        let empty = plan_epoch(&[], 3, 6.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(empty.order.is_empty());
        assert!(plan_epoch(&labels, 3, 0.5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn same_seed_same_plan() {
        let labels = sized(&[30, 5, 12]);
        let a = plan_epoch(&labels, 3, 6.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = plan_epoch(&labels, 3, 6.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weights_formula() {
        assert_eq!(class_weights(&sized(&[5, 5, 5]), 3), vec![1.0; 3]);
        let w = class_weights(&sized(&[10, 30]), 2);
        assert_eq!(w[0], 2.0);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    fn item(v: f32, y: f64) -> MixItem {
        MixItem {
            x: Array3::from_shape_fn((3, 2, 2), |(a, b, c)| v + (a * 4 + b * 2 + c) as f32 - 5.0),
            y: vec![y, 1.0 - y],
        }
    }

    #[test]
    fn lambda_one_is_identity_bitwise() {
        let mut batch = vec![item(0.25, 1.0), item(-3.0, 0.0), item(7.5, 0.0)];
        batch[0].x[[0, 0, 0]] = -0.0;
        let draw = MixDraw {
            partners: vec![2, 0, 1],
            lambdas: vec![1.0; 3],
        };
        let out = apply_mixup(&batch, &draw).unwrap();
        for (a, b) in out.iter().zip(&batch) {
            assert!(a.x.iter().zip(b.x.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn lambda_half_same_items() {
        let batch = vec![item(1.5, 0.5), item(1.5, 0.5)];
        let draw = MixDraw {
            partners: vec![1, 0],
            lambdas: vec![0.5, 0.5],
        };
        let out = apply_mixup(&batch, &draw).unwrap();
        assert_eq!(out, batch);
    }

    #[test]
    fn shape_mismatch() {
        let mut b = vec![item(0.0, 1.0), item(0.0, 1.0)];
        b[1].y.push(0.0);
        assert!(mixup(&b, &MixupConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn lambda_mean_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let d = draw_mixup(10_000, &MixupConfig::default(), &mut rng).unwrap();
        let mean = d.lambdas.iter().sum::<f64>() / 1e4;
        assert!((mean - 0.5).abs() <= 0.02, "mean {mean}");
        // Beta(0.2, 0.2) is U-shaped: most mass near the ends
        let ends = d.lambdas.iter().filter(|&&l| !(0.1..=0.9).contains(&l)).count();
        assert!(ends > 5000);
    }

    fn random_labels(masks: &[u8], n_classes: usize) -> Vec<WeakLabel> {
        masks
            .iter()
            .map(|m| label(&(0..n_classes).filter(|c| m & (1 << c) != 0).collect::<Vec<_>>()))
            .collect()
    }

    proptest! {
        #[test]
        fn plan_respects_cap(masks in proptest::collection::vec(1u8..32, 1..80), cap in 1.0f64..8.0, seed in any::<u64>()) {
            let labels = random_labels(&masks, 5);
            let plan = plan_epoch(&labels, 5, cap, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let counts = plan.class_counts(5);
            // independent recount of quotas
            let n: Vec<usize> = (0..5).map(|c| masks.iter().filter(|m| *m & (1 << c) != 0).count()).collect();
            let m = n.iter().copied().filter(|&v| v > 0).min().unwrap();
            for c in 0..5 {
                prop_assert_eq!(counts[c], n[c].min((cap * m as f64).floor() as usize));
            }
            for &a in &counts {
                for &b in counts.iter().filter(|&&b| b > 0) {
                    prop_assert!(a as f64 / b as f64 <= cap);
                }
            }
            for (&i, &c) in plan.order.iter().zip(&plan.pick_classes) {
                prop_assert!(labels[i].classes.contains(&c));
            }
        }

        #[test]
        fn weights_match_formula(counts in proptest::collection::vec(1usize..50, 1..8)) {
            let labels = sized(&counts);
            let w = class_weights(&labels, counts.len());
            let total: usize = counts.iter().sum();
            for (c, &n) in counts.iter().enumerate() {
                let direct = (total as f64 / counts.len() as f64) / n as f64;
                prop_assert!((w[c] - direct).abs() < 1e-12);
            }
        }

        #[test]
        fn mixup_is_convex(vals in proptest::collection::vec((-10.0f32..10.0, 0.0f64..1.0), 2..6), seed in any::<u64>()) {
            let batch: Vec<MixItem> = vals.iter().map(|&(v, y)| item(v, y)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draw = draw_mixup(batch.len(), &MixupConfig::default(), &mut rng).unwrap();
            let out = apply_mixup(&batch, &draw).unwrap();
            for (i, o) in out.iter().enumerate() {
                let p = &batch[draw.partners[i]];
                for ((&m, &a), &b) in o.x.iter().zip(batch[i].x.iter()).zip(p.x.iter()) {
                    prop_assert!(m >= a.min(b) - 1e-5 && m <= a.max(b) + 1e-5);
                }
                for &y in &o.y {
                    prop_assert!((0.0..=1.0).contains(&y));
                }
            }
            let again = apply_mixup(&batch, &draw_mixup(batch.len(), &MixupConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()).unwrap();
            prop_assert_eq!(out, again);
        }
    }
}
