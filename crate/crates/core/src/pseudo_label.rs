//! Tiered weak labels for unlabeled clips from external tagging scores.
//!
//! A clip is accepted when its best class scores at least `t1`. The second
//! best class joins if it scores at least `t2`, and the third only if the
//! second joined and it scores at least `t3`. Labels never exceed three
//! classes; rejected clips are dropped from the extended set.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use crate::corpus::{TagScores, WeakLabel};
use crate::error::{Result, SedError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierThresholds {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl TierThresholds {
    pub fn new(t1: f64, t2: f64, t3: f64) -> Result<Self> {
        let th = TierThresholds { t1, t2, t3 };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        let TierThresholds { t1, t2, t3 } = *self;
        if !(1.0 >= t1 && t1 >= t2 && t2 >= t3 && t3 >= 0.0) {
            return Err(SedError::Config(format!(
                "tier thresholds must satisfy 1 >= t1 >= t2 >= t3 >= 0, got ({t1}, {t2}, {t3})"
            )));
        }
        Ok(())
    }
}

impl Default for TierThresholds {
    fn default() -> Self {
        TierThresholds {
            t1: 0.99,
            t2: 0.47,
            t3: 0.28,
        }
    }
}

/// Counts of clips by label-set size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelDistribution {
    pub total: usize,
    pub one_type: usize,
    pub two_type: usize,
    pub three_type: usize,
    pub four_plus: usize,
    pub none: usize,
}

impl LabelDistribution {
    pub fn tally<'a>(labels: impl IntoIterator<Item = &'a WeakLabel>) -> Self {
        let mut d = LabelDistribution::default();
        for l in labels {
            d.total += 1;
            match l.classes.len() {
                0 => d.none += 1,
                1 => d.one_type += 1,
                2 => d.two_type += 1,
                3 => d.three_type += 1,
                _ => d.four_plus += 1,
            }
        }
        d
    }

    pub const HEADER: &'static str = "Dataset\tTotal\t1-type\t2-type\t3-type\t4-type\tnone";

    /// One tab-separated row under [`Self::HEADER`].
    pub fn row(&self, name: &str) -> String {
        format!(
            "{name}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.total, self.one_type, self.two_type, self.three_type, self.four_plus, self.none
        )
    }
}

/// Dataset name of the form `wt-t1-t2-t3`.
pub struct DatasetName<'a>(pub &'a str, pub Option<TierThresholds>);

impl fmt::Display for DatasetName<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)?;
        if let Some(th) = self.1 {
            write!(f, "-{}-{}-{}", th.t1, th.t2, th.t3)?;
        }
        Ok(())
    }
}

/// Returns `None` when the clip is dropped.
pub fn assign_weak_label(scores: &TagScores, th: &TierThresholds, n_classes: usize) -> Result<Option<BTreeSet<usize>>> {
    if scores.scores.len() != n_classes {
        return Err(SedError::Shape(format!(
            "clip {} has {} scores, vocabulary has {n_classes} classes",
            scores.clip_id,
            scores.scores.len()
        )));
    }
    let mut ranked: Vec<usize> = (0..n_classes).collect();
    // stable sort keeps the lower index first on ties
    ranked.sort_by(|&a, &b| scores.scores[b].total_cmp(&scores.scores[a]));
    let tiers = [th.t1, th.t2, th.t3];
    let mut label = BTreeSet::new();
    for (&class, &cut) in ranked.iter().zip(&tiers) {
        if scores.scores[class] < cut {
            break;
        }
        label.insert(class);
    }
    Ok((!label.is_empty()).then_some(label))
}

/// Original weak labels followed by accepted pseudo-labels, in input order.
pub fn build_extended_dataset(
    weak: &[WeakLabel],
    unlabeled: &[TagScores],
    th: &TierThresholds,
    n_classes: usize,
) -> Result<(Vec<WeakLabel>, LabelDistribution)> {
    th.validate()?;
    let mut seen = HashSet::new();
    for id in weak
        .iter()
        .map(|w| &w.clip_id)
        .chain(unlabeled.iter().map(|u| &u.clip_id))
    {
        if !seen.insert(id) {
            return Err(SedError::DuplicateClip(id.clone()));
        }
    }
    let mut out = weak.to_vec();
    for u in unlabeled {
        if let Some(classes) = assign_weak_label(u, th, n_classes)? {
            out.push(WeakLabel {
                clip_id: u.clip_id.clone(),
                classes,
            });
        }
    }
    let dist = LabelDistribution::tally(&out);
    Ok((out, dist))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> TagScores {
        TagScores {
            clip_id: "u".into(),
            scores: v.to_vec(),
        }
    }

    fn tiers_b() -> TierThresholds {
        TierThresholds::new(0.99, 0.47, 0.28).unwrap()
    }

    #[test]
    fn three_tiers_pass() {
        let s = scores(&[0.1, 0.995, 0.0, 0.30, 0.5]);
        let l = assign_weak_label(&s, &tiers_b(), 5).unwrap().unwrap();
        assert_eq!(l, [1, 3, 4].into());
    }

    #[test]
    fn top_below_t1_is_dropped() {
        let s = scores(&[0.98, 0.9, 0.9]);
        assert_eq!(assign_weak_label(&s, &tiers_b(), 3).unwrap(), None);
    }

    #[test]
    fn third_requires_second() {
        let s = scores(&[0.999, 0.46, 0.30]);
        let l = assign_weak_label(&s, &tiers_b(), 3).unwrap().unwrap();
        assert_eq!(l, [0].into());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let th = TierThresholds::new(0.5, 0.5, 0.5).unwrap();
        let s = scores(&[0.6, 0.9, 0.6, 0.6]);
        let l = assign_weak_label(&s, &th, 4).unwrap().unwrap();
        assert_eq!(l, [0, 1, 2].into());
    }

    #[test]
    fn wrong_length_is_error() {
        assert!(assign_weak_label(&scores(&[0.5, 0.5]), &tiers_b(), 3).is_err());
    }

    #[test]
    fn threshold_invariant() {
        assert!(TierThresholds::new(0.5, 0.6, 0.1).is_err());
        assert!(TierThresholds::new(1.2, 0.6, 0.1).is_err());
        assert!(TierThresholds::new(0.0, 0.0, 0.0).is_ok());
    }

    fn weak(id: &str, c: &[usize]) -> WeakLabel {
        WeakLabel {
            clip_id: id.into(),
            classes: c.iter().copied().collect(),
        }
    }

    #[test]
    fn empty_unlabeled_is_identity() {
        let w = vec![weak("a", &[0]), weak("b", &[1, 2]), weak("c", &[])];
        let (out, d) = build_extended_dataset(&w, &[], &tiers_b(), 3).unwrap();
        assert_eq!(out, w);
        assert_eq!(
            d,
            LabelDistribution {
                total: 3,
                one_type: 1,
                two_type: 1,
                none: 1,
                ..Default::default()
            }
        );
    }

    #[test]
    fn zero_thresholds_give_three_labels() {
        let th = TierThresholds::new(0.0, 0.0, 0.0).unwrap();
        let u: Vec<TagScores> = (0..5)
            .map(|i| TagScores {
                clip_id: format!("u{i}"),
                scores: vec![0.0; 10],
            })
            .collect();
        let (out, d) = build_extended_dataset(&[], &u, &th, 10).unwrap();
        assert!(out.iter().all(|l| l.classes.len() == 3));
        assert_eq!(d.three_type, 5);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let w = vec![weak("a", &[0])];
        let u = vec![TagScores {
            clip_id: "a".into(),
            scores: vec![1.0, 0.0],
        }];
        assert!(matches!(
            build_extended_dataset(&w, &u, &tiers_b(), 2),
            Err(SedError::DuplicateClip(_))
        ));
    }

    #[test]
    fn report_row_format() {
        let d = LabelDistribution {
            total: 8881,
            one_type: 8219,
            two_type: 579,
            three_type: 83,
            ..Default::default()
        };
        let name = DatasetName("wt", Some(tiers_b())).to_string();
        assert_eq!(d.row(&name), "wt-0.99-0.47-0.28\t8881\t8219\t579\t83\t0\t0");
        let name = DatasetName("wt", TierThresholds::new(0.8, 0.4, 0.2).ok()).to_string();
        assert_eq!(name, "wt-0.8-0.4-0.2");
    }
}
