//! Posterior grids to timed events: threshold, smooth, merge, prune.

use std::fmt::Write as _;

use crate::corpus::{PosteriorGrid, StrongEvent, Vocabulary};
use crate::error::{Result, SedError};

/// Per-class decision thresholds, each in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassThresholds {
    pub theta: Vec<f64>,
}

impl ClassThresholds {
    pub fn uniform(n_classes: usize, theta: f64) -> Self {
        ClassThresholds {
            theta: vec![theta; n_classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.theta.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            Some(t) => Err(SedError::Config(format!("threshold {t} outside (0,1)"))),
            None => Ok(()),
        }
    }

    /// `class<TAB>theta` lines in vocabulary order.
    pub fn to_tsv(&self, vocab: &Vocabulary) -> String {
        let mut s = String::new();
        for (c, t) in self.theta.iter().enumerate() {
            let _ = writeln!(s, "{}\t{t}", vocab.name(c));
        }
        s
    }

    /// Every vocabulary class must appear exactly once.
    pub fn from_tsv(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut theta = vec![None; vocab.len()];
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line_no = i + 1;
            let (name, value) = line
                .split_once('\t')
                .ok_or_else(|| SedError::parse(line_no, "expected class<TAB>theta"))?;
            let c = vocab.lookup(name.trim()).ok_or_else(|| SedError::UnknownClass {
                line: line_no,
                token: name.trim().to_string(),
            })?;
            let t: f64 = value
                .trim()
                .parse()
                .map_err(|_| SedError::parse(line_no, format!("bad threshold {value:?}")))?;
            if theta[c].replace(t).is_some() {
                return Err(SedError::parse(line_no, format!("class {name} listed twice")));
            }
        }
        let theta = theta
            .into_iter()
            .enumerate()
            .map(|(c, t)| t.ok_or_else(|| SedError::Config(format!("no threshold for {}", vocab.name(c)))))
            .collect::<Result<Vec<_>>>()?;
        let th = ClassThresholds { theta };
        th.validate()?;
        Ok(th)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    /// Odd frame count; 1 disables smoothing.
    pub median_window: usize,
    /// Runs shorter than this (seconds) are dropped.
    pub min_event_dur: f64,
    /// Gaps shorter than this (seconds) are filled.
    pub min_gap: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            median_window: 1,
            min_event_dur: 0.0,
            min_gap: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_window.is_multiple_of(2) {
            return Err(SedError::Config(format!(
                "median window must be odd, got {}",
                self.median_window
            )));
        }
        if !(self.min_event_dur >= 0.0 && self.min_gap >= 0.0) {
            return Err(SedError::Config("durations must be non-negative".into()));
        }
        Ok(())
    }
}

/// Majority vote over a centred window of `w` frames. Near the edges the
/// window shrinks symmetrically, so the first and last positions are kept.
pub fn median_filter(b: &[bool], w: usize) -> Result<Vec<bool>> {
    if w.is_multiple_of(2) {
        return Err(SedError::Config(format!("median window must be odd, got {w}")));
    }
    let half = w / 2;
    let n = b.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &v in b {
        prefix.push(prefix.last().unwrap() + v as usize);
    }
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let ones = prefix[i + h + 1] - prefix[i - h];
            2 * ones > 2 * h + 1
        })
        .collect())
}

/// Maximal runs of `true` as inclusive frame ranges.
pub fn runs(b: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in b.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, b.len() - 1));
    }
    out
}

/// Events of one class, sorted by onset.
pub fn decode_class(grid: &PosteriorGrid, class: usize, theta: f64, cfg: &DecodeConfig) -> Result<Vec<StrongEvent>> {
    let active: Vec<bool> = grid.values.column(class).iter().map(|&p| p as f64 >= theta).collect();
    let active = if cfg.median_window > 1 {
        median_filter(&active, cfg.median_window)?
    } else {
        active
    };
    let step = grid.frame_step();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in runs(&active) {
        match merged.last_mut() {
            Some(last) if ((s - last.1 - 1) as f64) * step < cfg.min_gap => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    Ok(merged
        .into_iter()
        .filter(|&(s, e)| ((e - s + 1) as f64) * step >= cfg.min_event_dur)
        .map(|(s, e)| StrongEvent {
            clip_id: grid.clip_id.clone(),
            onset: grid.frame_time(s),
            offset: grid.frame_time(e + 1),
            class,
        })
        .collect())
}

/// Events for every class with `P[t,c] >= theta_c`, grouped by class.
pub fn decode_events(grid: &PosteriorGrid, theta: &ClassThresholds, cfg: &DecodeConfig) -> Result<Vec<StrongEvent>> {
    cfg.validate()?;
    if theta.theta.len() != grid.n_classes() {
        return Err(SedError::Shape(format!(
            "{} thresholds for {} classes",
            theta.theta.len(),
            grid.n_classes()
        )));
    }
    let mut out = Vec::new();
    for (c, &t) in theta.theta.iter().enumerate() {
        out.extend(decode_class(grid, c, t, cfg)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn brute_median(b: &[bool], w: usize) -> Vec<bool> {
        let n = b.len() as i64;
        let half = (w / 2) as i64;
        (0..n)
            .map(|i| {
                let h = half.min(i).min(n - 1 - i);
                let window: Vec<bool> = ((i - h)..=(i + h)).map(|j| b[j as usize]).collect();
                let t = window.iter().filter(|&&v| v).count();
                t > window.len() - t
            })
            .collect()
    }

    #[test]
    fn median_basics() {
        let b = [true, false, true, false, false];
        assert_eq!(median_filter(&b, 1).unwrap(), b);
        assert_eq!(median_filter(&[true, false, true], 3).unwrap(), vec![true; 3]);
        assert!(median_filter(&b, 4).is_err());
        assert!(median_filter(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn median_matches_brute_force() {
        let mut s = 77u64;
        let b: Vec<bool> = (0..50)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                s >> 63 == 1
            })
            .collect();
        for w in [1, 3, 5, 7, 9] {
            assert_eq!(median_filter(&b, w).unwrap(), brute_median(&b, w), "w={w}");
        }
    }

    fn grid(values: Array2<f32>, dur: f64) -> PosteriorGrid {
        PosteriorGrid::new("c", dur, values).unwrap()
    }

    #[test]
    fn all_below_threshold() {
        let g = grid(Array2::from_elem((10, 2), 0.2), 5.0);
        assert!(
            decode_events(&g, &ClassThresholds::uniform(2, 0.5), &DecodeConfig::default())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn all_active_spans_clip() {
        let g = grid(Array2::from_elem((7, 1), 1.0), 3.3);
        let ev = decode_events(&g, &ClassThresholds::uniform(1, 0.5), &DecodeConfig::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].onset, ev[0].offset), (0.0, 3.3));
    }

    #[test]
    fn gap_merge_and_min_duration() {
        // frames of 0.1 s: runs [1,2], [4,4], [8,9]
        let col = [0.0, 1., 1., 0., 1., 0., 0., 0., 1., 1.];
        let g = grid(Array2::from_shape_fn((10, 1), |(t, _)| col[t]), 1.0);
        let th = ClassThresholds::uniform(1, 0.5);
        let merged = decode_events(
            &g,
            &th,
            &DecodeConfig {
                min_gap: 0.15,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(merged.len(), 2);
        assert!((merged[0].onset - 0.1).abs() < 1e-12 && (merged[0].offset - 0.5).abs() < 1e-12);
        let pruned = decode_events(
            &g,
            &th,
            &DecodeConfig {
                min_event_dur: 0.15,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(pruned.len(), 2);
        assert!((pruned[1].onset - 0.8).abs() < 1e-12);
    }

    #[test]
    fn thresholds_tsv_roundtrip() {
        let v = Vocabulary::new(["A", "B"]).unwrap();
        let th = ClassThresholds { theta: vec![0.3, 0.65] };
        assert_eq!(ClassThresholds::from_tsv(&th.to_tsv(&v), &v).unwrap(), th);
        assert!(ClassThresholds::from_tsv("A\t0.3\n", &v).is_err());
        assert!(ClassThresholds::from_tsv("A\t0.3\nB\t1.0\n", &v).is_err());
    }

    /// Fills 0.9 inside the events and 0.1 elsewhere.
    fn grid_from_runs(runs_per_class: &[Vec<(usize, usize)>], n_frames: usize, dur: f64) -> PosteriorGrid {
        let mut v = Array2::from_elem((n_frames, runs_per_class.len()), 0.1f32);
        for (c, runs) in runs_per_class.iter().enumerate() {
            for &(s, e) in runs {
                for t in s..=e {
                    v[[t, c]] = 0.9;
                }
            }
        }
        grid(v, dur)
    }

    fn arb_runs(n_frames: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
        proptest::collection::vec(any::<bool>(), n_frames).prop_map(|b| runs(&b))
    }

    proptest! {
        #[test]
        fn roundtrip_from_events(classes in proptest::collection::vec(arb_runs(40), 1..4), dur in 1.0f64..20.0) {
            let g = grid_from_runs(&classes, 40, dur);
            let ev = decode_events(&g, &ClassThresholds::uniform(classes.len(), 0.5), &DecodeConfig::default()).unwrap();
            let mut expect = Vec::new();
            for (c, rs) in classes.iter().enumerate() {
                for &(s, e) in rs {
                    expect.push(StrongEvent { clip_id: "c".into(), onset: g.frame_time(s), offset: g.frame_time(e + 1), class: c });
                }
            }
            prop_assert_eq!(ev, expect);
        }

        #[test]
        fn events_disjoint_sorted_in_range(vals in proptest::collection::vec(0.0f32..1.0, 30), theta in 0.05f64..0.95, w in 0usize..3) {
            let g = grid(Array2::from_shape_vec((30, 1), vals).unwrap(), 4.0);
            let cfg = DecodeConfig { median_window: 2 * w + 1, min_gap: 0.2, min_event_dur: 0.1 };
            let ev = decode_events(&g, &ClassThresholds::uniform(1, theta), &cfg).unwrap();
            for e in &ev {
                prop_assert!(0.0 <= e.onset && e.onset < e.offset && e.offset <= 4.0);
            }
            for pair in ev.windows(2) {
                prop_assert!(pair[0].offset < pair[1].onset);
            }
        }

        #[test]
        fn raising_threshold_shrinks_positives(vals in proptest::collection::vec(0.0f32..1.0, 30), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let g = grid(Array2::from_shape_vec((30, 1), vals).unwrap(), 3.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let frames = |th: f64| decode_class(&g, 0, th, &DecodeConfig::default()).unwrap()
                .iter().map(|e| ((e.offset - e.onset) / g.frame_step()).round() as usize).sum::<usize>();
            prop_assert!(frames(hi) <= frames(lo));
        }
    }
}
