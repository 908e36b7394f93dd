//! Event-based, class-wise F1 with onset/offset collars.
//!
//! A reference `r` and an estimate `e` of the same clip and class are
//! compatible when
//!
//! ```text
//! |e.onset  - r.onset|  <= onset_collar
//! |e.offset - r.offset| <= max(offset_collar_abs, offset_collar_rel * (r.offset - r.onset))
//! ```
//!
//! True positives are the size of a maximum one-to-one matching over the
//! compatible pairs, found with augmenting paths.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::{StrongEvent, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollarSpec {
    pub onset_collar: f64,
    pub offset_collar_abs: f64,
    pub offset_collar_rel: f64,
}

impl Default for CollarSpec {
    fn default() -> Self {
        CollarSpec {
            onset_collar: 0.2,
            offset_collar_abs: 0.2,
            offset_collar_rel: 0.2,
        }
    }
}

impl CollarSpec {
    pub fn compatible(&self, r: &StrongEvent, e: &StrongEvent) -> bool {
        let offset_collar = self
            .offset_collar_abs
            .max(self.offset_collar_rel * (r.offset - r.onset));
        (e.onset - r.onset).abs() <= self.onset_collar && (e.offset - r.offset).abs() <= offset_collar
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Size of a maximum matching in the bipartite graph `adj[ref] -> [est]`.
pub fn max_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    let mut size = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; n_right];
        if augment(u, adj, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Counts for one clip and class.
pub fn match_group(refs: &[&StrongEvent], ests: &[&StrongEvent], collar: &CollarSpec) -> ClassCounts {
    let adj: Vec<Vec<usize>> = refs
        .iter()
        .map(|r| {
            ests.iter()
                .enumerate()
                .filter(|(_, e)| collar.compatible(r, e))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let tp = max_matching(&adj, ests.len());
    ClassCounts {
        tp,
        fp: ests.len() - tp,
        fn_: refs.len() - tp,
    }
}

type Groups<'a> = BTreeMap<(&'a str, usize), (Vec<&'a StrongEvent>, Vec<&'a StrongEvent>)>;

/// Per-class counts summed over clips. Matching never crosses clips or classes.
pub fn match_events(
    refs: &[StrongEvent],
    ests: &[StrongEvent],
    n_classes: usize,
    collar: &CollarSpec,
) -> Vec<ClassCounts> {
    let mut groups: Groups = BTreeMap::new();
    for r in refs {
        groups.entry((&r.clip_id, r.class)).or_default().0.push(r);
    }
    for e in ests {
        groups.entry((&e.clip_id, e.class)).or_default().1.push(e);
    }
    let mut counts = vec![ClassCounts::default(); n_classes];
    for ((_, class), (r, e)) in &groups {
        counts[*class] += match_group(r, e, collar);
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Each of P, R and F1 is 0 when its denominator is 0.
pub fn class_f1(c: &ClassCounts) -> Prf {
    let tp = c.tp as f64;
    let precision = ratio(tp, tp + c.fp as f64);
    let recall = ratio(tp, tp + c.fn_ as f64);
    Prf {
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
    }
}

/// Per-class F1 rows and their unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroReport {
    pub rows: Vec<(String, f64)>,
    pub average: f64,
}

pub fn macro_report(vocab: &Vocabulary, f1: &[f64]) -> MacroReport {
    assert_eq!(f1.len(), vocab.len(), "one F1 value per class");
    let rows: Vec<(String, f64)> = vocab.names().map(String::from).zip(f1.iter().copied()).collect();
    let average = if f1.is_empty() {
        0.0
    } else {
        f1.iter().sum::<f64>() / f1.len() as f64
    };
    MacroReport { rows, average }
}

impl MacroReport {
    /// `Class<TAB>F1` in percent with one decimal, then the `Average` row.
    pub fn render(&self) -> String {
        let mut s = String::from("Class\tF1\n");
        for (name, f) in &self.rows {
            let _ = writeln!(s, "{name}\t{:.1}", 100.0 * f);
        }
        let _ = writeln!(s, "Average\t{:.1}", 100.0 * self.average);
        s
    }
}

/// Full scoring report: per-class P/R/F1 and counts, macro average, micro totals.
pub fn score_report(vocab: &Vocabulary, counts: &[ClassCounts]) -> String {
    let mut s = String::from("Class\tF1\tPrecision\tRecall\tTP\tFP\tFN\n");
    let mut total = ClassCounts::default();
    let mut f1s = Vec::with_capacity(counts.len());
    for (name, c) in vocab.names().zip(counts) {
        let p = class_f1(c);
        f1s.push(p.f1);
        total += *c;
        let _ = writeln!(
            s,
            "{name}\t{:.1}\t{:.1}\t{:.1}\t{}\t{}\t{}",
            100.0 * p.f1,
            100.0 * p.precision,
            100.0 * p.recall,
            c.tp,
            c.fp,
            c.fn_
        );
    }
    let avg = macro_report(vocab, &f1s).average;
    let _ = writeln!(s, "Average\t{:.1}\t\t\t\t\t", 100.0 * avg);
    let micro = class_f1(&total);
    let _ = writeln!(
        s,
        "Micro\t{:.1}\t{:.1}\t{:.1}\t{}\t{}\t{}",
        100.0 * micro.f1,
        100.0 * micro.precision,
        100.0 * micro.recall,
        total.tp,
        total.fp,
        total.fn_
    );
    s
}

/// Unweighted mean of per-class F1 over all vocabulary classes.
pub fn macro_f1(counts: &[ClassCounts]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().map(|c| class_f1(c).f1).sum::<f64>() / counts.len() as f64
}
