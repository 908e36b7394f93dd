//! Label files, tag-score files, the class vocabulary and the binary
//! posterior format.
//!
//! Text files are UTF-8 and tab separated:
//!
//! ```text
//! weak:    clip_id<TAB>label[,label...]
//! strong:  clip_id<TAB>onset<TAB>offset<TAB>label
//! scores:  filename<TAB>class_1<TAB>...<TAB>class_C     (header row)
//!          clip_id<TAB>s_1<TAB>...<TAB>s_C
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use ndarray::Array2;

use crate::binio;
use crate::error::{Result, SedError};

/// The ten domestic event classes, in report order.
pub const DEFAULT_CLASSES: [&str; 10] = [
    "Alarm_bell_ringing",
    "Blender",
    "Cat",
    "Dishes",
    "Dog",
    "Electric_shaver_toothbrush",
    "Frying",
    "Running_water",
    "Speech",
    "Vacuum_cleaner",
];

/// Ordered set of class names. Every label and score index resolves through it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    classes: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.is_empty() {
            return Err(SedError::Config("vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(classes.len());
        for (i, name) in classes.iter().enumerate() {
            if name.is_empty() || name.contains(['\t', ',', '\n']) {
                return Err(SedError::Config(format!("invalid class name {name:?}")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(SedError::Config(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Vocabulary { classes, index })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.classes[idx]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(String::as_str)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new(DEFAULT_CLASSES).expect("default vocabulary is valid")
    }
}

/// Clip-level class set without timing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakLabel {
    pub clip_id: String,
    pub classes: BTreeSet<usize>,
}

/// A timed annotation or detection.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongEvent {
    pub clip_id: String,
    pub onset: f64,
    pub offset: f64,
    pub class: usize,
}

/// Per-clip class scores from an external tagger, in vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct TagScores {
    pub clip_id: String,
    pub scores: Vec<f64>,
}

/// Frame x class probabilities for one clip. Frame `t` covers
/// `[t*d/T, (t+1)*d/T)` where `d` is the clip duration.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub clip_id: String,
    pub clip_duration: f64,
    pub values: Array2<f32>,
}

impl PosteriorGrid {
    pub fn new(clip_id: impl Into<String>, clip_duration: f64, values: Array2<f32>) -> Result<Self> {
        let grid = PosteriorGrid {
            clip_id: clip_id.into(),
            clip_duration,
            values,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    /// Duration of one frame in seconds.
    pub fn frame_step(&self) -> f64 {
        self.clip_duration / self.n_frames() as f64
    }

    /// Start time of frame boundary `t` (`t == T` gives the clip duration exactly).
    pub fn frame_time(&self, t: usize) -> f64 {
        frame_time(t, self.n_frames(), self.clip_duration)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames() == 0 || self.n_classes() == 0 {
            return Err(SedError::Shape(format!(
                "posterior grid {} has empty shape {:?}",
                self.clip_id,
                self.values.dim()
            )));
        }
        if !(self.clip_duration.is_finite() && self.clip_duration > 0.0) {
            return Err(SedError::Format(format!(
                "clip duration {} must be positive",
                self.clip_duration
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SedError::Format(format!(
                "posterior value {v} outside [0,1] in {}",
                self.clip_id
            )));
        }
        Ok(())
    }
}

/// Time of frame boundary `t` for a clip of `n_frames` frames.
pub fn frame_time(t: usize, n_frames: usize, clip_duration: f64) -> f64 {
    if t == n_frames {
        clip_duration
    } else {
        t as f64 * clip_duration / n_frames as f64
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn resolve(vocab: &Vocabulary, line: usize, token: &str) -> Result<usize> {
    vocab.lookup(token).ok_or_else(|| SedError::UnknownClass {
        line,
        token: token.to_string(),
    })
}

pub fn parse_weak_labels(text: &str, vocab: &Vocabulary) -> Result<Vec<WeakLabel>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, (line_no, line)) in data_lines(text).enumerate() {
        let (clip, labels) = line.split_once('\t').unwrap_or((line, ""));
        let clip = clip.trim();
        if n == 0 && clip == "filename" {
            continue;
        }
        if clip.is_empty() {
            return Err(SedError::parse(line_no, "missing clip id"));
        }
        let mut classes = BTreeSet::new();
        for token in labels.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            classes.insert(resolve(vocab, line_no, token)?);
        }
        if !seen.insert(clip.to_string()) {
            return Err(SedError::DuplicateClip(clip.to_string()));
        }
        out.push(WeakLabel {
            clip_id: clip.to_string(),
            classes,
        });
    }
    Ok(out)
}

pub fn write_weak_labels(labels: &[WeakLabel], vocab: &Vocabulary) -> String {
    let mut s = String::from("filename\tevent_labels\n");
    for l in labels {
        let names: Vec<&str> = l.classes.iter().map(|&c| vocab.name(c)).collect();
        let _ = writeln!(s, "{}\t{}", l.clip_id, names.join(","));
    }
    s
}

fn parse_time(line: usize, field: &str) -> Result<f64> {
    let t: f64 = field
        .trim()
        .parse()
        .map_err(|_| SedError::parse(line, format!("non-numeric time {field:?}")))?;
    if !t.is_finite() || t < 0.0 {
        return Err(SedError::parse(line, format!("invalid time {field:?}")));
    }
    Ok(t)
}

/// Lines holding only a clip id (clips without events) are accepted and skipped.
pub fn parse_strong_labels(text: &str, vocab: &Vocabulary) -> Result<Vec<StrongEvent>> {
    let mut out = Vec::new();
    for (n, (line_no, line)) in data_lines(text).enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.iter().skip(1).all(|f| f.trim().is_empty()) {
            continue;
        }
        if fields.len() != 4 {
            return Err(SedError::parse(
                line_no,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        if n == 0 && fields[1].trim().parse::<f64>().is_err() {
            continue;
        }
        let onset = parse_time(line_no, fields[1])?;
        let offset = parse_time(line_no, fields[2])?;
        if offset <= onset {
            return Err(SedError::parse(
                line_no,
                format!("offset before onset ({offset} <= {onset})"),
            ));
        }
        out.push(StrongEvent {
            clip_id: fields[0].trim().to_string(),
            onset,
            offset,
            class: resolve(vocab, line_no, fields[3].trim())?,
        });
    }
    Ok(out)
}

pub fn write_strong_labels(events: &[StrongEvent], vocab: &Vocabulary) -> String {
    let mut s = String::from("filename\tonset\toffset\tevent_label\n");
    for e in events {
        let _ = writeln!(
            s,
            "{}\t{:.3}\t{:.3}\t{}",
            e.clip_id,
            e.onset,
            e.offset,
            vocab.name(e.class)
        );
    }
    s
}

/// The header row names the score columns; they are reordered into vocabulary order.
pub fn parse_tag_scores(text: &str, vocab: &Vocabulary) -> Result<Vec<TagScores>> {
    let mut lines = data_lines(text);
    let (hdr_line, header) = lines.next().ok_or_else(|| SedError::parse(1, "missing header row"))?;
    let columns: Vec<usize> = header
        .split('\t')
        .skip(1)
        .map(|name| resolve(vocab, hdr_line, name.trim()))
        .collect::<Result<_>>()?;
    let distinct: HashSet<_> = columns.iter().collect();
    if columns.len() != vocab.len() || distinct.len() != vocab.len() {
        return Err(SedError::parse(
            hdr_line,
            format!("header must name each of the {} classes exactly once", vocab.len()),
        ));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() + 1 {
            return Err(SedError::parse(
                line_no,
                format!("expected {} fields, found {}", columns.len() + 1, fields.len()),
            ));
        }
        let mut scores = vec![0.0; vocab.len()];
        for (&col, field) in columns.iter().zip(&fields[1..]) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| SedError::parse(line_no, format!("non-numeric score {field:?}")))?;
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(SedError::parse(line_no, format!("score {v} outside [0,1]")));
            }
            scores[col] = v;
        }
        let clip_id = fields[0].trim().to_string();
        if !seen.insert(clip_id.clone()) {
            return Err(SedError::DuplicateClip(clip_id));
        }
        out.push(TagScores { clip_id, scores });
    }
    Ok(out)
}

pub fn write_tag_scores(scores: &[TagScores], vocab: &Vocabulary) -> String {
    let mut s = String::from("filename");
    for name in vocab.names() {
        s.push('\t');
        s.push_str(name);
    }
    s.push('\n');
    for row in scores {
        s.push_str(&row.clip_id);
        for v in &row.scores {
            let _ = write!(s, "\t{v:.6}");
        }
        s.push('\n');
    }
    s
}

const POSTERIOR_MAGIC: &[u8; 4] = b"SEDP";
const POSTERIOR_VERSION: u32 = 1;

pub fn write_posterior(grid: &PosteriorGrid, sink: &mut impl Write) -> Result<()> {
    grid.validate()?;
    let dim = |n: usize| u32::try_from(n).map_err(|_| SedError::Format(format!("dimension {n} exceeds u32")));
    sink.write_all(POSTERIOR_MAGIC)?;
    binio::write_u32(sink, POSTERIOR_VERSION)?;
    binio::write_str(sink, &grid.clip_id)?;
    binio::write_f64(sink, grid.clip_duration)?;
    binio::write_u32(sink, dim(grid.n_frames())?)?;
    binio::write_u32(sink, dim(grid.n_classes())?)?;
    binio::write_f32s(sink, grid.values.iter().copied())?;
    Ok(())
}

pub fn read_posterior(source: &mut impl Read) -> Result<PosteriorGrid> {
    binio::expect_magic(source, POSTERIOR_MAGIC, POSTERIOR_VERSION)?;
    let clip_id = binio::read_str(source)?;
    let clip_duration = binio::read_f64(source)?;
    let t = binio::read_u32(source)?;
    let c = binio::read_u32(source)?;
    let n = binio::checked_elements(&[t, c])?;
    let data = binio::read_f32s(source, n)?;
    let values = Array2::from_shape_vec((t as usize, c as usize), data).map_err(|e| SedError::Format(e.to_string()))?;
    PosteriorGrid::new(clip_id, clip_duration, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::default()
    }

    #[test]
    fn weak_labels_basic() {
        let v = vocab();
        let labels = parse_weak_labels("a.wav\tSpeech,Dog\nb.wav\t\n", &v).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0].clip_id, "a.wav");
        let expect: BTreeSet<usize> = [v.lookup("Speech").unwrap(), v.lookup("Dog").unwrap()].into();
        assert_eq!(labels[0].classes, expect);
        assert!(labels[1].classes.is_empty());
    }

    #[test]
    fn weak_labels_header_and_bare_clip() {
        let v = vocab();
        let labels = parse_weak_labels("filename\tevent_labels\nc.wav\n", &v).unwrap();
        assert_eq!(labels.len(), 1);
        assert!(labels[0].classes.is_empty());
    }

    #[test]
    fn weak_labels_unknown_class() {
        let err = parse_weak_labels("a.wav\tSpeech\nc.wav\tSpeeech\n", &vocab()).unwrap_err();
        match err {
            SedError::UnknownClass { line, token } => {
                assert_eq!(line, 2);
                assert_eq!(token, "Speeech");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err_msg("c.wav\tSpeeech").contains("unknown class"));
    }

    fn err_msg(text: &str) -> String {
        parse_weak_labels(text, &vocab()).unwrap_err().to_string()
    }

    #[test]
    fn weak_labels_duplicate_clip() {
        assert!(matches!(
            parse_weak_labels("a.wav\tDog\na.wav\tCat\n", &vocab()),
            Err(SedError::DuplicateClip(_))
        ));
    }

    #[test]
    fn strong_labels_parse() {
        let v = vocab();
        let ev = parse_strong_labels(
            "filename\tonset\toffset\tevent_label\na.wav\t0.0\t1.5\tSpeech\na.wav\t2\t3\tDog\n",
            &v,
        )
        .unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(
            ev[0],
            StrongEvent {
                clip_id: "a.wav".into(),
                onset: 0.0,
                offset: 1.5,
                class: v.lookup("Speech").unwrap()
            }
        );
        assert_eq!(ev[1].class, v.lookup("Dog").unwrap());
    }

    #[test]
    fn strong_labels_errors() {
        let v = vocab();
        let e = parse_strong_labels("a.wav\t2.0\t1.0\tDog\n", &v).unwrap_err();
        assert!(e.to_string().contains("offset before onset"), "{e}");
        let e = parse_strong_labels("a.wav\t0.0\t1.0\tDog\nb.wav\tx\t1.0\tDog\n", &v).unwrap_err();
        assert!(e.to_string().contains("non-numeric"), "{e}");
        let e = parse_strong_labels("a.wav\t0.0\t1.0\tDogg\n", &v).unwrap_err();
        assert!(matches!(e, SedError::UnknownClass { .. }));
    }

    #[test]
    fn strong_labels_skip_empty_clip_rows() {
        let ev = parse_strong_labels("a.wav\t\t\t\nb.wav\n", &vocab()).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn strong_roundtrip_text() {
        let v = vocab();
        let ev = vec![StrongEvent {
            clip_id: "x".into(),
            onset: 0.125,
            offset: 2.5,
            class: 3,
        }];
        assert_eq!(parse_strong_labels(&write_strong_labels(&ev, &v), &v).unwrap(), ev);
    }

    #[test]
    fn tag_scores_reorder_columns() {
        let v = Vocabulary::new(["A", "B", "C"]).unwrap();
        let s = parse_tag_scores("filename\tC\tA\tB\nx\t0.1\t0.2\t0.3\n", &v).unwrap();
        assert_eq!(s[0].scores, vec![0.2, 0.3, 0.1]);
        assert!(parse_tag_scores("filename\tA\tB\nx\t0.1\t0.2\n", &v).is_err());
        assert!(parse_tag_scores("filename\tA\tB\tC\nx\t0.1\t0.2\t1.5\n", &v).is_err());
    }

    fn grid(t: usize, c: usize, f: impl Fn(usize, usize) -> f32) -> PosteriorGrid {
        PosteriorGrid::new("clip.wav", 10.0, Array2::from_shape_fn((t, c), |(i, j)| f(i, j))).unwrap()
    }

    fn roundtrip(g: &PosteriorGrid) -> PosteriorGrid {
        let mut buf = Vec::new();
        write_posterior(g, &mut buf).unwrap();
        read_posterior(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn posterior_roundtrip_zeros_and_extremes() {
        let z = grid(2, 3, |_, _| 0.0);
        assert_eq!(roundtrip(&z), z);
        let e = grid(2, 3, |i, j| if (i + j) % 2 == 0 { 1.0 } else { 0.0 });
        assert_eq!(roundtrip(&e), e);
    }

    #[test]
    fn posterior_truncated() {
        let g = grid(4, 2, |i, _| i as f32 / 4.0);
        let mut buf = Vec::new();
        write_posterior(&g, &mut buf).unwrap();
        for cut in [0, 3, 7, 12, buf.len() - 1] {
            let err = read_posterior(&mut &buf[..cut]).unwrap_err();
            assert!(err.to_string().contains("unexpected end"), "cut {cut}: {err}");
        }
    }

    #[test]
    fn posterior_bad_header_and_values() {
        let g = grid(1, 1, |_, _| 0.5);
        let mut buf = Vec::new();
        write_posterior(&g, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_posterior(&mut bad.as_slice()), Err(SedError::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_posterior(&mut bad.as_slice()), Err(SedError::Format(_))));
        let mut bad = buf.clone();
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(read_posterior(&mut bad.as_slice())
            .unwrap_err()
            .to_string()
            .contains("outside"));
        // T = C = u32::MAX
        let mut bad = buf[..buf.len() - 12].to_vec();
        bad.extend_from_slice(&u32::MAX.to_le_bytes());
        bad.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(read_posterior(&mut bad.as_slice())
            .unwrap_err()
            .to_string()
            .contains("overflow"));
    }

    #[test]
    fn vocabulary_bijection() {
        let v = vocab();
        assert_eq!(v.len(), 10);
        for (i, name) in v.names().enumerate() {
            assert_eq!(v.lookup(name), Some(i));
        }
        assert!(Vocabulary::new(["a", "a"]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn posterior_roundtrip(t in 1usize..20, c in 1usize..12, seed in any::<u64>(), dur in 0.01f64..100.0) {
                let mut s = seed;
                let g = PosteriorGrid::new("p", dur, Array2::from_shape_fn((t, c), |_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 40) as f32 / (1u64 << 24) as f32
                })).unwrap();
                prop_assert_eq!(roundtrip(&g), g);
            }

            #[test]
            fn weak_parse_is_stable(mask in proptest::collection::vec(0u16..1024, 1..30)) {
                let v = vocab();
                let mut text = String::new();
                for (i, m) in mask.iter().enumerate() {
                    let names: Vec<&str> = (0..10).filter(|b| m & (1 << b) != 0).map(|b| v.name(b)).collect();
                    text.push_str(&format!("clip{i}\t{}\n", names.join(",")));
                }
                let a = parse_weak_labels(&text, &v).unwrap();
                let b = parse_weak_labels(&write_weak_labels(&a, &v), &v).unwrap();
                prop_assert_eq!(&a, &b);
                for (l, m) in a.iter().zip(&mask) {
                    prop_assert_eq!(l.classes.iter().map(|c| 1u16 << c).sum::<u16>(), *m);
                }
            }
        }
    }
}
