//! Synthetic tone and noise-band corpus with known event timings.
//!
//! Class `c` sounds at a centre frequency spaced geometrically between
//! 250 Hz and 7 kHz. Even classes are steady tones, odd classes are narrow
//! noise bands built from random-phase partials around the centre.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{StrongEvent, TagScores, WeakLabel};
use crate::error::{Result, SedError};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub n_classes: usize,
    pub clip_duration: f64,
    pub sample_rate: u32,
    pub max_events: usize,
    /// The first this many clips hold exactly one event.
    pub single_event_clips: usize,
    pub min_event_dur: f64,
    pub max_event_dur: f64,
    pub event_amplitude: f64,
    pub noise_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clips: 20,
            n_classes: 10,
            clip_duration: 10.0,
            sample_rate: 22050,
            max_events: 3,
            single_event_clips: 0,
            min_event_dur: 0.5,
            max_event_dur: 3.0,
            event_amplitude: 0.2,
            noise_amplitude: 0.002,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SedError::Config(m.into()));
        if self.n_classes == 0 || self.max_events == 0 || self.sample_rate == 0 {
            return bad("synth needs n_classes, max_events and sample_rate >= 1");
        }
        if !(self.min_event_dur > 0.0 && self.min_event_dur <= self.max_event_dur) {
            return bad("synth needs 0 < min_event_dur <= max_event_dur");
        }
        if !(self.max_event_dur <= self.clip_duration && self.clip_duration.is_finite()) {
            return bad("synth events must fit in the clip");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip_id: String,
    pub samples: Vec<f64>,
    pub events: Vec<StrongEvent>,
}

impl SynthClip {
    pub fn classes(&self) -> BTreeSet<usize> {
        self.events.iter().map(|e| e.class).collect()
    }
}

pub fn class_frequency(class: usize, n_classes: usize) -> f64 {
    let span = (n_classes.max(2) - 1) as f64;
    250.0 * 28f64.powf(class as f64 / span)
}

const RAMP: f64 = 0.01;
const BAND_PARTIALS: usize = 12;
const BAND_WIDTH: f64 = 0.08;

/// Event times are whole milliseconds.
fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

fn add_event(samples: &mut [f64], sr: f64, ev: &StrongEvent, n_classes: usize, amp: f64, rng: &mut impl Rng) {
    let centre = class_frequency(ev.class, n_classes);
    let partials: Vec<(f64, f64)> = if ev.class.is_multiple_of(2) {
        vec![(centre, 0.0)]
    } else {
        (0..BAND_PARTIALS)
            .map(|_| {
                (
                    centre * (1.0 + rng.random_range(-BAND_WIDTH..BAND_WIDTH)),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect()
    };
    let gain = amp / (partials.len() as f64).sqrt();
    let start = (ev.onset * sr).round() as usize;
    let end = ((ev.offset * sr).round() as usize).min(samples.len());
    for (n, s) in samples.iter_mut().enumerate().take(end).skip(start) {
        let t = (n - start) as f64 / sr;
        let left = (end - n) as f64 / sr;
        let env = (t.min(left) / RAMP).min(1.0);
        let env = 0.5 - 0.5 * (PI * env).cos();
        let v: f64 = partials.iter().map(|&(f, ph)| (2.0 * PI * f * t + ph).sin()).sum();
        *s += gain * env * v;
    }
}

/// Clip `i` always contains class `i mod C`, so every class is covered once
/// `n_clips >= C`. Other events use distinct classes and may overlap. With
/// `single_event_clips >= C` every class also has a clip where it sounds
/// alone, which makes the weak labels unambiguous.
pub fn generate(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    let sr = cfg.sample_rate as f64;
    let n_samples = (cfg.clip_duration * sr).round() as usize;
    let mut clips = Vec::with_capacity(cfg.n_clips);
    for i in 0..cfg.n_clips {
        let n_events = if i < cfg.single_event_clips {
            1
        } else {
            rng.random_range(1..=cfg.max_events.min(cfg.n_classes))
        };
        let first = i % cfg.n_classes;
        let mut others: Vec<usize> = (0..cfg.n_classes).filter(|&c| c != first).collect();
        others.shuffle(rng);
        let mut classes = vec![first];
        classes.extend(others.into_iter().take(n_events - 1));
        let mut events: Vec<StrongEvent> = classes
            .into_iter()
            .map(|class| {
                let dur = round_ms(rng.random_range(cfg.min_event_dur..=cfg.max_event_dur));
                let onset = round_ms(rng.random_range(0.0..=(cfg.clip_duration - dur)));
                StrongEvent {
                    clip_id: format!("synth_{i:04}.wav"),
                    onset,
                    offset: round_ms(onset + dur).min(cfg.clip_duration),
                    class,
                }
            })
            .collect();
        events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
        let mut samples: Vec<f64> = (0..n_samples)
            .map(|_| cfg.noise_amplitude * rng.random_range(-1.0..1.0))
            .collect();
        for ev in &events {
            add_event(&mut samples, sr, ev, cfg.n_classes, cfg.event_amplitude, rng);
        }
        clips.push(SynthClip {
            clip_id: format!("synth_{i:04}.wav"),
            samples,
            events,
        });
    }
    Ok(clips)
}

pub fn weak_labels(clips: &[SynthClip]) -> Vec<WeakLabel> {
    clips
        .iter()
        .map(|c| WeakLabel {
            clip_id: c.clip_id.clone(),
            classes: c.classes(),
        })
        .collect()
}

pub fn strong_labels(clips: &[SynthClip]) -> Vec<StrongEvent> {
    clips.iter().flat_map(|c| c.events.iter().cloned()).collect()
}

/// Tagger-like scores: present classes draw from `[0.3, 1)`, absent ones from `[0, 0.35)`.
pub fn tag_scores(clips: &[SynthClip], n_classes: usize, rng: &mut impl Rng) -> Vec<TagScores> {
    clips
        .iter()
        .map(|c| {
            let present = c.classes();
            TagScores {
                clip_id: c.clip_id.clone(),
                scores: (0..n_classes)
                    .map(|k| {
                        if present.contains(&k) {
                            rng.random_range(0.3..1.0)
                        } else {
                            rng.random_range(0.0..0.35)
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}
