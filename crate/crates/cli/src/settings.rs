//! Resolved run configuration: config file, then `SEDPIPE_SEED`, then `--set` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sedpipe_core::corpus::DEFAULT_CLASSES;
use sedpipe_core::sampling::MixupConfig;
use sedpipe_core::synth::SynthConfig;
use sedpipe_core::{
    CollarSpec, DecodeConfig, FeatureConfig, KvConfig, ModelConfig, TierThresholds, TrainConfig, Vocabulary,
};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "SEDPIPE_SEED";

const PATH_KEYS: [&str; 5] = [
    "paths.audio",
    "paths.weak",
    "paths.scores",
    "paths.strong",
    "paths.work",
];

#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub vocab: Vocabulary,
    pub features: FeatureConfig,
    pub tiers: TierThresholds,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Used by `decode` when no threshold file is given.
    pub default_threshold: f64,
    pub collar: CollarSpec,
    pub synth: SynthConfig,
    /// Fraction of synthetic clips that keep their weak label; the rest get tagger scores.
    pub synth_weak_fraction: f64,
    /// Kept even when balancing is off, so the resolved config round-trips.
    balance_cap: f64,
    kv: KvConfig,
}

impl Settings {
    pub fn load(config: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut kv = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                KvConfig::parse(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => KvConfig::default(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            kv.set("seed", seed.trim());
        }
        for o in overrides {
            kv.set_assignment(o).with_context(|| format!("--set {o}"))?;
        }
        Self::from_kv(kv)
    }

    pub fn from_kv(kv: KvConfig) -> Result<Self> {
        let vocab = match kv.get_str("classes") {
            Some(s) => Vocabulary::new(s.split(',').map(str::trim).filter(|c| !c.is_empty()))?,
            None => Vocabulary::new(DEFAULT_CLASSES)?,
        };
        let fd = FeatureConfig::default();
        let features = FeatureConfig {
            target_sr: kv.get_or("features.sample_rate", fd.target_sr)?,
            n_fft: kv.get_or("features.n_fft", fd.n_fft)?,
            hop: kv.get_or("features.hop", fd.hop)?,
            n_mels: kv.get_or("features.n_mels", fd.n_mels)?,
            fmin: kv.get_or("features.fmin", fd.fmin)?,
            fmax: kv.get_or("features.fmax", fd.fmax)?,
            log_floor: kv.get_or("features.log_floor", fd.log_floor)?,
            delta_window: kv.get_or("features.delta_window", fd.delta_window)?,
        };
        features.validate()?;

        let td = TierThresholds::default();
        let tiers = TierThresholds::new(
            kv.get_or("pseudo.t1", td.t1)?,
            kv.get_or("pseudo.t2", td.t2)?,
            kv.get_or("pseudo.t3", td.t3)?,
        )?;

        let base = ModelConfig {
            n_bands: features.n_mels,
            n_classes: vocab.len(),
            ..ModelConfig::default()
        };
        let model = ModelConfig::from_kv(&kv, "model.", &base)?;
        if model.n_classes != vocab.len() || model.n_bands != features.n_mels || model.in_channels != 3 {
            bail!("model.n_classes, model.n_bands and model.in_channels must match the vocabulary and features");
        }

        let trd = TrainConfig::default();
        let seed = kv.get_or("seed", 0u64)?;
        let balance_cap: f64 = kv.get_or("balance.cap", trd.balance_cap.unwrap_or(6.0))?;
        let train = TrainConfig {
            lr: kv.get_or("train.lr", trd.lr)?,
            batch_size: kv.get_or("train.batch_size", trd.batch_size)?,
            max_epochs: kv.get_or("train.max_epochs", trd.max_epochs)?,
            patience: kv.get_or("train.patience", trd.patience)?,
            seed,
            use_class_weights: kv.get_bool_or("train.class_weights", trd.use_class_weights)?,
            balance_cap: kv
                .get_bool_or("balance.enabled", trd.balance_cap.is_some())?
                .then_some(balance_cap),
            mixup: MixupConfig {
                enabled: kv.get_bool_or("mixup.enabled", trd.mixup.enabled)?,
                alpha: kv.get_or("mixup.alpha", trd.mixup.alpha)?,
            },
        };

        let dd = DecodeConfig::default();
        let decode = DecodeConfig {
            median_window: kv.get_or("decode.median_window", dd.median_window)?,
            min_event_dur: kv.get_or("decode.min_event_dur", dd.min_event_dur)?,
            min_gap: kv.get_or("decode.min_gap", dd.min_gap)?,
        };
        decode.validate()?;
        let default_threshold: f64 = kv.get_or("decode.threshold", 0.5)?;
        if !(default_threshold > 0.0 && default_threshold < 1.0) {
            bail!("decode.threshold must lie in (0,1), got {default_threshold}");
        }

        let cd = CollarSpec::default();
        let collar = CollarSpec {
            onset_collar: kv.get_or("collar.onset", cd.onset_collar)?,
            offset_collar_abs: kv.get_or("collar.offset", cd.offset_collar_abs)?,
            offset_collar_rel: kv.get_or("collar.offset_rel", cd.offset_collar_rel)?,
        };

        let sd = SynthConfig {
            n_classes: vocab.len(),
            sample_rate: features.target_sr,
            ..SynthConfig::default()
        };
        let synth = SynthConfig {
            n_clips: kv.get_or("synth.clips", sd.n_clips)?,
            n_classes: vocab.len(),
            clip_duration: kv.get_or("synth.duration", sd.clip_duration)?,
            sample_rate: sd.sample_rate,
            max_events: kv.get_or("synth.max_events", sd.max_events)?,
            single_event_clips: kv.get_or("synth.single_event_clips", sd.single_event_clips)?,
            min_event_dur: kv.get_or("synth.min_event_dur", sd.min_event_dur)?,
            max_event_dur: kv.get_or("synth.max_event_dur", sd.max_event_dur)?,
            event_amplitude: kv.get_or("synth.event_amplitude", sd.event_amplitude)?,
            noise_amplitude: kv.get_or("synth.noise_amplitude", sd.noise_amplitude)?,
        };
        synth.validate()?;
        let synth_weak_fraction: f64 = kv.get_or("synth.weak_fraction", 0.5)?;
        if !(0.0..=1.0).contains(&synth_weak_fraction) {
            bail!("synth.weak_fraction must lie in [0,1], got {synth_weak_fraction}");
        }

        let s = Settings {
            seed,
            vocab,
            features,
            tiers,
            model,
            train,
            decode,
            default_threshold,
            collar,
            synth,
            synth_weak_fraction,
            balance_cap,
            kv,
        };
        let known = s.resolved();
        if let Some(k) =
            s.kv.keys()
                .find(|k| known.get_str(k).is_none() && !PATH_KEYS.contains(k))
        {
            bail!("unknown config key {k:?}");
        }
        Ok(s)
    }

    /// Every setting with its effective value, paths included when given.
    pub fn resolved(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("seed", self.seed);
        kv.set("classes", self.vocab.names().collect::<Vec<_>>().join(","));
        let f = &self.features;
        kv.set("features.sample_rate", f.target_sr);
        kv.set("features.n_fft", f.n_fft);
        kv.set("features.hop", f.hop);
        kv.set("features.n_mels", f.n_mels);
        kv.set("features.fmin", f.fmin);
        kv.set("features.fmax", f.fmax);
        kv.set("features.log_floor", f.log_floor);
        kv.set("features.delta_window", f.delta_window);
        kv.set("pseudo.t1", self.tiers.t1);
        kv.set("pseudo.t2", self.tiers.t2);
        kv.set("pseudo.t3", self.tiers.t3);
        let model = self.model.to_kv();
        for k in model.keys() {
            kv.set(&format!("model.{k}"), model.get_str(k).unwrap_or_default());
        }
        let t = &self.train;
        kv.set("train.lr", t.lr);
        kv.set("train.batch_size", t.batch_size);
        kv.set("train.max_epochs", t.max_epochs);
        kv.set("train.patience", t.patience);
        kv.set("train.class_weights", t.use_class_weights);
        kv.set("balance.enabled", t.balance_cap.is_some());
        kv.set("balance.cap", self.balance_cap);
        kv.set("mixup.enabled", t.mixup.enabled);
        kv.set("mixup.alpha", t.mixup.alpha);
        kv.set("decode.median_window", self.decode.median_window);
        kv.set("decode.min_event_dur", self.decode.min_event_dur);
        kv.set("decode.min_gap", self.decode.min_gap);
        kv.set("decode.threshold", self.default_threshold);
        kv.set("collar.onset", self.collar.onset_collar);
        kv.set("collar.offset", self.collar.offset_collar_abs);
        kv.set("collar.offset_rel", self.collar.offset_collar_rel);
        let s = &self.synth;
        kv.set("synth.clips", s.n_clips);
        kv.set("synth.duration", s.clip_duration);
        kv.set("synth.max_events", s.max_events);
        kv.set("synth.single_event_clips", s.single_event_clips);
        kv.set("synth.min_event_dur", s.min_event_dur);
        kv.set("synth.max_event_dur", s.max_event_dur);
        kv.set("synth.event_amplitude", s.event_amplitude);
        kv.set("synth.noise_amplitude", s.noise_amplitude);
        kv.set("synth.weak_fraction", self.synth_weak_fraction);
        for k in PATH_KEYS {
            if let Some(v) = self.kv.get_str(k) {
                kv.set(k, v);
            }
        }
        kv
    }

    /// sha256 of the canonical rendering of [`Self::resolved`].
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.resolved().render().as_bytes()))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.kv.get_str(key).map(PathBuf::from)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
