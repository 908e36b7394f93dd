//! Weakly supervised sound event detection at desk scale.
//!
//! Stages, each usable on its own:
//!
//! - [`corpus`]: label, score and posterior file formats
//! - [`features`]: log-mel plus delta features from audio
//! - [`pseudo_label`]: tiered weak labels from tagging scores
//! - [`sampling`]: class-capped epoch plans, loss weights, mixup
//! - [`model`]: attention-pooled CRNN, training and inference
//! - [`decode`]: posterior grids to timed events
//! - [`tune`]: per-class threshold search
//! - [`ensemble`]: weighted posterior fusion
//! - [`eval`]: collar-based event F1

mod binio;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod pseudo_label;
pub mod sampling;
pub mod synth;
pub mod tune;

pub use config::KvConfig;
pub use corpus::{PosteriorGrid, StrongEvent, TagScores, Vocabulary, WeakLabel};
pub use decode::{ClassThresholds, DecodeConfig};
pub use error::{Result, SedError};
pub use eval::{ClassCounts, CollarSpec};
pub use features::{FeatureConfig, FeatureTensor};
pub use model::{Model, ModelConfig, TrainConfig};
pub use pseudo_label::TierThresholds;
pub use sampling::MixupConfig;
