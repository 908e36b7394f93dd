//! Desk-scale CRNN with attention pooling, trained on clip-level labels.
//!
//! ```text
//! features (3 x T x F)
//!   -> [conv 3x3 + ReLU + max-pool(time_pool x freq_pool)] x n   (time_pool defaults to 1)
//!   -> mean-pool along time down to target_frames (only if longer)
//!   -> reshape to T' x D, D = channels * bands
//!   -> conv1d + ReLU
//!   -> bidirectional GRU
//!   -> gated unit  tanh(W_f h) * sigmoid(W_g h)
//!   -> frame posteriors P = sigmoid(w_c g + b_c), attention a = sigmoid(v_c g + d_c)
//!   -> clip score y_c = sum_t a P / sum_t a
//! ```
//!
//! Every stage after the conv blocks can be switched off by setting its
//! width to zero, which reduces the network down to per-frame logistic
//! regression. Everything runs in `f64` so gradients can be checked against
//! finite differences.

mod checkpoint;
mod gradcheck;
mod loss;
mod network;
mod params;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP, REL_FLOOR};
pub use loss::{bce_grad, bce_loss, PROB_EPS};
pub use network::{backward, forward, Cache, ForwardOutput};
pub use params::{Conv1dParams, Conv2dParams, GateParams, GruParams, ModelParams};
pub use train::{mean_loss, train, validation_split, EpochRecord, Example, TrainHistory};

use ndarray::{Array2, Array3};

use crate::config::KvConfig;
use crate::corpus::PosteriorGrid;
use crate::error::{Result, SedError};
use crate::features::FeatureTensor;
use crate::sampling::MixupConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub freq_pool: usize,
    pub time_pool: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub n_bands: usize,
    pub n_classes: usize,
    pub conv_blocks: Vec<ConvBlock>,
    /// 0 disables the 1-D convolution.
    pub conv1d_channels: usize,
    pub conv1d_kernel: usize,
    /// Units per direction; 0 disables the GRU.
    pub rnn_hidden: usize,
    /// 0 disables the gated unit.
    pub gated_dim: usize,
    pub target_frames: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            n_bands: 128,
            n_classes: 10,
            conv_blocks: vec![
                ConvBlock {
                    out_channels: 16,
                    freq_pool: 4,
                    time_pool: 1,
                },
                ConvBlock {
                    out_channels: 16,
                    freq_pool: 4,
                    time_pool: 1,
                },
            ],
            conv1d_channels: 64,
            conv1d_kernel: 3,
            rnn_hidden: 32,
            gated_dim: 32,
            target_frames: Some(160),
        }
    }
}

/// Layer widths implied by a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub conv_channels: usize,
    pub conv_bands: usize,
    /// Width after reshaping, channels * bands.
    pub reshaped: usize,
    pub conv1d_out: usize,
    pub rnn_out: usize,
    pub gate_out: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SedError::Config(m));
        if self.in_channels == 0 || self.n_bands == 0 || self.n_classes == 0 {
            return bad("in_channels, n_bands and n_classes must be >= 1".into());
        }
        let mut bands = self.n_bands;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.freq_pool == 0 || b.time_pool == 0 {
                return bad(format!("conv block {i} has a zero dimension"));
            }
            bands /= b.freq_pool;
            if bands == 0 {
                return bad(format!("conv block {i} pools away every frequency band"));
            }
        }
        if self.conv1d_channels > 0 && self.conv1d_kernel.is_multiple_of(2) {
            return bad(format!("conv1d kernel must be odd, got {}", self.conv1d_kernel));
        }
        if self.target_frames == Some(0) {
            return bad("target_frames must be >= 1".into());
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        let conv_channels = self.conv_blocks.last().map_or(self.in_channels, |b| b.out_channels);
        let conv_bands = self.conv_blocks.iter().fold(self.n_bands, |f, b| f / b.freq_pool);
        let reshaped = conv_channels * conv_bands;
        let conv1d_out = if self.conv1d_channels > 0 {
            self.conv1d_channels
        } else {
            reshaped
        };
        let rnn_out = if self.rnn_hidden > 0 {
            2 * self.rnn_hidden
        } else {
            conv1d_out
        };
        let gate_out = if self.gated_dim > 0 { self.gated_dim } else { rnn_out };
        Dims {
            conv_channels,
            conv_bands,
            reshaped,
            conv1d_out,
            rnn_out,
            gate_out,
        }
    }

    /// Output frame count T' for an input of `n_frames`.
    pub fn output_frames(&self, n_frames: usize) -> usize {
        let t = self.conv_blocks.iter().fold(n_frames, |t, b| t / b.time_pool);
        match self.target_frames {
            Some(target) if t > target => target,
            _ => t,
        }
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("in_channels", self.in_channels);
        kv.set("n_bands", self.n_bands);
        kv.set("n_classes", self.n_classes);
        kv.set("conv_blocks", format_conv_blocks(&self.conv_blocks));
        kv.set("conv1d_channels", self.conv1d_channels);
        kv.set("conv1d_kernel", self.conv1d_kernel);
        kv.set("rnn_hidden", self.rnn_hidden);
        kv.set("gated_dim", self.gated_dim);
        kv.set(
            "target_frames",
            self.target_frames.map_or("none".to_string(), |t| t.to_string()),
        );
        kv
    }

    /// Reads keys under `prefix` (e.g. `"model."`), falling back to `base`.
    pub fn from_kv(kv: &KvConfig, prefix: &str, base: &ModelConfig) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let conv_blocks = match kv.get_str(&key("conv_blocks")) {
            Some(s) => parse_conv_blocks(s)?,
            None => base.conv_blocks.clone(),
        };
        let target_frames = match kv.get_str(&key("target_frames")) {
            None => base.target_frames,
            Some("none" | "off" | "") => None,
            Some(v) => Some(
                v.parse()
                    .map_err(|_| SedError::Config(format!("bad target_frames {v:?}")))?,
            ),
        };
        let cfg = ModelConfig {
            in_channels: kv.get_or(&key("in_channels"), base.in_channels)?,
            n_bands: kv.get_or(&key("n_bands"), base.n_bands)?,
            n_classes: kv.get_or(&key("n_classes"), base.n_classes)?,
            conv_blocks,
            conv1d_channels: kv.get_or(&key("conv1d_channels"), base.conv1d_channels)?,
            conv1d_kernel: kv.get_or(&key("conv1d_kernel"), base.conv1d_kernel)?,
            rnn_hidden: kv.get_or(&key("rnn_hidden"), base.rnn_hidden)?,
            gated_dim: kv.get_or(&key("gated_dim"), base.gated_dim)?,
            target_frames,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `out:freq_pool:time_pool` triples joined by commas.
pub fn parse_conv_blocks(s: &str) -> Result<Vec<ConvBlock>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty() && *p != "none")
        .map(|part| {
            let nums: Vec<usize> = part
                .split(':')
                .map(|n| n.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| SedError::Config(format!("bad conv block {part:?}")))?;
            match nums[..] {
                [out_channels, freq_pool, time_pool] => Ok(ConvBlock {
                    out_channels,
                    freq_pool,
                    time_pool,
                }),
                [out_channels, freq_pool] => Ok(ConvBlock {
                    out_channels,
                    freq_pool,
                    time_pool: 1,
                }),
                _ => Err(SedError::Config(format!("bad conv block {part:?}"))),
            }
        })
        .collect()
}

pub fn format_conv_blocks(blocks: &[ConvBlock]) -> String {
    if blocks.is_empty() {
        return "none".into();
    }
    blocks
        .iter()
        .map(|b| format!("{}:{}:{}", b.out_channels, b.freq_pool, b.time_pool))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub use_class_weights: bool,
    /// Class-balance cap; `None` visits every clip once per epoch.
    pub balance_cap: Option<f64>,
    pub mixup: MixupConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 20,
            max_epochs: 50,
            patience: 7,
            seed: 0,
            use_class_weights: false,
            balance_cap: Some(6.0),
            mixup: MixupConfig::default(),
        }
    }
}

/// Per-channel, per-band standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

const MIN_STD: f64 = 1e-5;

impl InputNorm {
    pub fn identity(channels: usize, bands: usize) -> Self {
        InputNorm {
            mean: Array2::zeros((channels, bands)),
            std: Array2::ones((channels, bands)),
        }
    }

    /// Mean and standard deviation over all frames of all tensors.
    pub fn fit<'a>(tensors: impl IntoIterator<Item = &'a Array3<f32>>, channels: usize, bands: usize) -> Self {
        let mut sum = Array2::<f64>::zeros((channels, bands));
        let mut sq = Array2::<f64>::zeros((channels, bands));
        let mut n = 0usize;
        for x in tensors {
            let (c_len, t_len, f_len) = x.dim();
            debug_assert_eq!((c_len, f_len), (channels, bands));
            for c in 0..c_len {
                for t in 0..t_len {
                    for f in 0..f_len {
                        let v = x[[c, t, f]] as f64;
                        sum[[c, f]] += v;
                        sq[[c, f]] += v * v;
                    }
                }
            }
            n += t_len;
        }
        if n == 0 {
            return InputNorm::identity(channels, bands);
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - &mean * &mean;
        let std = var.mapv(|v| v.max(0.0).sqrt().max(MIN_STD));
        InputNorm { mean, std }
    }

    pub fn apply(&self, x: &Array3<f32>) -> Array3<f64> {
        let (c_len, t_len, f_len) = x.dim();
        Array3::from_shape_fn((c_len, t_len, f_len), |(c, t, f)| {
            (x[[c, t, f]] as f64 - self.mean[[c, f]]) / self.std[[c, f]]
        })
    }
}

/// A trained network: architecture, input statistics and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub norm: InputNorm,
    pub params: ModelParams,
}

impl Model {
    pub fn check_input(&self, x: &Array3<f32>) -> Result<()> {
        let (c, t, f) = x.dim();
        if c != self.config.in_channels || f != self.config.n_bands || t == 0 {
            return Err(SedError::Shape(format!(
                "input {:?} does not match model ({} channels, {} bands)",
                x.dim(),
                self.config.in_channels,
                self.config.n_bands
            )));
        }
        if self.config.output_frames(t) == 0 {
            return Err(SedError::Shape(format!("{t} frames are pooled away by the conv stack")));
        }
        Ok(())
    }

    /// Frame posteriors and clip scores for one tensor.
    pub fn predict(&self, x: &Array3<f32>) -> Result<(Array2<f64>, ndarray::Array1<f64>)> {
        self.check_input(x)?;
        let out = forward(&self.config, &self.params, &self.norm.apply(x))?;
        Ok((out.frame_probs, out.clip_scores))
    }

    pub fn infer(&self, x: &FeatureTensor, clip_duration: f64) -> Result<PosteriorGrid> {
        let (p, _) = self.predict(&x.values)?;
        PosteriorGrid::new(x.clip_id.clone(), clip_duration, p.mapv(|v| v as f32))
    }
}
