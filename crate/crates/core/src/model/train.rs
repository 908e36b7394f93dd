//! Mini-batch Adam on clip-level BCE with early stopping.

use std::collections::BTreeSet;

use log::{info, warn};
use ndarray::{Array3, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{backward, bce_grad, bce_loss, forward, InputNorm, Model, ModelConfig, ModelParams, TrainConfig};
use crate::corpus::WeakLabel;
use crate::error::{Result, SedError};
use crate::sampling::{class_weights, mixup, plan_epoch, MixItem};

/// One training clip: raw (unstandardized) features and its weak label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub clip_id: String,
    pub x: Array3<f32>,
    pub classes: BTreeSet<usize>,
}

impl Example {
    pub fn target(&self, n_classes: usize) -> Vec<f64> {
        (0..n_classes)
            .map(|c| if self.classes.contains(&c) { 1.0 } else { 0.0 })
            .collect()
    }

    fn weak_label(&self) -> WeakLabel {
        WeakLabel {
            clip_id: self.clip_id.clone(),
            classes: self.classes.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the (mixed) training batches of the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, 1-based; 0 if training never ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Share of clips held out, in tenths.
const VAL_BUCKET: u8 = 0;

/// Clips whose `sha256(clip_id)` lands in bucket 0 of 10 go to validation.
pub fn validation_split(examples: &[Example]) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        let digest = Sha256::digest(e.clip_id.as_bytes());
        let key = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        if (key % 10) as u8 == VAL_BUCKET {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let g = grad.flatten();
        let mut i = 0;
        for t in params.tensors_mut() {
            for p in t.iter_mut() {
                self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g[i];
                self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                i += 1;
            }
        }
    }
}

fn check_examples(examples: &[Example], cfg: &ModelConfig) -> Result<()> {
    for e in examples {
        let (c, t, f) = e.x.dim();
        if c != cfg.in_channels || f != cfg.n_bands || cfg.output_frames(t) == 0 {
            return Err(SedError::Shape(format!(
                "clip {} has features {:?}, model expects {} channels x {} bands",
                e.clip_id,
                e.x.dim(),
                cfg.in_channels,
                cfg.n_bands
            )));
        }
        if let Some(&bad) = e.classes.iter().find(|&&k| k >= cfg.n_classes) {
            return Err(SedError::Shape(format!(
                "clip {} has class {bad} >= {}",
                e.clip_id, cfg.n_classes
            )));
        }
    }
    Ok(())
}

/// Mean loss of `params` over `examples`, no augmentation.
pub fn mean_loss(model: &Model, examples: &[&Example], weights: Option<&[f64]>) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        let out = forward(&model.config, &model.params, &model.norm.apply(&e.x))?;
        total += bce_loss(
            out.clip_scores.as_slice().expect("contiguous"),
            &e.target(model.config.n_classes),
            weights,
        );
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Trains from a fresh initialization and returns the parameters with the
/// lowest validation loss. Without `val`, 10% of `train` is held out by
/// clip-id hash; if that leaves either side empty the training set doubles
/// as validation.
pub fn train(
    train: &[Example],
    val: Option<&[Example]>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(SedError::Config("training set is empty".into()));
    }
    if !(train_cfg.lr >= 0.0 && train_cfg.lr.is_finite()) || train_cfg.batch_size == 0 {
        return Err(SedError::Config("lr must be finite and >= 0, batch_size >= 1".into()));
    }
    check_examples(train, model_cfg)?;
    let (fit_set, val_set): (Vec<&Example>, Vec<&Example>) = match val {
        Some(v) => {
            check_examples(v, model_cfg)?;
            (train.iter().collect(), v.iter().collect())
        }
        None => {
            let (ti, vi) = validation_split(train);
            if ti.is_empty() || vi.is_empty() {
                warn!(
                    "hash split of {} clips left one side empty; validating on the training set",
                    train.len()
                );
                (train.iter().collect(), train.iter().collect())
            } else {
                (
                    ti.iter().map(|&i| &train[i]).collect(),
                    vi.iter().map(|&i| &train[i]).collect(),
                )
            }
        }
    };
    info!("training on {} clips, validating on {}", fit_set.len(), val_set.len());

    let n_classes = model_cfg.n_classes;
    let labels: Vec<WeakLabel> = fit_set.iter().map(|e| e.weak_label()).collect();
    let weights = train_cfg.use_class_weights.then(|| class_weights(&labels, n_classes));
    let weights = weights.as_deref();

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let norm = InputNorm::fit(fit_set.iter().map(|e| &e.x), model_cfg.in_channels, model_cfg.n_bands);
    let mut model = Model {
        config: model_cfg.clone(),
        norm,
        params: ModelParams::init(model_cfg, &mut rng),
    };
    let mut adam = Adam::new(train_cfg.lr, model.params.len());
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = (f64::INFINITY, model.params.clone());

    for epoch in 1..=train_cfg.max_epochs {
        let order = match train_cfg.balance_cap {
            Some(cap) => plan_epoch(&labels, n_classes, cap, &mut rng)?.order,
            None => {
                let mut o: Vec<usize> = (0..fit_set.len()).collect();
                o.shuffle(&mut rng);
                o
            }
        };
        if order.is_empty() {
            return Err(SedError::Config("no labeled clip to sample".into()));
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let items: Vec<MixItem> = batch
                .iter()
                .map(|&i| MixItem {
                    x: fit_set[i].x.clone(),
                    y: fit_set[i].target(n_classes),
                })
                .collect();
            let mixed = mixup(&items, &train_cfg.mixup, &mut rng)?;
            let mut grad = ModelParams::zeros(model_cfg);
            let scale = 1.0 / mixed.len() as f64;
            for item in &mixed {
                let out = forward(model_cfg, &model.params, &model.norm.apply(&item.x))?;
                let y = out.clip_scores.as_slice().expect("contiguous");
                let loss = bce_loss(y, &item.y, weights);
                if !loss.is_finite() {
                    return Err(SedError::Diverged {
                        epoch,
                        history: history.epochs,
                    });
                }
                loss_sum += loss;
                let dy = bce_grad(y, &item.y, weights);
                let g = match backward(model_cfg, &model.params, &out, ArrayView1::from(&dy)) {
                    Ok(g) => g,
                    Err(SedError::NonFinite(_)) => {
                        return Err(SedError::Diverged {
                            epoch,
                            history: history.epochs,
                        })
                    }
                    Err(e) => return Err(e),
                };
                grad.add_scaled(&g, scale);
            }
            adam.update(&mut model.params, &grad);
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = match mean_loss(&model, &val_set, weights) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(SedError::NonFinite(_)) => {
                return Err(SedError::Diverged {
                    epoch,
                    history: history.epochs,
                });
            }
            Err(e) => return Err(e),
        };
        if !model.params.all_finite() || !train_loss.is_finite() {
            return Err(SedError::Diverged {
                epoch,
                history: history.epochs,
            });
        }
        info!("epoch {epoch}: train loss {train_loss:.5}, validation loss {val_loss:.5}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, model.params.clone());
            history.best_epoch = epoch;
        } else if train_cfg.patience > 0 && epoch - history.best_epoch >= train_cfg.patience {
            info!("no validation improvement for {} epochs; stopping", train_cfg.patience);
            history.stopped_early = true;
            break;
        }
    }
    if history.best_epoch > 0 {
        model.params = best.1;
    }
    Ok((model, history))
}
