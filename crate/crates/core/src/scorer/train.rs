//! Balanced-epoch training with AdamW, warm-up plus cosine schedule and
//! best-AUPRC model selection.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{weighted_bce_logits, LossConfig};
use super::network::{grid_tensor, ScorerModel};
use super::tensor::Tensor;
use crate::decide::{sweep_thresholds, ThresholdResult};
use crate::error::{Error, Result};
use crate::evalx::{auprc, ConfusionCounts, PixelMetrics};
use crate::patches::{augment, balanced_epoch, AugmentConfig, PatchSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Positives per balanced epoch; `None` uses every positive patch.
    pub positives_per_epoch: Option<usize>,
    pub seed: u64,
    pub loss: LossConfig,
    /// Training-time augmentation; `None` disables it.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            warmup_epochs: 10,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 32,
            positives_per_epoch: None,
            seed: 0,
            loss: LossConfig::default(),
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument("lr and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// Linear warm-up to `lr` over the warm-up epochs, then cosine decay to
    /// zero over the rest. `epoch` counts from 0.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.lr * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        let span = self.epochs.saturating_sub(self.warmup_epochs).max(1) as f64;
        let t = (epoch - self.warmup_epochs) as f64 / span;
        0.5 * self.lr * (1.0 + (PI * t).cos())
    }
}

/// Decoupled weight decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let decay = (1.0 - lr * cfg.weight_decay) as f32;
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        let eps = cfg.adam_eps as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] = params[i] * decay - step * self.m[i] / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub val_iou: f64,
    pub val_auprc: f64,
}

/// Validation scores of one model state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub loss: f64,
    pub auprc: f64,
    /// Counts at probability 0.5.
    pub counts: ConfusionCounts,
    pub metrics: PixelMetrics,
    pub f1: ThresholdResult,
    pub f2: ThresholdResult,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation AUPRC.
    pub model: ScorerModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub validation: Option<Validation>,
}

fn inputs(model: &ScorerModel, s: &PatchSample) -> (Tensor<f32>, Tensor<f32>, Option<Tensor<f32>>) {
    let aux = if model.config().use_aux {
        s.aux.as_ref().map(grid_tensor)
    } else {
        None
    };
    (grid_tensor(&s.pre), grid_tensor(&s.post), aux)
}

fn sample_gradient(model: &ScorerModel, s: &PatchSample, loss: &LossConfig) -> Result<(f64, Vec<f32>)> {
    let (pre, post, aux) = inputs(model, s);
    let f = model.forward(&pre, &post, aux.as_ref())?;
    let (l, d) = weighted_bce_logits(&f.logits.data, s.mask.data(), loss);
    let d = Tensor::from_vec(1, f.logits.h, f.logits.w, d);
    let mut grads = vec![0.0; model.param_count()];
    model.backward(&f, &d, &mut grads);
    Ok((l, grads))
}

/// Scores every sample and summarizes pixel-level validation metrics.
pub fn evaluate(model: &ScorerModel, samples: &[PatchSample], loss: &LossConfig) -> Result<Validation> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("validation split is empty".into()));
    }
    let per: Vec<(f64, Vec<(f32, bool)>)> = samples
        .par_iter()
        .map(|s| {
            let (pre, post, aux) = inputs(model, s);
            let f = model.forward(&pre, &post, aux.as_ref())?;
            let (l, _) = weighted_bce_logits(&f.logits.data, s.mask.data(), loss);
            let probs = f.probabilities();
            Ok((l, probs.into_iter().zip(s.mask.data()).map(|(p, &m)| (p, m >= 0.5)).collect()))
        })
        .collect::<Result<_>>()?;
    let loss_mean = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let scores: Vec<(f32, bool)> = per.into_iter().flat_map(|p| p.1).collect();
    let mut counts = ConfusionCounts::default();
    for &(p, l) in &scores {
        match (p >= 0.5, l) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(Validation {
        loss: loss_mean,
        auprc: auprc(&scores)?,
        counts,
        metrics: counts.metrics(),
        f1: sweep_thresholds(&scores, 1.0)?,
        f2: sweep_thresholds(&scores, 2.0)?,
    })
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Trains `model` in place of a copy and returns the best-AUPRC snapshot.
///
/// Per-sample gradients inside a batch are computed in parallel and summed
/// in batch order, so results do not depend on the thread count.
pub fn train(model: ScorerModel, train_set: &[PatchSample], val_set: &[PatchSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            log: Vec::new(),
            best_epoch: None,
            validation: None,
        });
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InsufficientData("train and val splits must be nonempty".into()));
    }
    let mut model = model;
    let mut opt = AdamW::new(model.param_count());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ScorerModel, Validation)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let order = balanced_epoch(train_set, cfg.positives_per_epoch, mix(cfg.seed, 1, epoch as u64))?;
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(f64, Vec<f32>)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let s = match &cfg.augment {
                        Some(a) => augment(&train_set[i], a, mix(cfg.seed, 2 + epoch as u64, (b * cfg.batch_size + k) as u64)),
                        None => train_set[i].clone(),
                    };
                    sample_gradient(&model, &s, &cfg.loss)
                })
                .collect::<Result<_>>()?;
            let mut grads = vec![0.0f32; model.param_count()];
            let scale = 1.0 / batch.len() as f32;
            for (l, g) in &results {
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch, loss: *l });
                }
                loss_sum += l;
                for (a, v) in grads.iter_mut().zip(g) {
                    *a += v * scale;
                }
            }
            opt.step(model.params_mut(), &grads, lr, cfg);
        }
        let train_loss = loss_sum / order.len() as f64;
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let val = evaluate(&model, val_set, &cfg.loss)?;
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss: val.loss,
            val_precision: val.metrics.precision,
            val_recall: val.metrics.recall,
            val_f1: val.metrics.f1,
            val_iou: val.metrics.iou,
            val_auprc: val.auprc,
        });
        if best.as_ref().map_or(true, |b| val.auprc > b.0) {
            best = Some((val.auprc, epoch, model.clone(), val));
        }
    }
    let (_, epoch, model, val) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: Some(epoch),
        validation: Some(val),
    })
}

pub fn write_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in log {
        w.serialize(row)?;
    }
    if log.is_empty() {
        w.write_record([
            "epoch",
            "lr",
            "train_loss",
            "val_loss",
            "val_precision",
            "val_recall",
            "val_f1",
            "val_iou",
            "val_auprc",
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    crate::raster::write_atomic(path.as_ref(), &bytes)
}
