use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, Real};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the positive-class term.
    pub w_p: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { w_p: 3.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_p > 0.0 && self.w_p.is_finite()) {
            return Err(Error::InvalidArgument(format!("w_p must be positive, got {}", self.w_p)));
        }
        Ok(())
    }
}

fn pixel_loss(p: f64, y: f64, w_p: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(w_p * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean per-pixel weighted binary cross-entropy, accumulated in 64-bit.
pub fn weighted_bce<T: Real>(prediction: &[T], target: &[T], config: &LossConfig) -> f64 {
    assert_eq!(prediction.len(), target.len(), "prediction and target lengths differ");
    if prediction.is_empty() {
        return 0.0;
    }
    let sum: f64 = prediction
        .iter()
        .zip(target)
        .map(|(&p, &y)| pixel_loss(p.as_f64(), y.as_f64(), config.w_p))
        .sum();
    sum / prediction.len() as f64
}

/// Loss from logits together with its gradient with respect to each logit.
/// Pixels whose probability sits in the clamped region get zero gradient.
pub fn weighted_bce_logits<T: Real>(logits: &[T], target: &[T], config: &LossConfig) -> (f64, Vec<T>) {
    let n = logits.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = logits
        .iter()
        .zip(target)
        .map(|(&z, &y)| {
            let p = sigmoid(z.as_f64());
            let y = y.as_f64();
            sum += pixel_loss(p, y, config.w_p);
            let g = if p <= EPS || p >= 1.0 - EPS {
                0.0
            } else {
                -config.w_p * y * (1.0 - p) + (1.0 - y) * p
            };
            T::real(g / n)
        })
        .collect();
    (sum / n, grad)
}
