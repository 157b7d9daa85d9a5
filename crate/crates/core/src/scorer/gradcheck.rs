//! Finite-difference verification of the analytic parameter gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{weighted_bce_logits, LossConfig};
use super::network::{grid_tensor, Scorer, ScorerModel};
use super::tensor::Tensor;
use crate::error::Result;
use crate::patches::PatchSample;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

struct Problem {
    model: Scorer<f64>,
    pre: Tensor<f64>,
    post: Tensor<f64>,
    aux: Option<Tensor<f64>>,
    target: Vec<f64>,
    loss: LossConfig,
}

impl Problem {
    fn new(model: &ScorerModel, sample: &PatchSample, loss: &LossConfig) -> Self {
        Self {
            model: model.cast(),
            pre: grid_tensor(&sample.pre),
            post: grid_tensor(&sample.post),
            aux: sample.aux.as_ref().filter(|_| model.config().use_aux).map(grid_tensor),
            target: sample.mask.data().iter().map(|&v| v as f64).collect(),
            loss: *loss,
        }
    }

    fn loss_at(&self, model: &Scorer<f64>) -> Result<f64> {
        let f = model.forward(&self.pre, &self.post, self.aux.as_ref())?;
        Ok(weighted_bce_logits(&f.logits.data, &self.target, &self.loss).0)
    }

    fn analytic(&self) -> Result<Vec<f64>> {
        let f = self.model.forward(&self.pre, &self.post, self.aux.as_ref())?;
        let (_, d) = weighted_bce_logits(&f.logits.data, &self.target, &self.loss);
        let d = Tensor::from_vec(1, f.logits.h, f.logits.w, d);
        let mut grads = vec![0.0; self.model.param_count()];
        self.model.backward(&f, &d, &mut grads);
        Ok(grads)
    }

    fn numeric(&self, index: usize, epsilon: f64) -> Result<f64> {
        let mut m = self.model.clone();
        let base = m.params()[index];
        m.params_mut()[index] = base + epsilon;
        let up = self.loss_at(&m)?;
        m.params_mut()[index] = base - epsilon;
        let down = self.loss_at(&m)?;
        Ok((up - down) / (2.0 * epsilon))
    }
}

/// Picks `per_layer` random parameter indices from every convolution, so
/// each layer of the network is exercised.
pub fn sample_indices(model: &ScorerModel, per_layer: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for r in model.layer_ranges() {
        let n = per_layer.min(r.len());
        let mut picked: Vec<usize> = sample(&mut rng, r.len(), n).into_iter().map(|i| r.start + i).collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    out
}

/// Max relative error between the analytic gradient and central differences
/// over `indices`, with the whole check carried out in 64-bit.
pub fn grad_check_indices(model: &ScorerModel, sample: &PatchSample, loss: &LossConfig, epsilon: f64, indices: &[usize]) -> Result<f64> {
    grad_check_with(model, sample, loss, epsilon, indices, |_| {})
}

/// Like [`grad_check_indices`], but lets the caller tamper with the analytic
/// gradient before comparison.
pub fn grad_check_with(
    model: &ScorerModel,
    sample: &PatchSample,
    loss: &LossConfig,
    epsilon: f64,
    indices: &[usize],
    tamper: impl FnOnce(&mut [f64]),
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let problem = Problem::new(model, sample, loss);
    let mut analytic = problem.analytic()?;
    tamper(&mut analytic);
    let mut worst: f64 = 0.0;
    for &i in indices {
        let numeric = problem.numeric(i, epsilon)?;
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Checks `per_layer` random parameters in every layer.
pub fn grad_check(model: &ScorerModel, sample: &PatchSample, epsilon: f64, per_layer: usize, seed: u64) -> Result<f64> {
    let indices = sample_indices(model, per_layer, seed);
    grad_check_indices(model, sample, &LossConfig::default(), epsilon, &indices)
}
