use avalanche::patches::{extract_patches, PatchSample, PatchSpec};
use avalanche::scene::dataset_stats;
use avalanche::scorer::{
    grad_check_indices, grad_check_with, sample_indices, train, Checkpoint, LossConfig, ScorerConfig, ScorerModel,
    TrainConfig,
};
use avalanche::synthgen::{generate, SynthConfig};

fn small_model(seed: u64) -> ScorerModel {
    let cfg = ScorerConfig {
        widths: vec![8, 16],
        ..ScorerConfig::default()
    };
    ScorerModel::new(cfg, seed).unwrap()
}

/// Positive and negative 32 px patches from a normalized synthetic scene,
/// plus whether each patch is free of invalid pixels.
fn patches(seed: u64) -> Vec<(PatchSample, bool)> {
    let synth = generate(&SynthConfig { seed, ..SynthConfig::default() }, "t").unwrap();
    let stats = dataset_stats(&[&synth.scene]).unwrap();
    let scene = synth.scene.normalized(&stats).unwrap();
    let w = synth.scene.width();
    extract_patches(&scene, &PatchSpec::new(32, 16).unwrap())
        .unwrap()
        .into_iter()
        .map(|p| {
            let (r, c) = p.origin;
            let clean = (r..r + 32).all(|y| (c..c + 32).all(|x| !synth.invalid[y * w + x]));
            (p, clean)
        })
        .collect()
}

fn clean_positive(seed: u64) -> PatchSample {
    patches(seed).into_iter().find(|(p, clean)| p.positive && *clean).unwrap().0
}

#[test]
fn analytic_gradient_matches_central_differences_at_fine_step() {
    let model = small_model(1);
    let sample = clean_positive(21);
    let err = grad_check_indices(&model, &sample, &LossConfig::default(), 1e-4, &sample_indices(&model, 8, 0)).unwrap();
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn corrupted_gradient_is_detected() {
    let model = small_model(1);
    let sample = clean_positive(21);
    let indices = sample_indices(&model, 8, 0);
    let err = grad_check_with(&model, &sample, &LossConfig::default(), 1e-3, &indices, |g| {
        for v in g.iter_mut() {
            *v = -*v;
        }
    })
    .unwrap();
    assert!(err > 1e-2, "sign flip went unnoticed: {err:e}");
}

#[test]
fn empty_subset_reports_zero() {
    let model = small_model(1);
    let sample = clean_positive(21);
    assert_eq!(grad_check_indices(&model, &sample, &LossConfig::default(), 1e-3, &[]).unwrap(), 0.0);
}

#[test]
fn finite_difference_error_shrinks_with_epsilon() {
    let model = small_model(2);
    let sample = clean_positive(21);
    let indices = sample_indices(&model, 4, 3);
    let loss = LossConfig::default();
    let coarse = grad_check_indices(&model, &sample, &loss, 1e-2, &indices).unwrap();
    let fine = grad_check_indices(&model, &sample, &loss, 1e-3, &indices).unwrap();
    // central differences are second order: a tenth of ε should cut the error by far more than 10
    assert!(fine < coarse / 10.0, "ε=1e-2: {coarse:e}, ε=1e-3: {fine:e}");
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        warmup_epochs: 1,
        lr: 1e-3,
        batch_size: 8,
        positives_per_epoch: Some(8),
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let data: Vec<PatchSample> = patches(5).into_iter().map(|p| p.0).collect();
    let (val_set, train_set): (Vec<_>, Vec<_>) = data.into_iter().enumerate().partition(|(i, _)| i % 4 == 0);
    let val_set: Vec<PatchSample> = val_set.into_iter().map(|p| p.1).collect();
    let train_set: Vec<PatchSample> = train_set.into_iter().map(|p| p.1).collect();
    assert!(val_set.iter().any(|p| p.positive));
    let a = train(small_model(3), &train_set, &val_set, &quick_config(2)).unwrap();
    let b = train(small_model(3), &train_set, &val_set, &quick_config(2)).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 2);
    assert!(a.best_epoch.is_some());
}

#[test]
fn zero_epochs_returns_initial_model() {
    let data: Vec<PatchSample> = patches(5).into_iter().map(|p| p.0).collect();
    let init = small_model(3);
    let out = train(init.clone(), &data, &data, &quick_config(0)).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.model.params(), init.params());
}

#[test]
fn checkpoint_round_trip() {
    let synth = generate(&SynthConfig::default(), "ck").unwrap();
    let stats = dataset_stats(&[&synth.scene]).unwrap();
    let model = small_model(9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model");
    Checkpoint::new(model.clone(), 32, stats.clone()).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.model.params(), model.params());
    assert_eq!(back.model.config(), model.config());
    assert_eq!(back.header.patch_size, 32);
    assert_eq!(back.header.stats, stats);
}
