use std::path::Path;

use avalanche::raster::read_raster;
use avalanche::scorer::{Checkpoint, ScorerConfig, ScorerModel};
use avalanche_cli::{run, RunManifest, EXIT_IO, EXIT_OK, EXIT_USAGE};

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run(["avalanche", "stats", "--bogus"]), EXIT_USAGE);
    assert_eq!(run(["avalanche", "extract", "--in", "x", "--stats", "y", "--out", "z", "--size", "48"]), EXIT_USAGE);
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(run(["avalanche", "--help"]), EXIT_OK);
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("stats.json"));
    let missing = s(&dir.path().join("nope"));
    assert_eq!(run(["avalanche", "stats", "--in", &missing, "--out", &out]), EXIT_IO);
}

#[test]
fn synth_then_infer_writes_probability_maps() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&dir.path().join("data"));
    let stats = s(&dir.path().join("stats.json"));
    let args = ["avalanche", "synth", "--out", &data, "--width", "64", "--height", "64", "--train", "1", "--val", "0", "--test", "1"];
    assert_eq!(run(args), EXIT_OK);
    assert_eq!(run(["avalanche", "stats", "--in", &data, "--out", &stats]), EXIT_OK);

    let model = ScorerModel::new(ScorerConfig::default(), 0).unwrap();
    let ckpt = dir.path().join("model");
    let st = avalanche::normalize::NormalizationStats::load(&stats).unwrap();
    Checkpoint::new(model, 64, st).save(&ckpt).unwrap();

    let pred = dir.path().join("pred");
    let code = run(["avalanche", "infer", "--model", &s(&ckpt), "--in", &data, "--out", &s(&pred), "--blend", "gaussian"]);
    assert_eq!(code, EXIT_OK);
    let map = read_raster(pred.join("event_001")).unwrap();
    assert_eq!((map.width(), map.height()), (64, 64));
    assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(pred.join("infer.run.json").exists());
}

#[test]
fn bench_reports_median_of_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(["avalanche", "bench", "--size", "64x64", "--patch", "32", "--repeat", "3", "--out", &s(dir.path())]);
    assert_eq!(code, EXIT_OK);
    let text = std::fs::read_to_string(dir.path().join("bench.run.json")).unwrap();
    let m: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(m.timings.len(), 3);
    let mut t = m.timings.clone();
    t.sort_by(f64::total_cmp);
    assert_eq!(m.median_seconds, Some(t[1]));
    assert_eq!(m.pixels, 64 * 64);
}
