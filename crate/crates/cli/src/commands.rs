use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use avalanche::blend::{run_scene, BlendMode};
use avalanche::decide::{binarize, morph_close, sweep_thresholds, ThresholdResult};
use avalanche::evalx::{
    auprc, confusion_counts, confusion_map, polygon_hit_rate, read_inventory, save_confusion_png, ClassHits, ConfusionCounts,
    HitReport, MetricReport,
};
use avalanche::normalize::NormalizationStats;
use avalanche::patches::{extract_patches, load_sample, read_manifest, save_sample, write_manifest, ManifestRow, PatchSpec};
use avalanche::raster::{read_raster, write_raster, RasterGrid};
use avalanche::scene::{dataset_stats, SceneStack, Split};
use avalanche::scorer::{train, write_log, Checkpoint, ScorerConfig, ScorerModel, Thresholds, TrainConfig};
use avalanche::synthgen::{generate, generate_dataset, read_scene_list, write_dataset, DatasetConfig, SynthConfig, INVENTORY_FILE, SCENES_CSV};

use crate::manifest::{manifest_path, median, RunManifest};
use crate::{
    BenchArgs, Command, EvalArgs, ExtractArgs, InferArgs, SceneSelection, StatsArgs, SynthArgs, TrainArgs, TuneArgs, UsageError,
};

pub const DEFAULT_PIXEL_AREA_M2: f64 = 100.0;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Stats(a) => cmd_stats(&a),
        Command::Extract(a) => cmd_extract(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    match threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(f),
        None => f(),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse::<Split>().map_err(|_| usage(format!("unknown split {s:?}; expected train, val or test")))
}

/// Scene directories with their event ids, in listing order.
fn resolve_scenes(sel: &SceneSelection, default_split: Split) -> Result<Vec<(String, PathBuf)>> {
    if !sel.scenes.is_empty() {
        return Ok(sel
            .scenes
            .iter()
            .map(|p| {
                let id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into());
                (id, p.clone())
            })
            .collect());
    }
    let Some(root) = &sel.root else {
        return Err(usage("either --in <dataset> or --scene <dir> is required"));
    };
    let split = match &sel.split {
        Some(s) => parse_split(s)?,
        None => default_split,
    };
    let entries = read_scene_list(root.join(SCENES_CSV))?;
    let out: Vec<_> = entries
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| (e.event_id, root.join(e.path)))
        .collect();
    if out.is_empty() {
        bail!("no {split} scenes listed under {}", root.display());
    }
    Ok(out)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| avalanche::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|source| {
        avalanche::Error::Header {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    avalanche::raster::write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let start = Instant::now();
    let dirs = resolve_scenes(&a.scenes, Split::Train)?;
    let scenes = dirs.iter().map(|(_, d)| SceneStack::load(d)).collect::<avalanche::Result<Vec<_>>>()?;
    let refs: Vec<&SceneStack> = scenes.iter().collect();
    let stats = dataset_stats(&refs)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    stats.save(&a.out)?;

    let mut m = RunManifest::new("stats", serde_json::json!({ "scenes": dirs.len() }));
    dirs.iter().for_each(|(_, d)| m.input(d));
    m.output(&a.out);
    let pixels = scenes.iter().map(|s| (s.width() * s.height()) as u64).sum();
    m.wall_seconds = start.elapsed().as_secs_f64();
    m.throughput(pixels, m.wall_seconds, scenes[0].pre.pixel_area());
    m.write(&manifest_path(&a.out, "stats", false))?;
    Ok(())
}

pub fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let start = Instant::now();
    let stride = a.stride.unwrap_or(a.size / 2);
    let spec = PatchSpec::new(a.size, stride).map_err(|e| usage(e.to_string()))?;
    let splits = a.splits.split(',').map(|s| parse_split(s.trim())).collect::<Result<Vec<_>>>()?;
    let stats = NormalizationStats::load(&a.stats)?;
    let entries = read_scene_list(a.root.join(SCENES_CSV))?;

    let mut rows = Vec::new();
    let mut pending = Vec::new();
    for e in entries.iter().filter(|e| splits.contains(&e.split)) {
        let scene = SceneStack::load(a.root.join(&e.path))?;
        if scene.mask.is_none() {
            bail!("scene {} has no mask", e.event_id);
        }
        let normalized = scene.normalized(&stats)?;
        for sample in extract_patches(&normalized, &spec)? {
            let rel = format!("{}/{}_r{:05}_c{:05}", e.split, sample.event_id, sample.origin.0, sample.origin.1);
            rows.push(ManifestRow {
                event_id: sample.event_id.clone(),
                split: e.split,
                origin_row: sample.origin.0,
                origin_col: sample.origin.1,
                positive: sample.positive,
                path: rel.clone(),
            });
            pending.push((rel, sample));
        }
    }
    if rows.is_empty() {
        bail!("no scenes in splits {} under {}", a.splits, a.root.display());
    }
    for split in &splits {
        create_dir(&a.out.join(split.as_str()))?;
    }
    for (rel, sample) in &pending {
        save_sample(sample, a.out.join(rel))?;
    }
    stats.save(a.out.join("stats.json"))?;
    let manifest = a.out.join("manifest.csv");
    write_manifest(&manifest, &rows)?;

    let mut m = RunManifest::new(
        "extract",
        serde_json::json!({ "size": a.size, "stride": stride, "splits": a.splits, "patches": rows.len() }),
    );
    m.input(&a.root);
    m.input(&a.stats);
    m.output(&manifest);
    m.wall_seconds = start.elapsed().as_secs_f64();
    m.write(&manifest_path(&a.out, "extract", true))?;
    Ok(())
}

/// Training settings as read from a config file; flags override fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub warmup: usize,
    pub lr: f64,
    pub wpos: f64,
    pub use_aux: bool,
    pub seed: u64,
    pub batch_size: usize,
    pub positives: Option<usize>,
    pub widths: Vec<usize>,
    pub augment: bool,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            warmup: t.warmup_epochs,
            lr: t.lr,
            wpos: t.loss.w_p,
            use_aux: false,
            seed: t.seed,
            batch_size: t.batch_size,
            positives: t.positives_per_epoch,
            widths: ScorerConfig::default().widths,
            augment: true,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
        }
    }
}

impl TrainSettings {
    fn resolve(a: &TrainArgs) -> Result<Self> {
        let mut s: TrainSettings = match &a.config {
            Some(p) => read_json(p)?,
            None => TrainSettings::default(),
        };
        macro_rules! take {
            ($($field:ident <- $flag:expr),*) => { $(if let Some(v) = $flag.clone() { s.$field = v.into(); })* };
        }
        take!(epochs <- a.epochs, warmup <- a.warmup, lr <- a.lr, wpos <- a.wpos, use_aux <- a.use_aux,
              seed <- a.seed, batch_size <- a.batch_size, widths <- a.widths, augment <- a.augment);
        if a.positives.is_some() {
            s.positives = a.positives;
        }
        Ok(s)
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let settings = TrainSettings::resolve(a)?;
    let manifest_dir = a.manifest.parent().unwrap_or(Path::new("."));
    let stats_path = a.stats.clone().unwrap_or_else(|| manifest_dir.join("stats.json"));
    let stats = NormalizationStats::load(&stats_path)?;
    let rows = read_manifest(&a.manifest)?;
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for row in &rows {
        match row.split {
            Split::Train => train_set.push(load_sample(&a.manifest, row)?),
            Split::Val => val_set.push(load_sample(&a.manifest, row)?),
            Split::Test => {}
        }
    }
    if train_set.is_empty() || val_set.is_empty() {
        bail!("manifest {} needs both train and val patches", a.manifest.display());
    }
    let patch_size = train_set[0].size();

    let mut scorer = ScorerConfig {
        widths: settings.widths.clone(),
        ..ScorerConfig::default()
    };
    if settings.use_aux {
        let channels = train_set[0]
            .aux
            .as_ref()
            .map(|g| g.channels())
            .ok_or_else(|| usage("--use-aux on but the patches carry no auxiliary channels"))?;
        scorer = scorer.with_aux(channels);
    }
    scorer.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = TrainConfig {
        epochs: settings.epochs,
        warmup_epochs: settings.warmup,
        lr: settings.lr,
        beta1: settings.beta1,
        beta2: settings.beta2,
        weight_decay: settings.weight_decay,
        batch_size: settings.batch_size,
        positives_per_epoch: settings.positives,
        seed: settings.seed,
        loss: avalanche::scorer::LossConfig { w_p: settings.wpos },
        augment: settings.augment.then(|| avalanche::patches::AugmentConfig {
            sar_fill: sar_fill(&stats, &train_set[0].pre),
            ..Default::default()
        }),
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let model = ScorerModel::new(scorer, settings.seed)?;
    let outcome = train(model, &train_set, &val_set, &cfg)?;

    let mut ckpt = Checkpoint::new(outcome.model, patch_size, stats);
    if let Some(v) = &outcome.validation {
        ckpt.header.thresholds = Thresholds {
            f1: Some(v.f1),
            f2: Some(v.f2),
        };
    }
    ckpt.header.validation = outcome.validation.clone();
    ckpt.header.best_epoch = outcome.best_epoch;
    ckpt.header.train = Some(cfg.clone());
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ckpt.save(&a.out)?;
    let base = a.out.with_extension("");
    let log_path = a.log.clone().unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", base.display())));
    write_log(&log_path, &outcome.log)?;

    let mut m = RunManifest::new("train", &settings);
    m.seed = Some(settings.seed);
    m.input(&a.manifest);
    m.input(&stats_path);
    m.output(base.with_extension("json"));
    m.output(base.with_extension("bin"));
    m.output(&log_path);
    m.wall_seconds = start.elapsed().as_secs_f64();
    m.write(&manifest_path(&base.with_extension("json"), "train", false))?;
    Ok(())
}

/// Normalized values of invalid SAR pixels, used to fill areas that
/// geometric augmentation pulls in from outside the patch.
fn sar_fill(stats: &NormalizationStats, pre: &RasterGrid) -> Vec<f32> {
    pre.channel_names()
        .iter()
        .map(|n| stats.get(n).map(|s| s.sentinel as f32).unwrap_or(0.0))
        .collect()
}

fn blend_mode(name: &str, sigma: Option<f64>, border: Option<usize>) -> Result<BlendMode> {
    let mut mode: BlendMode = name.parse().map_err(|e: avalanche::Error| usage(e.to_string()))?;
    match &mut mode {
        BlendMode::Gaussian { sigma: s } => *s = sigma,
        BlendMode::CenterCrop { border: b } => *b = border,
        _ if sigma.is_some() || border.is_some() => {
            return Err(usage(format!("--sigma/--crop-border do not apply to blend mode {name}")))
        }
        _ => {}
    }
    if let BlendMode::Gaussian { sigma: Some(s) } = mode {
        if !(s > 0.0) {
            return Err(usage("--sigma must be positive"));
        }
    }
    Ok(mode)
}

/// Normalizes a scene for a model, dropping auxiliary channels it does not use.
fn prepare_scene(mut scene: SceneStack, model: &ScorerModel, stats: &NormalizationStats) -> Result<SceneStack> {
    if !model.config().use_aux {
        scene.aux = None;
    } else if scene.aux.is_none() {
        bail!("model expects auxiliary channels but scene {} has none", scene.event_id);
    }
    Ok(scene.normalized(stats)?)
}

#[derive(Debug, Serialize)]
struct InferSettings {
    blend: BlendMode,
    patch: usize,
    stride: usize,
    threads: Option<usize>,
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let start = Instant::now();
    let mode = blend_mode(&a.blend, a.sigma, a.crop_border)?;
    let ckpt = Checkpoint::load(&a.model)?;
    let size = ckpt.header.patch_size;
    let stride = a.stride.unwrap_or((size / 2).max(1));
    let spec = PatchSpec::new(size, stride).map_err(|e| usage(e.to_string()))?;
    let dirs = resolve_scenes(&a.scenes, Split::Test)?;

    let maps = with_threads(a.threads, || {
        dirs.iter()
            .map(|(id, d)| {
                let mut scene = SceneStack::load(d)?;
                scene.event_id = id.clone();
                let scene = prepare_scene(scene, &ckpt.model, &ckpt.header.stats)?;
                Ok((id.clone(), run_scene(&ckpt.model, &scene, &spec, mode)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let elapsed = start.elapsed().as_secs_f64();

    create_dir(&a.out)?;
    let mut m = RunManifest::new(
        "infer",
        InferSettings {
            blend: mode,
            patch: size,
            stride: mode.effective_spec(&spec).stride,
            threads: a.threads,
        },
    );
    m.input(&a.model);
    let mut pixels = 0u64;
    for ((_, d), (id, map)) in dirs.iter().zip(&maps) {
        let path = a.out.join(id);
        write_raster(map, &path)?;
        m.input(d);
        m.output(path.with_extension("json"));
        pixels += (map.width() * map.height()) as u64;
    }
    m.wall_seconds = start.elapsed().as_secs_f64();
    let area = maps.first().and_then(|(_, g)| g.pixel_area());
    m.throughput(pixels, elapsed, area);
    m.write(&manifest_path(&a.out, "infer", true))?;
    Ok(())
}

fn load_prediction(pred: &Path, id: &str) -> Result<RasterGrid> {
    let grid = read_raster(pred.join(id))?;
    if grid.channels() != 1 {
        bail!("prediction for {id} has {} channels, expected 1", grid.channels());
    }
    Ok(grid)
}

fn scored_pixels(pred: &RasterGrid, mask: &RasterGrid) -> Result<Vec<(f32, bool)>> {
    if (pred.width(), pred.height()) != (mask.width(), mask.height()) {
        bail!(
            "prediction is {}x{} but mask is {}x{}",
            pred.height(),
            pred.width(),
            mask.height(),
            mask.width()
        );
    }
    Ok(pred.data().iter().zip(mask.data()).map(|(&p, &m)| (p, m >= 0.5)).collect())
}

fn scene_mask(dir: &Path, id: &str) -> Result<RasterGrid> {
    SceneStack::load(dir)?.mask.with_context(|| format!("scene {id} has no mask"))
}

pub fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let start = Instant::now();
    if !(a.beta > 0.0) {
        return Err(usage("--beta must be positive"));
    }
    let dirs = resolve_scenes(&a.scenes, Split::Val)?;
    let mut scores = Vec::new();
    for (id, d) in &dirs {
        let pred = load_prediction(&a.pred, id)?;
        scores.extend(scored_pixels(&pred, &scene_mask(d, id)?)?);
    }
    let result = sweep_thresholds(&scores, a.beta)?;
    write_json(&a.out, &result)?;

    let mut m = RunManifest::new("tune", serde_json::json!({ "beta": a.beta }));
    m.input(&a.pred);
    dirs.iter().for_each(|(_, d)| m.input(d));
    m.output(&a.out);
    m.wall_seconds = start.elapsed().as_secs_f64();
    m.pixels = scores.len() as u64;
    m.write(&manifest_path(&a.out, "tune", false))?;
    Ok(())
}

/// Report written by `eval`: pooled metrics plus one entry per scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricReport,
    pub scenes: BTreeMap<String, MetricReport>,
}

fn merge_hits(reports: &[&HitReport], min_size_class: u8) -> Option<HitReport> {
    if reports.is_empty() {
        return None;
    }
    let mut classes: BTreeMap<u8, ClassHits> = BTreeMap::new();
    for r in reports {
        for (&k, h) in &r.classes {
            let e = classes.entry(k).or_default();
            e.attempted += h.attempted;
            e.hit += h.hit;
        }
    }
    let overall = classes
        .iter()
        .filter(|(&k, _)| k >= min_size_class)
        .fold(ClassHits::default(), |acc, (_, h)| ClassHits {
            attempted: acc.attempted + h.attempted,
            hit: acc.hit + h.hit,
        });
    Some(HitReport {
        classes,
        min_size_class,
        overall,
        overall_rate: overall.rate(),
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let dirs = resolve_scenes(&a.scenes, Split::Test)?;
    if a.inventory.is_some() && dirs.len() != 1 {
        return Err(usage("--inventory applies to single-scene evaluation only"));
    }
    let (threshold, tuned) = match (&a.threshold, &a.thresholds) {
        (Some(t), _) => (*t, None),
        (None, Some(p)) => {
            let r: ThresholdResult = read_json(p)?;
            (r.threshold, Some(r))
        }
        (None, None) => (0.5, None),
    };
    let morphology = !a.no_morph;
    let out_dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(out_dir)?;
    let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "eval".into());

    let mut scenes = BTreeMap::new();
    let mut total = ConfusionCounts::default();
    let mut all_scores = Vec::new();
    let mut hit_reports = Vec::new();
    let mut pngs = Vec::new();
    for (id, d) in &dirs {
        let prob = load_prediction(&a.pred, id)?;
        let mask = scene_mask(d, id)?;
        let scores = scored_pixels(&prob, &mask)?;
        let mut pred = binarize(&prob, threshold);
        if morphology {
            pred = morph_close(&pred);
        }
        let counts = confusion_counts(&pred, &mask)?;
        let inv_path = a.inventory.clone().unwrap_or_else(|| d.join(INVENTORY_FILE));
        let hits = if inv_path.exists() {
            let inventory = read_inventory(&inv_path)?;
            if inventory.is_empty() {
                None
            } else {
                Some(polygon_hit_rate(&pred, &inventory, a.min_size_class)?)
            }
        } else if a.inventory.is_some() {
            bail!("inventory {} not found", inv_path.display());
        } else {
            None
        };
        let png = out_dir.join(format!("{stem}_{id}.png"));
        save_confusion_png(&confusion_map(&pred, &mask)?, &png)?;
        pngs.push(png);
        scenes.insert(
            id.clone(),
            MetricReport {
                threshold,
                morphology,
                counts,
                metrics: counts.metrics(),
                auprc: auprc(&scores).ok(),
                hits: hits.clone(),
                tuned,
            },
        );
        total = total.merge(counts);
        all_scores.extend(scores);
        if let Some(h) = hits {
            hit_reports.push(h);
        }
    }
    let report = EvalReport {
        overall: MetricReport {
            threshold,
            morphology,
            counts: total,
            metrics: total.metrics(),
            auprc: auprc(&all_scores).ok(),
            hits: merge_hits(&hit_reports.iter().collect::<Vec<_>>(), a.min_size_class),
            tuned,
        },
        scenes,
    };
    write_json(&a.out, &report)?;

    let mut m = RunManifest::new(
        "eval",
        serde_json::json!({ "threshold": threshold, "morphology": morphology, "min_size_class": a.min_size_class }),
    );
    m.input(&a.pred);
    dirs.iter().for_each(|(_, d)| m.input(d));
    m.output(&a.out);
    pngs.iter().for_each(|p| m.output(p));
    m.pixels = all_scores.len() as u64;
    m.wall_seconds = start.elapsed().as_secs_f64();
    m.write(&manifest_path(&a.out, "eval", false))?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg: DatasetConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.scene.seed = v;
    }
    if let Some(v) = a.width {
        cfg.scene.width = v;
    }
    if let Some(v) = a.height {
        cfg.scene.height = v;
    }
    if let Some(v) = a.contrast {
        cfg.scene.contrast_db = v;
    }
    if let Some(v) = a.train {
        cfg.train = v;
    }
    if let Some(v) = a.val {
        cfg.val = v;
    }
    if let Some(v) = a.test {
        cfg.test = v;
    }
    cfg.scene.validate().map_err(|e| usage(e.to_string()))?;
    let scenes = generate_dataset(&cfg)?;
    write_dataset(&a.out, &scenes)?;

    let mut m = RunManifest::new("synth", &cfg);
    m.seed = Some(cfg.scene.seed);
    m.output(a.out.join(SCENES_CSV));
    for (e, _) in &scenes {
        m.output(a.out.join(&e.path));
    }
    m.pixels = scenes.iter().map(|(_, s)| (s.scene.width() * s.scene.height()) as u64).sum();
    m.wall_seconds = start.elapsed().as_secs_f64();
    m.write(&manifest_path(&a.out, "synth", true))?;
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("--size must look like WIDTHxHEIGHT, got {s:?}"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

#[derive(Debug, Serialize)]
struct BenchSettings {
    width: usize,
    height: usize,
    repeat: usize,
    threads: Option<usize>,
    blend: BlendMode,
    patch: usize,
    stride: usize,
    model: Option<PathBuf>,
}

/// Published reference point for the throughput report.
pub const REFERENCE_THROUGHPUT: &str =
    "reference: roughly 87 km2/s reported on an NVIDIA A100 with 128 px patches at stride 64; hardware specific, not a target";

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let start = Instant::now();
    let (width, height) = parse_size(&a.size)?;
    if a.repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }
    if let Some(area) = a.pixel_area {
        if !(area > 0.0) {
            return Err(usage("--pixel-area must be positive"));
        }
    }
    let mode = blend_mode(&a.blend, None, None)?;
    let (model, stats, patch) = match &a.model {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            let patch = c.header.patch_size;
            (c.model, Some(c.header.stats), patch)
        }
        None => (ScorerModel::new(ScorerConfig::default(), a.seed)?, None, a.patch),
    };
    let stride = a.stride.unwrap_or((patch / 2).max(1));
    let spec = PatchSpec::new(patch, stride).map_err(|e| usage(e.to_string()))?;
    if width < patch || height < patch {
        return Err(usage(format!("scene {width}x{height} is smaller than the {patch} px patch")));
    }
    let synth = SynthConfig {
        width,
        height,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let generated = generate(&synth, "bench")?;
    let stats = match stats {
        Some(s) => s,
        None => dataset_stats(&[&generated.scene])?,
    };
    let scene = prepare_scene(generated.scene, &model, &stats)?;

    let timings = with_threads(a.threads, || {
        (0..a.repeat)
            .map(|_| {
                let t = Instant::now();
                run_scene(&model, &scene, &spec, mode)?;
                Ok(t.elapsed().as_secs_f64())
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let mut m = RunManifest::new(
        "bench",
        BenchSettings {
            width,
            height,
            repeat: a.repeat,
            threads: a.threads,
            blend: mode,
            patch,
            stride: mode.effective_spec(&spec).stride,
            model: a.model.clone(),
        },
    );
    m.seed = Some(a.seed);
    if let Some(p) = &a.model {
        m.input(p);
    }
    let med = median(&timings).expect("at least one repeat");
    let area = a.pixel_area.or(scene.pre.pixel_area()).or(Some(DEFAULT_PIXEL_AREA_M2));
    m.throughput((width * height) as u64, med, area);
    m.timings = timings;
    m.median_seconds = Some(med);
    m.reference = Some(REFERENCE_THROUGHPUT.into());
    m.wall_seconds = start.elapsed().as_secs_f64();
    create_dir(&a.out)?;
    let path = manifest_path(&a.out, "bench", true);
    m.write(&path)?;
    println!(
        "{REFERENCE_THROUGHPUT}\nscene {width}x{height}, {} repeats, median {:.3} s: {:.0} pixels/s, {:.4} km2/s",
        a.repeat,
        med,
        m.pixels_per_second.unwrap_or(0.0),
        m.km2_per_second.unwrap_or(0.0)
    );
    Ok(())
}
