//! Overlapping patch extraction, event-aware balanced sampling and
//! train-time augmentation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{read_raster, write_raster, RasterGrid};
use crate::scene::{SceneStack, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    pub stride: usize,
}

impl PatchSpec {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 || stride > size {
            return Err(Error::InvalidArgument(format!(
                "patch stride must satisfy 1 <= stride <= size, got size={size} stride={stride}"
            )));
        }
        Ok(Self { size, stride })
    }

    /// Half-overlapping tiling: stride = size / 2.
    pub fn half_overlap(size: usize) -> Result<Self> {
        Self::new(size, (size / 2).max(1))
    }
}

/// Window origins along one axis: `0, stride, 2·stride, …` plus a final
/// origin clamped to `dim - size` when the regular grid stops short of the edge.
pub fn tile_origins(dim: usize, size: usize, stride: usize) -> Result<Vec<usize>> {
    if size > dim {
        return Err(Error::Dimension(format!("scene extent {dim} is smaller than patch size {size}")));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let last = dim - size;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if *origins.last().unwrap() != last {
        origins.push(last);
    }
    Ok(origins)
}

/// All `(row, col)` origins of a scene tiling, row-major.
pub fn grid_origins(height: usize, width: usize, spec: &PatchSpec) -> Result<Vec<(usize, usize)>> {
    let rows = tile_origins(height, spec.size, spec.stride)?;
    let cols = tile_origins(width, spec.size, spec.stride)?;
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub event_id: String,
    pub origin: (usize, usize),
    pub pre: RasterGrid,
    pub post: RasterGrid,
    pub aux: Option<RasterGrid>,
    pub mask: RasterGrid,
    pub positive: bool,
}

impl PatchSample {
    pub fn size(&self) -> usize {
        self.mask.width()
    }

    fn refresh_label(&mut self) {
        self.positive = self.mask.data().iter().any(|&v| v >= 0.5);
    }

    /// Packs the sample into one raster: pre, post, aux (if any), mask.
    pub fn to_raster(&self) -> Result<RasterGrid> {
        let mut parts = vec![&self.pre, &self.post];
        if let Some(a) = &self.aux {
            parts.push(a);
        }
        parts.push(&self.mask);
        let mut names: Vec<String> = Vec::new();
        names.extend(self.pre.channel_names().iter().map(|n| format!("pre_{n}")));
        names.extend(self.post.channel_names().iter().map(|n| format!("post_{n}")));
        if let Some(a) = &self.aux {
            names.extend(a.channel_names().iter().cloned());
        }
        names.push("mask".into());
        RasterGrid::stack(&parts)?.with_channel_names(names)
    }

    pub fn from_raster(event_id: impl Into<String>, origin: (usize, usize), grid: &RasterGrid) -> Result<Self> {
        let names = grid.channel_names();
        let pick = |pred: &dyn Fn(&str) -> bool| -> Result<Option<RasterGrid>> {
            let idx: Vec<usize> = (0..names.len()).filter(|&i| pred(&names[i])).collect();
            if idx.is_empty() {
                return Ok(None);
            }
            let planes = idx
                .iter()
                .map(|&i| grid.extract_channel(i))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&RasterGrid> = planes.iter().collect();
            RasterGrid::stack(&refs).map(Some)
        };
        let strip = |g: RasterGrid, prefix: &str| -> Result<RasterGrid> {
            let n: Vec<String> = g
                .channel_names()
                .iter()
                .map(|s| s.trim_start_matches(prefix).to_string())
                .collect();
            g.with_channel_names(n)
        };
        let pre = pick(&|n| n.starts_with("pre_"))?
            .ok_or_else(|| Error::InvalidArgument("sample raster lacks pre_* channels".into()))?;
        let post = pick(&|n| n.starts_with("post_"))?
            .ok_or_else(|| Error::InvalidArgument("sample raster lacks post_* channels".into()))?;
        let aux = pick(&|n| !n.starts_with("pre_") && !n.starts_with("post_") && n != "mask")?;
        let mask = pick(&|n| n == "mask")?
            .ok_or_else(|| Error::InvalidArgument("sample raster lacks a mask channel".into()))?;
        let mut s = Self {
            event_id: event_id.into(),
            origin,
            pre: strip(pre, "pre_")?,
            post: strip(post, "post_")?,
            aux,
            mask,
            positive: false,
        };
        s.refresh_label();
        Ok(s)
    }
}

/// Cuts every window of `spec` out of a scene that carries a reference mask.
pub fn extract_patches(scene: &SceneStack, spec: &PatchSpec) -> Result<Vec<PatchSample>> {
    scene.validate()?;
    let mask = scene
        .mask
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("scene {} has no reference mask", scene.event_id)))?;
    let origins = grid_origins(scene.height(), scene.width(), spec)?;
    origins
        .par_iter()
        .map(|&(r, c)| {
            let s = spec.size;
            let mut m = mask.window(r, c, s, s)?.with_channel_names(vec!["mask"])?;
            for v in m.data_mut() {
                *v = if *v >= 0.5 { 1.0 } else { 0.0 };
            }
            let mut sample = PatchSample {
                event_id: scene.event_id.clone(),
                origin: (r, c),
                pre: scene.pre.window(r, c, s, s)?,
                post: scene.post.window(r, c, s, s)?,
                aux: scene.aux.as_ref().map(|a| a.window(r, c, s, s)).transpose()?,
                mask: m,
                positive: false,
            };
            sample.refresh_label();
            Ok(sample)
        })
        .collect()
}

fn split_quota(total: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut q = vec![total / parts; parts];
    let mut order: Vec<usize> = (0..parts).collect();
    order.shuffle(rng);
    for &i in order.iter().take(total % parts) {
        q[i] += 1;
    }
    q
}

/// Per-event negative quotas summing to `target` (or to the pool total if smaller).
///
/// Quotas start as an equal split; whatever an exhausted pool cannot supply
/// is redistributed equally over the pools that still have capacity.
pub fn event_quotas(pool_sizes: &[usize], target: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut quotas = vec![0usize; pool_sizes.len()];
    let mut remaining = target.min(pool_sizes.iter().sum());
    while remaining > 0 {
        let open: Vec<usize> = (0..pool_sizes.len()).filter(|&i| quotas[i] < pool_sizes[i]).collect();
        let shares = split_quota(remaining, open.len(), rng);
        remaining = 0;
        for (&i, share) in open.iter().zip(shares) {
            let take = share.min(pool_sizes[i] - quotas[i]);
            quotas[i] += take;
            remaining += share - take;
        }
    }
    quotas
}

/// Builds one balanced epoch and returns indices into `samples`.
///
/// The epoch holds `n` positives and `n` negatives, `n` being the configured
/// positive count (default: all positives) capped by the negative pool.
/// Negatives are drawn without replacement per event with equal quotas.
pub fn balanced_epoch(samples: &[PatchSample], positives: Option<usize>, seed: u64) -> Result<Vec<usize>> {
    let labels: Vec<(&str, bool)> = samples.iter().map(|s| (s.event_id.as_str(), s.positive)).collect();
    balanced_epoch_from_labels(&labels, positives, seed)
}

pub fn balanced_epoch_from_labels(labels: &[(&str, bool)], positives: Option<usize>, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, &(event, positive)) in labels.iter().enumerate() {
        if positive {
            pos.push(i);
        } else {
            neg.entry(event).or_default().push(i);
        }
    }
    let neg_total: usize = neg.values().map(Vec::len).sum();
    if pos.is_empty() || neg_total == 0 {
        return Err(Error::InsufficientData(format!(
            "balanced sampling needs both classes, found {} positives and {neg_total} negatives",
            pos.len()
        )));
    }
    let n = positives.unwrap_or(pos.len()).min(pos.len()).min(neg_total);
    pos.shuffle(&mut rng);
    pos.truncate(n);

    let pools: Vec<Vec<usize>> = neg.into_values().collect();
    let sizes: Vec<usize> = pools.iter().map(Vec::len).collect();
    let quotas = event_quotas(&sizes, n, &mut rng);
    let mut epoch = pos;
    for (mut pool, q) in pools.into_iter().zip(quotas) {
        pool.shuffle(&mut rng);
        epoch.extend_from_slice(&pool[..q]);
    }
    epoch.shuffle(&mut rng);
    Ok(epoch)
}

/// Seeded subset with equal positive and negative counts (used for test splits).
pub fn balanced_subset(samples: Vec<PatchSample>, seed: u64) -> Vec<PatchSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| s.positive);
    let n = pos.len().min(neg.len());
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    pos.truncate(n);
    neg.truncate(n);
    let mut out: Vec<PatchSample> = pos.into_iter().chain(neg).collect();
    out.sort_by(|a, b| (a.event_id.as_str(), a.origin).cmp(&(b.event_id.as_str(), b.origin)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub rot90_prob: f64,
    pub affine_prob: f64,
    /// Maximum absolute rotation, degrees.
    pub rotation_deg: f64,
    /// Maximum absolute translation as a fraction of patch size.
    pub translate_frac: f64,
    pub scale_range: (f64, f64),
    pub shear_deg: f64,
    pub noise_std: f64,
    pub gain_range: (f64, f64),
    /// Border fill for each SAR channel after an affine warp (the channel sentinels).
    pub sar_fill: Vec<f32>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rot90_prob: 0.5,
            affine_prob: 0.5,
            rotation_deg: 10.0,
            translate_frac: 0.05,
            scale_range: (0.9, 1.1),
            shear_deg: 5.0,
            noise_std: 0.05,
            gain_range: (0.95, 1.05),
            sar_fill: Vec::new(),
        }
    }
}

impl AugmentConfig {
    /// A configuration that leaves every sample untouched.
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            rot90_prob: 0.0,
            affine_prob: 0.0,
            noise_std: 0.0,
            gain_range: (1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("rot90_prob", self.rot90_prob),
            ("affine_prob", self.affine_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let (lo, hi) = self.scale_range;
        if !(lo <= 1.0 && hi >= 1.0 && lo > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale range must straddle 1, got ({lo}, {hi})"
            )));
        }
        if self.noise_std < 0.0 || self.gain_range.0 > self.gain_range.1 {
            return Err(Error::InvalidArgument("invalid radiometric ranges".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Inverse affine map from output pixel to source pixel, about the patch center.
#[derive(Debug, Clone, Copy)]
struct InverseAffine {
    m: [[f64; 2]; 2],
    t: [f64; 2],
    center: f64,
}

impl InverseAffine {
    fn source(&self, row: usize, col: usize) -> (f64, f64) {
        let y = row as f64 - self.center - self.t[0];
        let x = col as f64 - self.center - self.t[1];
        (
            self.m[0][0] * y + self.m[0][1] * x + self.center,
            self.m[1][0] * y + self.m[1][1] * x + self.center,
        )
    }
}

fn flip_h(g: &mut RasterGrid) {
    let w = g.width();
    for c in 0..g.channels() {
        for row in g.channel_mut(c).chunks_mut(w) {
            row.reverse();
        }
    }
}

/// Rotates a square grid by 90° counter-clockwise `k` times.
fn rot90(g: &RasterGrid, k: usize) -> RasterGrid {
    let n = g.width();
    let mut out = g.clone();
    for c in 0..g.channels() {
        let src = g.channel(c);
        let dst = out.channel_mut(c);
        for r in 0..n {
            for col in 0..n {
                let (sr, sc) = match k % 4 {
                    0 => (r, col),
                    1 => (col, n - 1 - r),
                    2 => (n - 1 - r, n - 1 - col),
                    _ => (n - 1 - col, r),
                };
                dst[r * n + col] = src[sr * n + sc];
            }
        }
    }
    out
}

fn warp(g: &RasterGrid, inv: &InverseAffine, fill: &[f32], nearest: bool) -> RasterGrid {
    let (w, h) = (g.width(), g.height());
    let mut out = g.clone();
    for c in 0..g.channels() {
        let src = g.channel(c);
        let fill_value = fill.get(c).copied().unwrap_or(0.0);
        let dst = out.channel_mut(c);
        for r in 0..h {
            for col in 0..w {
                let (sy, sx) = inv.source(r, col);
                dst[r * w + col] = if nearest {
                    let (ry, rx) = (sy.round(), sx.round());
                    if ry < 0.0 || rx < 0.0 || ry > (h - 1) as f64 || rx > (w - 1) as f64 {
                        fill_value
                    } else {
                        src[ry as usize * w + rx as usize]
                    }
                } else if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f64 || sx > (w - 1) as f64 {
                    fill_value
                } else {
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    let v = |y: usize, x: usize| src[y * w + x] as f64;
                    let top = v(y0, x0) + (v(y0, x1) - v(y0, x0)) * fx;
                    let bot = v(y1, x0) + (v(y1, x1) - v(y1, x0)) * fx;
                    (top + (bot - top) * fy) as f32
                };
            }
        }
    }
    out
}

/// Applies one shared geometric draw to every window, then radiometric
/// noise and gain to the SAR windows only. Pure in `(sample, config, seed)`.
pub fn augment(sample: &PatchSample, config: &AugmentConfig, seed: u64) -> PatchSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample.clone();
    let n = out.size();

    let flip = rng.random::<f64>() < config.flip_prob;
    let rot = rng.random::<f64>() < config.rot90_prob;
    let k = rng.random_range(1..4usize);
    let affine = rng.random::<f64>() < config.affine_prob;
    let theta = uniform(&mut rng, -config.rotation_deg, config.rotation_deg).to_radians();
    let shear = uniform(&mut rng, -config.shear_deg, config.shear_deg).to_radians();
    let scale = uniform(&mut rng, config.scale_range.0, config.scale_range.1);
    let max_shift = config.translate_frac * n as f64;
    let ty = uniform(&mut rng, -max_shift, max_shift);
    let tx = uniform(&mut rng, -max_shift, max_shift);
    let gain = uniform(&mut rng, config.gain_range.0, config.gain_range.1);

    if flip {
        flip_h(&mut out.pre);
        flip_h(&mut out.post);
        if let Some(a) = out.aux.as_mut() {
            flip_h(a);
        }
        flip_h(&mut out.mask);
    }
    if rot {
        out.pre = rot90(&out.pre, k);
        out.post = rot90(&out.post, k);
        out.aux = out.aux.as_ref().map(|a| rot90(a, k));
        out.mask = rot90(&out.mask, k);
    }
    if affine {
        // forward = rotation · shear · scale on (y, x) offsets from the center
        let (s, c) = theta.sin_cos();
        let rotm = [[c, -s], [s, c]];
        let shearm = [[1.0, 0.0], [shear.tan(), 1.0]];
        let mut fwd = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                fwd[i][j] = (0..2).map(|k| rotm[i][k] * shearm[k][j]).sum::<f64>() * scale;
            }
        }
        let det = fwd[0][0] * fwd[1][1] - fwd[0][1] * fwd[1][0];
        let inv = InverseAffine {
            m: [
                [fwd[1][1] / det, -fwd[0][1] / det],
                [-fwd[1][0] / det, fwd[0][0] / det],
            ],
            t: [ty, tx],
            center: (n as f64 - 1.0) / 2.0,
        };
        out.pre = warp(&out.pre, &inv, &config.sar_fill, false);
        out.post = warp(&out.post, &inv, &config.sar_fill, false);
        out.aux = out.aux.as_ref().map(|a| warp(a, &inv, &[], false));
        out.mask = warp(&out.mask, &inv, &[], true);
    }

    let noise = (config.noise_std > 0.0).then(|| Normal::new(0.0, config.noise_std).unwrap());
    for g in [&mut out.pre, &mut out.post] {
        for v in g.data_mut() {
            let mut x = *v as f64;
            if let Some(d) = &noise {
                x += d.sample(&mut rng);
            }
            if gain != 1.0 {
                x *= gain;
            }
            if noise.is_some() || gain != 1.0 {
                *v = x as f32;
            }
        }
    }
    out.refresh_label();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub event_id: String,
    pub split: Split,
    pub origin_row: usize,
    pub origin_col: usize,
    pub positive: bool,
    pub path: String,
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path.as_ref(), e.into_error()))?;
    crate::raster::write_atomic(path.as_ref(), &bytes)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Resolves a manifest row path relative to the manifest's directory.
pub fn row_path(manifest: &Path, row: &ManifestRow) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(&row.path)
}

pub fn load_sample(manifest: &Path, row: &ManifestRow) -> Result<PatchSample> {
    let grid = read_raster(row_path(manifest, row))?;
    PatchSample::from_raster(row.event_id.clone(), (row.origin_row, row.origin_col), &grid)
}

pub fn save_sample(sample: &PatchSample, path: impl AsRef<Path>) -> Result<()> {
    write_raster(&sample.to_raster()?, path)
}
