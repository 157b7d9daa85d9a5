//! Synthetic bi-temporal scenes with elliptical deposits, radar-shadow
//! holes and matching inventories.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalx::{write_inventory, PolygonRecord};
use crate::normalize::{VALID_MAX_DB, VALID_MIN_DB};
use crate::raster::{write_atomic, RasterGrid};
use crate::scene::{SceneStack, Split, AUX_CHANNELS, SAR_CHANNELS};

/// Backscatter written into shadow pixels, below the validity window.
pub const SHADOW_DB: f32 = -45.0;
/// Pixel spacing of generated scenes in meters.
pub const PIXEL_SPACING_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of deposits per scene.
    pub deposits: (usize, usize),
    /// Inclusive range of ellipse semi-axes in pixels.
    pub axis_range: (f64, f64),
    /// dB increase at full deposit intensity, applied to every SAR channel.
    pub contrast_db: f64,
    /// Standard deviation of the independent per-acquisition dB noise.
    pub noise_db: f64,
    /// Amplitude of the smooth background variation in dB.
    pub background_db: f64,
    /// Target share of pixels in radar shadow.
    pub invalid_fraction: f64,
    /// Minimum clearance in pixels between deposit footprints.
    pub gap: usize,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            deposits: (3, 6),
            axis_range: (3.0, 12.0),
            contrast_db: 6.0,
            noise_db: 1.0,
            background_db: 3.0,
            invalid_fraction: 0.03,
            gap: 2,
            max_retries: 500,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.width == 0 || self.height == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if self.deposits.0 > self.deposits.1 {
            return bad(format!("deposit range {:?} is empty", self.deposits));
        }
        if !(self.axis_range.0 >= 2.0) || self.axis_range.0 > self.axis_range.1 {
            return bad(format!("deposit axes {:?} must satisfy 2 <= min <= max", self.axis_range));
        }
        if self.contrast_db < 0.0 || self.noise_db < 0.0 || self.background_db < 0.0 {
            return bad("contrast, noise and background levels must be non-negative".into());
        }
        if !(0.0..0.5).contains(&self.invalid_fraction) {
            return bad(format!("invalid_fraction {} must lie in [0, 0.5)", self.invalid_fraction));
        }
        Ok(())
    }
}

/// Size class from a pixel count: <10 → 1, <100 → 2, ≤1000 → 3, else 4.
pub fn size_class(pixels: usize) -> u8 {
    match pixels {
        0..=9 => 1,
        10..=99 => 2,
        100..=1000 => 3,
        _ => 4,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene: SceneStack,
    pub inventory: Vec<PolygonRecord>,
    /// True where the pixel is in radar shadow in both acquisitions.
    pub invalid: Vec<bool>,
}

/// Smooth field: bilinear interpolation of a coarse random lattice.
fn smooth_field(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64, lo: f64, hi: f64) -> Vec<f64> {
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(lo..=hi)).collect();
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        let fy = r as f64 / cell;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for c in 0..w {
            let fx = c as f64 / cell;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let v = |y: usize, x: usize| lattice[y * gw + x];
            let top = v(y0, x0) * (1.0 - tx) + v(y0, x0 + 1) * tx;
            let bot = v(y0 + 1, x0) * (1.0 - tx) + v(y0 + 1, x0 + 1) * tx;
            out[r * w + c] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    /// Approximate signed distance in pixels to the boundary (negative inside).
    fn signed_distance(&self, r: usize, c: usize) -> f64 {
        let (dy, dx) = (r as f64 - self.cy, c as f64 - self.cx);
        let (s, co) = self.angle.sin_cos();
        let u = dx * co + dy * s;
        let v = -dx * s + dy * co;
        let dist = (u * u + v * v).sqrt();
        if dist == 0.0 {
            return -self.a.min(self.b);
        }
        let (cu, sv) = (u / dist, v / dist);
        let radius = 1.0 / ((cu / self.a).powi(2) + (sv / self.b).powi(2)).sqrt();
        dist - radius
    }

    /// Feathered intensity: 1 deep inside, a one-pixel linear ramp centered on the rim.
    fn intensity(&self, r: usize, c: usize) -> f64 {
        (0.5 - self.signed_distance(r, c)).clamp(0.0, 1.0)
    }

    fn reach(&self) -> f64 {
        self.a.max(self.b) + 1.0
    }

    fn bbox(&self, w: usize, h: usize, pad: f64) -> (usize, usize, usize, usize) {
        let e = self.reach() + pad;
        let r0 = (self.cy - e).floor().max(0.0) as usize;
        let c0 = (self.cx - e).floor().max(0.0) as usize;
        let r1 = ((self.cy + e).ceil() as usize + 1).min(h);
        let c1 = ((self.cx + e).ceil() as usize + 1).min(w);
        (r0, r1, c0, c1)
    }
}

fn shadow_mask(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<bool> {
    let (w, h) = (cfg.width, cfg.height);
    let mut mask = vec![false; w * h];
    let target = (cfg.invalid_fraction * (w * h) as f64).round() as usize;
    let mut count = 0;
    let max_axis = (w.min(h) as f64 / 8.0).max(2.0);
    let mut attempts = 0;
    while count < target && attempts < 10_000 {
        attempts += 1;
        let e = Ellipse {
            cy: rng.random_range(0.0..h as f64),
            cx: rng.random_range(0.0..w as f64),
            a: rng.random_range(1.5..=max_axis),
            b: rng.random_range(1.5..=max_axis),
            angle: rng.random_range(0.0..std::f64::consts::PI),
        };
        let (r0, r1, c0, c1) = e.bbox(w, h, 0.0);
        for r in r0..r1 {
            for c in c0..c1 {
                if count < target && !mask[r * w + c] && e.signed_distance(r, c) <= 0.0 {
                    mask[r * w + c] = true;
                    count += 1;
                }
            }
        }
    }
    mask
}

/// Generates one scene; a pure function of the config.
pub fn generate(cfg: &SynthConfig, event_id: &str) -> Result<SyntheticScene> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let invalid = shadow_mask(&mut rng, cfg);

    // deposits: rejection sampling against shadow and earlier footprints
    let count = rng.random_range(cfg.deposits.0..=cfg.deposits.1);
    let mut blocked = invalid.clone();
    let mut deposits: Vec<Ellipse> = Vec::with_capacity(count);
    let mut owner = vec![usize::MAX; n];
    let mut intensity = vec![0.0f64; n];
    for index in 0..count {
        let mut placed = None;
        for _ in 0..cfg.max_retries {
            let a = rng.random_range(cfg.axis_range.0..=cfg.axis_range.1);
            let b = rng.random_range(cfg.axis_range.0..=cfg.axis_range.1);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let reach = a.max(b) + 1.0;
            if 2.0 * reach >= w as f64 || 2.0 * reach >= h as f64 {
                continue;
            }
            let e = Ellipse {
                cy: rng.random_range(reach..h as f64 - reach),
                cx: rng.random_range(reach..w as f64 - reach),
                a,
                b,
                angle,
            };
            let (r0, r1, c0, c1) = e.bbox(w, h, 0.0);
            let clash = (r0..r1).any(|r| (c0..c1).any(|c| blocked[r * w + c] && e.intensity(r, c) > 0.0));
            if !clash {
                placed = Some(e);
                break;
            }
        }
        let e = placed.ok_or(Error::Placement {
            index,
            attempts: cfg.max_retries,
        })?;
        let (r0, r1, c0, c1) = e.bbox(w, h, cfg.gap as f64);
        for r in r0..r1 {
            for c in c0..c1 {
                let i = r * w + c;
                let v = e.intensity(r, c);
                if v > 0.0 {
                    intensity[i] = v;
                    if v >= 0.5 {
                        owner[i] = deposits.len();
                    }
                }
                if e.signed_distance(r, c) <= 0.5 + cfg.gap as f64 {
                    blocked[i] = true;
                }
            }
        }
        deposits.push(e);
    }

    let base = [-12.0, -19.0];
    let noise = Normal::new(0.0, cfg.noise_db.max(f64::MIN_POSITIVE)).unwrap();
    let mut pre = vec![0.0f32; 2 * n];
    let mut post = vec![0.0f32; 2 * n];
    for (ch, &b) in base.iter().enumerate() {
        let field = smooth_field(&mut rng, w, h, 16.0, -cfg.background_db, cfg.background_db);
        for i in 0..n {
            let mut draw = || if cfg.noise_db > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let clean = b + field[i];
            let p = clean + draw();
            let q = clean + cfg.contrast_db * intensity[i] + draw();
            let k = ch * n + i;
            if invalid[i] {
                pre[k] = SHADOW_DB;
                post[k] = SHADOW_DB;
            } else {
                pre[k] = p.clamp(VALID_MIN_DB, VALID_MAX_DB) as f32;
                post[k] = q.clamp(VALID_MIN_DB, VALID_MAX_DB) as f32;
            }
        }
    }
    let lia = smooth_field(&mut rng, w, h, 24.0, 20.0, 60.0);
    let slope = smooth_field(&mut rng, w, h, 24.0, 0.0, 50.0);
    let aux: Vec<f32> = lia.iter().chain(&slope).map(|&v| v as f32).collect();
    let mask: Vec<f32> = owner.iter().map(|&o| if o == usize::MAX { 0.0 } else { 1.0 }).collect();

    let geo = Some([0.0, PIXEL_SPACING_M, 0.0, 0.0, 0.0, -PIXEL_SPACING_M]);
    let sar = |data| -> Result<RasterGrid> {
        Ok(RasterGrid::new(w, h, 2, data)?.with_channel_names(SAR_CHANNELS.to_vec())?.with_geo_transform(geo))
    };
    let scene = SceneStack::new(
        event_id,
        sar(pre)?,
        sar(post)?,
        Some(RasterGrid::new(w, h, 2, aux)?.with_channel_names(AUX_CHANNELS.to_vec())?.with_geo_transform(geo)),
        Some(RasterGrid::new(w, h, 1, mask)?.with_channel_names(vec!["mask"])?.with_geo_transform(geo)),
    )?;

    let mut pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); deposits.len()];
    for (i, &o) in owner.iter().enumerate() {
        if o != usize::MAX {
            pixels[o].push((i / w, i % w));
        }
    }
    let inventory = pixels
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(k, p)| PolygonRecord::from_pixels(format!("{event_id}-{k}"), size_class(p.len()), p))
        .collect();
    Ok(SyntheticScene {
        scene,
        inventory,
        invalid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene: SynthConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SynthConfig::default(),
            train: 8,
            val: 2,
            test: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub event_id: String,
    pub split: Split,
    /// Scene directory relative to the dataset root.
    pub path: String,
}

/// Scene listing file written at the dataset root.
pub const SCENES_CSV: &str = "scenes.csv";
/// Per-scene inventory file name.
pub const INVENTORY_FILE: &str = "inventory.jsonl";

fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

/// Generates every scene of a dataset in memory, in listing order.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<(SceneEntry, SyntheticScene)>> {
    let splits: Vec<Split> = std::iter::repeat_n(Split::Train, cfg.train)
        .chain(std::iter::repeat_n(Split::Val, cfg.val))
        .chain(std::iter::repeat_n(Split::Test, cfg.test))
        .collect();
    splits
        .par_iter()
        .enumerate()
        .map(|(i, &split)| {
            let event_id = format!("event_{i:03}");
            let scene_cfg = SynthConfig {
                seed: scene_seed(cfg.scene.seed, i),
                ..cfg.scene.clone()
            };
            let scene = generate(&scene_cfg, &event_id)?;
            let entry = SceneEntry {
                path: format!("scenes/{event_id}"),
                event_id,
                split,
            };
            Ok((entry, scene))
        })
        .collect()
}

/// Writes scenes, per-scene inventories and the scene listing under `root`.
pub fn write_dataset(root: impl AsRef<Path>, scenes: &[(SceneEntry, SyntheticScene)]) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (entry, s) in scenes {
        let dir = root.join(&entry.path);
        s.scene.save(&dir)?;
        write_inventory(dir.join(INVENTORY_FILE), &s.inventory)?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (entry, _) in scenes {
        w.serialize(entry)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(&root.join(SCENES_CSV), &bytes)
}

pub fn read_scene_list(path: impl AsRef<Path>) -> Result<Vec<SceneEntry>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
