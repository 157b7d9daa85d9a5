//! Fusion of overlapping tile probability maps into one scene map.
//!
//! [`BlendAccumulator`] keeps per-pixel state for the chosen [`BlendMode`]
//! and is fed one tile at a time; [`BlendAccumulator::finalize`] turns the
//! state into the blended map. Sums and weights accumulate in 64-bit.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patches::{grid_origins, PatchSpec};
use crate::raster::RasterGrid;
use crate::scene::SceneStack;
use crate::scorer::ScorerModel;

/// Gaussian weights are floored here so weight sums never vanish.
pub const MIN_GAUSSIAN_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BlendMode {
    /// Non-overlapping partition; inference forces stride = size.
    None,
    Mean,
    Max,
    Min,
    /// `sigma = None` resolves to tile size / 4.
    Gaussian { sigma: Option<f64> },
    /// `border = None` resolves to (size − stride) / 2.
    CenterCrop { border: Option<usize> },
}

impl BlendMode {
    pub const ALL: [BlendMode; 6] = [
        BlendMode::None,
        BlendMode::Mean,
        BlendMode::Max,
        BlendMode::Min,
        BlendMode::Gaussian { sigma: None },
        BlendMode::CenterCrop { border: None },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BlendMode::None => "none",
            BlendMode::Mean => "mean",
            BlendMode::Max => "max",
            BlendMode::Min => "min",
            BlendMode::Gaussian { .. } => "gaussian",
            BlendMode::CenterCrop { .. } => "crop",
        }
    }

    /// Stride actually used for inference with this mode.
    pub fn effective_spec(&self, spec: &PatchSpec) -> PatchSpec {
        match self {
            BlendMode::None => PatchSpec {
                size: spec.size,
                stride: spec.size,
            },
            _ => *spec,
        }
    }
}

impl FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => BlendMode::None,
            "mean" => BlendMode::Mean,
            "max" => BlendMode::Max,
            "min" => BlendMode::Min,
            "gaussian" | "gauss" => BlendMode::Gaussian { sigma: None },
            "crop" | "center_crop" => BlendMode::CenterCrop { border: None },
            other => return Err(Error::InvalidArgument(format!("unknown blend mode {other:?}"))),
        })
    }
}

impl std::fmt::Display for BlendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum State {
    Average { sum: Vec<f64>, count: Vec<u32> },
    Weighted { sum: Vec<f64>, weight: Vec<f64>, kernel: Vec<f64> },
    Extremum { value: Vec<f32>, covered: Vec<bool>, max: bool },
    Write { value: Vec<f32>, written: Vec<bool>, border: usize },
}

#[derive(Debug, Clone)]
pub struct BlendAccumulator {
    width: usize,
    height: usize,
    tile: usize,
    state: State,
}

/// Gaussian window over a square tile: `exp(−(dx² + dy²) / 2σ²)` about the tile center.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k = Vec::with_capacity(size * size);
    for r in 0..size {
        for col in 0..size {
            let (dy, dx) = (r as f64 - c, col as f64 - c);
            k.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp().max(MIN_GAUSSIAN_WEIGHT));
        }
    }
    k
}

/// Rows (or columns) of a tile kept by center cropping; edges touching the scene border are kept.
pub fn crop_span(origin: usize, tile: usize, dim: usize, border: usize) -> (usize, usize) {
    let start = if origin == 0 { 0 } else { origin + border };
    let end = if origin + tile == dim { dim } else { origin + tile - border };
    (start, end)
}

impl BlendAccumulator {
    /// Accumulator for a `height × width` scene fed square tiles of side `tile` at `stride`.
    pub fn new(height: usize, width: usize, tile: usize, stride: usize, mode: BlendMode) -> Result<Self> {
        if height == 0 || width == 0 || tile == 0 {
            return Err(Error::Dimension("scene and tile extents must be positive".into()));
        }
        let n = width * height;
        let state = match mode {
            BlendMode::Mean => State::Average {
                sum: vec![0.0; n],
                count: vec![0; n],
            },
            BlendMode::Gaussian { sigma } => {
                let sigma = sigma.unwrap_or(tile as f64 / 4.0);
                if !(sigma > 0.0) {
                    return Err(Error::InvalidArgument(format!("gaussian sigma must be positive, got {sigma}")));
                }
                State::Weighted {
                    sum: vec![0.0; n],
                    weight: vec![0.0; n],
                    kernel: gaussian_kernel(tile, sigma),
                }
            }
            BlendMode::Max | BlendMode::Min => State::Extremum {
                value: vec![0.0; n],
                covered: vec![false; n],
                max: matches!(mode, BlendMode::Max),
            },
            BlendMode::None => State::Write {
                value: vec![0.0; n],
                written: vec![false; n],
                border: 0,
            },
            BlendMode::CenterCrop { border } => {
                let border = border.unwrap_or(tile.saturating_sub(stride) / 2);
                if 2 * border >= tile {
                    return Err(Error::InvalidArgument(format!(
                        "crop border {border} must be smaller than half the tile size {tile}"
                    )));
                }
                State::Write {
                    value: vec![0.0; n],
                    written: vec![false; n],
                    border,
                }
            }
        };
        Ok(Self {
            width,
            height,
            tile,
            state,
        })
    }

    /// Folds one tile of predictions whose top-left corner sits at `origin`.
    ///
    /// Mean, gaussian, max and min updates commute; the write modes (none,
    /// center crop) let the later tile win where kept regions overlap.
    pub fn contribute(&mut self, tile: &[f32], origin: (usize, usize)) -> Result<()> {
        let t = self.tile;
        let (r0, c0) = origin;
        if tile.len() != t * t {
            return Err(Error::Dimension(format!("tile holds {} values, expected {}", tile.len(), t * t)));
        }
        if r0 + t > self.height || c0 + t > self.width {
            return Err(Error::Dimension(format!(
                "tile at ({r0}, {c0}) of side {t} exceeds {}x{} scene",
                self.height, self.width
            )));
        }
        let w = self.width;
        match &mut self.state {
            State::Average { sum, count } => {
                for r in 0..t {
                    let base = (r0 + r) * w + c0;
                    for c in 0..t {
                        sum[base + c] += tile[r * t + c] as f64;
                        count[base + c] += 1;
                    }
                }
            }
            State::Weighted { sum, weight, kernel } => {
                for r in 0..t {
                    let base = (r0 + r) * w + c0;
                    for c in 0..t {
                        let k = kernel[r * t + c];
                        sum[base + c] += k * tile[r * t + c] as f64;
                        weight[base + c] += k;
                    }
                }
            }
            State::Extremum { value, covered, max } => {
                for r in 0..t {
                    let base = (r0 + r) * w + c0;
                    for c in 0..t {
                        let (i, v) = (base + c, tile[r * t + c]);
                        if !covered[i] {
                            value[i] = v;
                            covered[i] = true;
                        } else if (*max && v > value[i]) || (!*max && v < value[i]) {
                            value[i] = v;
                        }
                    }
                }
            }
            State::Write { value, written, border } => {
                let (rs, re) = crop_span(r0, t, self.height, *border);
                let (cs, ce) = crop_span(c0, t, self.width, *border);
                for r in rs..re {
                    for c in cs..ce {
                        value[r * w + c] = tile[(r - r0) * t + (c - c0)];
                        written[r * w + c] = true;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<RasterGrid> {
        let n = self.width * self.height;
        let uncovered = |i: usize| Error::Uncovered {
            row: i / self.width,
            col: i % self.width,
        };
        let mut out = vec![0f32; n];
        match &self.state {
            State::Average { sum, count } => {
                for i in 0..n {
                    if count[i] == 0 {
                        return Err(uncovered(i));
                    }
                    out[i] = (sum[i] / count[i] as f64).clamp(0.0, 1.0) as f32;
                }
            }
            State::Weighted { sum, weight, .. } => {
                for i in 0..n {
                    if weight[i] == 0.0 {
                        return Err(uncovered(i));
                    }
                    out[i] = (sum[i] / weight[i]).clamp(0.0, 1.0) as f32;
                }
            }
            State::Extremum { value, covered, .. } => {
                for i in 0..n {
                    if !covered[i] {
                        return Err(uncovered(i));
                    }
                    out[i] = value[i];
                }
            }
            State::Write { value, written, .. } => {
                for i in 0..n {
                    if !written[i] {
                        return Err(uncovered(i));
                    }
                    out[i] = value[i];
                }
            }
        }
        RasterGrid::new(self.width, self.height, 1, out)?.with_channel_names(vec!["probability"])
    }
}

/// Tiles a normalized scene, scores every tile and blends the results.
///
/// Tiles are scored in parallel on the current rayon pool in bounded
/// batches and contributed in row-major origin order, so the output does
/// not depend on the number of threads.
pub fn run_scene(model: &ScorerModel, scene: &SceneStack, spec: &PatchSpec, mode: BlendMode) -> Result<RasterGrid> {
    use rayon::prelude::*;

    scene.validate()?;
    let spec = mode.effective_spec(spec);
    let origins = grid_origins(scene.height(), scene.width(), &spec)?;
    let mut acc = BlendAccumulator::new(scene.height(), scene.width(), spec.size, spec.stride, mode)?;
    let s = spec.size;
    const BATCH: usize = 256;
    for chunk in origins.chunks(BATCH) {
        let tiles: Vec<Vec<f32>> = chunk
            .par_iter()
            .map(|&(r, c)| {
                let pre = scene.pre.window(r, c, s, s)?;
                let post = scene.post.window(r, c, s, s)?;
                let aux = scene.aux.as_ref().map(|a| a.window(r, c, s, s)).transpose()?;
                model.predict(&pre, &post, aux.as_ref())
            })
            .collect::<Result<_>>()?;
        for (tile, &origin) in tiles.iter().zip(chunk) {
            acc.contribute(tile, origin)?;
        }
    }
    let mut out = acc.finalize()?;
    out = out.with_geo_transform(scene.pre.geo_transform().copied());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc(mode: BlendMode) -> BlendAccumulator {
        BlendAccumulator::new(1, 3, 2, 1, mode).unwrap()
    }

    // two 2-wide tiles on a 1x3 strip would not be square; use 2x2 tiles on 2x3 instead
    fn two_tiles(mode: BlendMode) -> RasterGrid {
        let mut a = BlendAccumulator::new(2, 3, 2, 1, mode).unwrap();
        a.contribute(&[0.2; 4], (0, 0)).unwrap();
        a.contribute(&[0.6; 4], (0, 1)).unwrap();
        a.finalize().unwrap()
    }

    #[test]
    fn overlap_reductions() {
        let shared = |g: &RasterGrid| g.get(0, 0, 1).unwrap();
        assert!((shared(&two_tiles(BlendMode::Mean)) - 0.4).abs() < 1e-7);
        assert_eq!(shared(&two_tiles(BlendMode::Max)), 0.6);
        assert_eq!(shared(&two_tiles(BlendMode::Min)), 0.2);
        // column 1 is equidistant from both tile centers
        let g = two_tiles(BlendMode::Gaussian { sigma: Some(1.0) });
        assert!((shared(&g) - 0.4).abs() < 1e-7);
    }

    #[test]
    fn single_tile_is_verbatim_in_every_mode() {
        let tile: Vec<f32> = (0..16).map(|i| i as f32 / 15.0).collect();
        for mode in BlendMode::ALL {
            let mut a = BlendAccumulator::new(4, 4, 4, 2, mode).unwrap();
            a.contribute(&tile, (0, 0)).unwrap();
            assert_eq!(a.finalize().unwrap().data(), &tile[..], "{mode}");
        }
    }

    #[test]
    fn uncovered_pixel_is_reported() {
        let mut a = BlendAccumulator::new(2, 4, 2, 2, BlendMode::Mean).unwrap();
        a.contribute(&[0.5; 4], (0, 0)).unwrap();
        match a.finalize() {
            Err(Error::Uncovered { row: 0, col: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_tile() {
        let mut a = acc(BlendMode::Max);
        assert!(a.contribute(&[0.1; 4], (0, 2)).is_err());
        assert!(a.contribute(&[0.1; 3], (0, 0)).is_err());
    }

    #[test]
    fn crop_keeps_scene_edges() {
        assert_eq!(crop_span(0, 8, 20, 2), (0, 6));
        assert_eq!(crop_span(4, 8, 20, 2), (6, 10));
        assert_eq!(crop_span(12, 8, 20, 2), (14, 20));
        assert!(BlendAccumulator::new(8, 8, 4, 1, BlendMode::CenterCrop { border: Some(2) }).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in BlendMode::ALL {
            assert_eq!(m.name().parse::<BlendMode>().unwrap(), m);
        }
        assert!("median".parse::<BlendMode>().is_err());
    }

    #[test]
    fn gaussian_kernel_peaks_at_center() {
        let k = gaussian_kernel(5, 1.0);
        assert_eq!(k[12], 1.0);
        assert!(k[0] < k[6] && k[6] < k[12]);
        assert!(gaussian_kernel(64, 0.5).iter().all(|&w| w >= MIN_GAUSSIAN_WEIGHT));
    }
}
