//! Validity screening and per-channel standardization of backscatter rasters.
//!
//! Backscatter values are valid only inside `[-40, 20]` dB. Statistics are
//! taken over valid observations only, and every invalid observation is
//! replaced after standardization by the channel sentinel, the standardized
//! image of `-50` dB.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{write_atomic, RasterGrid};

pub const VALID_MIN_DB: f64 = -40.0;
pub const VALID_MAX_DB: f64 = 20.0;
pub const SENTINEL_DB: f64 = -50.0;

/// Inclusive value window inside which observations count as valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidWindow {
    pub min: f64,
    pub max: f64,
}

impl ValidWindow {
    pub const BACKSCATTER_DB: ValidWindow = ValidWindow {
        min: VALID_MIN_DB,
        max: VALID_MAX_DB,
    };

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    pub sentinel: f64,
    /// `None` means every finite value is valid (auxiliary channels).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<ValidWindow>,
}

impl ChannelStats {
    /// Builds stats for a backscatter channel; the sentinel is derived from `-50` dB.
    pub fn backscatter(mean: f64, std: f64) -> Result<Self> {
        Self::checked(mean, std, Some(ValidWindow::BACKSCATTER_DB))
    }

    /// Builds stats for an auxiliary channel; invalid (non-finite) values map to the mean.
    pub fn auxiliary(mean: f64, std: f64) -> Result<Self> {
        Self::checked(mean, std, None)
    }

    fn checked(mean: f64, std: f64, window: Option<ValidWindow>) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InsufficientData(format!(
                "channel statistics need finite mean and positive std, got mean={mean} std={std}"
            )));
        }
        let sentinel = match window {
            Some(_) => sentinel_for(mean, std),
            None => 0.0,
        };
        Ok(Self {
            mean,
            std,
            sentinel,
            window,
        })
    }

    pub fn is_valid(&self, v: f32) -> bool {
        v.is_finite() && self.window.map_or(true, |w| w.contains(v as f64))
    }

    pub fn apply(&self, v: f32) -> f32 {
        if self.is_valid(v) {
            ((v as f64 - self.mean) / self.std) as f32
        } else {
            self.sentinel as f32
        }
    }
}

/// `(-50 - mean) / std`, evaluated in 64-bit.
pub fn sentinel_for(mean: f64, std: f64) -> f64 {
    (SENTINEL_DB - mean) / std
}

/// Streaming `(count, mean, M2)` moments with an order-fixed pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        Moments { count, mean, m2 }
    }

    pub fn population_std(&self) -> f64 {
        (self.m2 / self.count as f64).sqrt()
    }
}

/// Mean and population standard deviation of `channel` over valid values in all `scenes`.
///
/// Scenes are reduced in parallel and merged in input order, so the result
/// does not depend on the thread count.
pub fn compute_stats(scenes: &[&RasterGrid], channel: usize, window: Option<ValidWindow>) -> Result<ChannelStats> {
    for s in scenes {
        if channel >= s.channels() {
            return Err(Error::InvalidArgument(format!(
                "channel {channel} not present in {}-channel scene",
                s.channels()
            )));
        }
    }
    let parts: Vec<Moments> = scenes
        .par_iter()
        .map(|s| {
            let mut m = Moments::default();
            for &v in s.channel(channel) {
                if s.is_valid_value(v) && window.map_or(true, |w| w.contains(v as f64)) {
                    m.push(v as f64);
                }
            }
            m
        })
        .collect();
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    if total.count < 2 {
        return Err(Error::InsufficientData(format!(
            "channel {channel} has {} valid observations, need at least 2",
            total.count
        )));
    }
    let std = total.population_std();
    if std == 0.0 {
        return Err(Error::InsufficientData(format!("channel {channel} is constant")));
    }
    ChannelStats::checked(total.mean, std, window)
}

/// Standardizes one channel; the result is a single-channel grid.
pub fn normalize_channel(grid: &RasterGrid, stats: &ChannelStats, channel: usize) -> Result<RasterGrid> {
    if channel >= grid.channels() {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} not present in {}-channel grid",
            grid.channels()
        )));
    }
    let data: Vec<f32> = grid
        .channel(channel)
        .par_iter()
        .map(|&v| {
            if grid.is_valid_value(v) {
                stats.apply(v)
            } else {
                stats.sentinel as f32
            }
        })
        .collect();
    let name = grid.channel_names()[channel].clone();
    Ok(RasterGrid::new(grid.width(), grid.height(), 1, data)?
        .with_geo_transform(grid.geo_transform().copied())
        .with_channel_names(vec![name])?)
}

/// Standardizes every channel of `grid` with the matching entry of `stats`.
pub fn normalize_grid(grid: &RasterGrid, stats: &[&ChannelStats]) -> Result<RasterGrid> {
    if stats.len() != grid.channels() {
        return Err(Error::Dimension(format!(
            "{} channel stats for a {}-channel grid",
            stats.len(),
            grid.channels()
        )));
    }
    let planes = stats
        .iter()
        .enumerate()
        .map(|(c, s)| normalize_channel(grid, s, c))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&RasterGrid> = planes.iter().collect();
    RasterGrid::stack(&refs)
}

/// Named channel statistics as persisted in the stats file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizationStats {
    pub channels: BTreeMap<String, ChannelStats>,
}

impl NormalizationStats {
    pub fn get(&self, name: &str) -> Result<&ChannelStats> {
        self.channels
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no statistics for channel {name:?}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, stats: ChannelStats) {
        self.channels.insert(name.into(), stats);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Header {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path.as_ref(), &bytes)
    }
}
