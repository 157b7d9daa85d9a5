//! A co-registered bi-temporal scene: pre/post backscatter, optional
//! auxiliaries (LIA, slope) and an optional reference mask.
//!
//! On disk a scene is a directory holding `pre`, `post`, and optionally
//! `aux` and `mask` rasters in the container format of [`crate::raster`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::{compute_stats, ChannelStats, NormalizationStats, ValidWindow};
use crate::raster::{read_raster, write_raster, RasterGrid};

pub const SAR_CHANNELS: [&str; 2] = ["vv", "vh"];
pub const AUX_CHANNELS: [&str; 2] = ["lia", "slope"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneStack {
    pub event_id: String,
    pub pre: RasterGrid,
    pub post: RasterGrid,
    pub aux: Option<RasterGrid>,
    pub mask: Option<RasterGrid>,
}

impl SceneStack {
    pub fn new(
        event_id: impl Into<String>,
        pre: RasterGrid,
        post: RasterGrid,
        aux: Option<RasterGrid>,
        mask: Option<RasterGrid>,
    ) -> Result<Self> {
        let s = Self {
            event_id: event_id.into(),
            pre,
            post,
            aux,
            mask,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn width(&self) -> usize {
        self.pre.width()
    }

    pub fn height(&self) -> usize {
        self.pre.height()
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.pre.width(), self.pre.height());
        let mut grids = vec![("post", &self.post)];
        if let Some(a) = &self.aux {
            grids.push(("aux", a));
        }
        if let Some(m) = &self.mask {
            grids.push(("mask", m));
        }
        for (name, g) in grids {
            if g.width() != w || g.height() != h {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{} but pre is {h}x{w}",
                    g.height(),
                    g.width()
                )));
            }
        }
        if self.pre.channels() != self.post.channels() {
            return Err(Error::Dimension(format!(
                "pre has {} channels, post has {}",
                self.pre.channels(),
                self.post.channels()
            )));
        }
        if let Some(m) = &self.mask {
            if m.channels() != 1 {
                return Err(Error::Dimension("mask must have one channel".into()));
            }
        }
        Ok(())
    }

    /// Standardizes pre/post (and aux, when present) with named channel stats.
    /// The mask is carried over unchanged.
    pub fn normalized(&self, stats: &NormalizationStats) -> Result<Self> {
        let lookup = |g: &RasterGrid| -> Result<Vec<ChannelStats>> {
            g.channel_names().iter().map(|n| stats.get(n).copied()).collect()
        };
        let apply = |g: &RasterGrid| -> Result<RasterGrid> {
            let s = lookup(g)?;
            let refs: Vec<&ChannelStats> = s.iter().collect();
            crate::normalize::normalize_grid(g, &refs)
        };
        Ok(Self {
            event_id: self.event_id.clone(),
            pre: apply(&self.pre)?,
            post: apply(&self.post)?,
            aux: self.aux.as_ref().map(apply).transpose()?,
            mask: self.mask.clone(),
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let opt = |name: &str| -> Result<Option<RasterGrid>> {
            if dir.join(format!("{name}.json")).exists() {
                read_raster(dir.join(name)).map(Some)
            } else {
                Ok(None)
            }
        };
        let event_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        Self::new(
            event_id,
            read_raster(dir.join("pre"))?,
            read_raster(dir.join("post"))?,
            opt("aux")?,
            opt("mask")?,
        )
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_raster(&self.pre, dir.join("pre"))?;
        write_raster(&self.post, dir.join("post"))?;
        if let Some(a) = &self.aux {
            write_raster(a, dir.join("aux"))?;
        }
        if let Some(m) = &self.mask {
            write_raster(m, dir.join("mask"))?;
        }
        Ok(())
    }
}

/// Dataset statistics over the given scenes, keyed by channel name.
///
/// Pre- and post-event rasters are pooled per channel name; backscatter
/// channels use the dB validity window, auxiliaries accept every finite value.
pub fn dataset_stats(scenes: &[&SceneStack]) -> Result<NormalizationStats> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::InsufficientData("no scenes for statistics".into()))?;
    let mut stats = NormalizationStats::default();
    for (c, name) in first.pre.channel_names().iter().enumerate() {
        let mut grids: Vec<&RasterGrid> = Vec::new();
        for s in scenes {
            grids.push(&s.pre);
            grids.push(&s.post);
        }
        stats.insert(name.clone(), compute_stats(&grids, c, Some(ValidWindow::BACKSCATTER_DB))?);
    }
    if first.aux.is_some() {
        let grids: Vec<&RasterGrid> = scenes.iter().filter_map(|s| s.aux.as_ref()).collect();
        if grids.len() != scenes.len() {
            return Err(Error::InvalidArgument(
                "either all or none of the scenes must carry auxiliaries".into(),
            ));
        }
        for (c, name) in grids[0].channel_names().iter().enumerate() {
            stats.insert(name.clone(), compute_stats(&grids, c, None)?);
        }
    }
    Ok(stats)
}
