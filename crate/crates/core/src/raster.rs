//! Raster container shared by every pipeline stage.
//!
//! A [`RasterGrid`] stores `channels × height × width` 32-bit values in
//! channel-major, then row-major order. On disk a grid is a JSON header
//! sidecar (`<name>.json`) next to a raw little-endian payload
//! (`<name>.bin`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only payload encoding understood by [`read_raster`].
pub const DTYPE_F32LE: &str = "f32le";

/// Affine pixel-to-map transform: `[origin_x, pixel_w, shear_x, origin_y, shear_y, pixel_h]`.
pub type GeoTransform = [f64; 6];

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    nodata: Option<f32>,
    geo_transform: Option<GeoTransform>,
    channel_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub dtype: String,
    pub nodata: Option<f32>,
    pub geo_transform: Option<GeoTransform>,
    pub channel_names: Vec<String>,
}

impl RasterGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Dimension(format!(
                "raster dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            nodata: None,
            geo_transform: None,
            channel_names: default_names(channels),
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Stacks single- or multi-channel grids of identical extent along the channel axis.
    pub fn stack(grids: &[&RasterGrid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero grids".into()))?;
        let mut data = Vec::new();
        let mut names = Vec::new();
        for g in grids {
            if g.width != first.width || g.height != first.height {
                return Err(Error::Dimension(format!(
                    "cannot stack {}x{} with {}x{}",
                    g.height, g.width, first.height, first.width
                )));
            }
            data.extend_from_slice(&g.data);
            names.extend(g.channel_names.iter().cloned());
        }
        let channels = names.len();
        let mut out = Self::new(first.width, first.height, channels, data)?;
        out.channel_names = names;
        out.geo_transform = first.geo_transform;
        Ok(out)
    }

    pub fn with_nodata(mut self, nodata: Option<f32>) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn with_geo_transform(mut self, gt: Option<GeoTransform>) -> Self {
        self.geo_transform = gt;
        self
    }

    pub fn with_channel_names<S: Into<String>>(mut self, names: Vec<S>) -> Result<Self> {
        if names.len() != self.channels {
            return Err(Error::Dimension(format!(
                "{} channel names for {} channels",
                names.len(),
                self.channels
            )));
        }
        self.channel_names = names.into_iter().map(Into::into).collect();
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn nodata(&self) -> Option<f32> {
        self.nodata
    }

    pub fn geo_transform(&self) -> Option<&GeoTransform> {
        self.geo_transform.as_ref()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn check(&self, channel: usize, row: usize, col: usize) -> Result<usize> {
        if channel < self.channels && row < self.height && col < self.width {
            Ok((channel * self.height + row) * self.width + col)
        } else {
            Err(Error::OutOfRange {
                channel,
                row,
                col,
                channels: self.channels,
                height: self.height,
                width: self.width,
            })
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> Result<f32> {
        self.check(channel, row, col).map(|i| self.data[i])
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f32) -> Result<()> {
        let i = self.check(channel, row, col)?;
        self.data[i] = value;
        Ok(())
    }

    /// True iff the stored value is finite and not bit-equal to the nodata marker.
    pub fn is_valid(&self, channel: usize, row: usize, col: usize) -> Result<bool> {
        self.get(channel, row, col).map(|v| self.is_valid_value(v))
    }

    pub fn is_valid_value(&self, v: f32) -> bool {
        v.is_finite() && self.nodata.map_or(true, |nd| v.to_bits() != nd.to_bits())
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn channel_mut(&mut self, channel: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    /// Copies out one channel as a single-channel grid.
    pub fn extract_channel(&self, channel: usize) -> Result<Self> {
        if channel >= self.channels {
            return Err(Error::OutOfRange {
                channel,
                row: 0,
                col: 0,
                channels: self.channels,
                height: self.height,
                width: self.width,
            });
        }
        let mut out = Self::new(self.width, self.height, 1, self.channel(channel).to_vec())?;
        out.nodata = self.nodata;
        out.geo_transform = self.geo_transform;
        out.channel_names = vec![self.channel_names[channel].clone()];
        Ok(out)
    }

    /// Copies the `size_h × size_w` window whose top-left corner is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, size_h: usize, size_w: usize) -> Result<Self> {
        if row + size_h > self.height || col + size_w > self.width {
            return Err(Error::Dimension(format!(
                "window {size_h}x{size_w} at ({row}, {col}) exceeds {}x{} grid",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(size_h * size_w * self.channels);
        for c in 0..self.channels {
            let plane = self.channel(c);
            for r in row..row + size_h {
                let start = r * self.width + col;
                data.extend_from_slice(&plane[start..start + size_w]);
            }
        }
        let mut out = Self::new(size_w, size_h, self.channels, data)?;
        out.nodata = self.nodata;
        out.channel_names = self.channel_names.clone();
        Ok(out)
    }

    pub fn header(&self) -> RasterHeader {
        RasterHeader {
            width: self.width,
            height: self.height,
            channels: self.channels,
            dtype: DTYPE_F32LE.to_string(),
            nodata: self.nodata,
            geo_transform: self.geo_transform,
            channel_names: self.channel_names.clone(),
        }
    }

    /// Ground area of one pixel from the geo-transform, in square map units.
    pub fn pixel_area(&self) -> Option<f64> {
        self.geo_transform
            .map(|gt| (gt[1] * gt[5] - gt[2] * gt[4]).abs())
            .filter(|a| *a > 0.0)
    }
}

fn default_names(channels: usize) -> Vec<String> {
    (0..channels).map(|c| format!("band_{c}")).collect()
}

/// Resolves `<base>.json` / `<base>.bin` from either sidecar path or the bare base.
pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut header = base.clone().into_os_string();
    header.push(".json");
    let mut payload = base.into_os_string();
    payload.push(".bin");
    (header.into(), payload.into())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let (header_path, payload_path) = sidecar_paths(path.as_ref());
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: RasterHeader = serde_json::from_str(&text).map_err(|source| Error::Header {
        path: header_path.clone(),
        source,
    })?;
    if header.dtype != DTYPE_F32LE {
        return Err(Error::UnsupportedDtype(header.dtype));
    }
    if header.channel_names.len() != header.channels {
        return Err(Error::Dimension(format!(
            "header lists {} channel names for {} channels",
            header.channel_names.len(),
            header.channels
        )));
    }
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let expected = header.width * header.height * header.channels;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() / 4,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let grid = RasterGrid::new(header.width, header.height, header.channels, data)?
        .with_nodata(header.nodata)
        .with_geo_transform(header.geo_transform)
        .with_channel_names(header.channel_names)?;
    Ok(grid)
}

pub fn write_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    if let Some(nd) = grid.nodata {
        if !nd.is_finite() {
            return Err(Error::InvalidArgument(
                "nodata marker must be finite to be stored in the header".into(),
            ));
        }
    }
    let (header_path, payload_path) = sidecar_paths(path.as_ref());
    let mut header = serde_json::to_vec_pretty(&grid.header())?;
    header.push(b'\n');
    let mut payload = Vec::with_capacity(grid.data.len() * 4);
    for v in &grid.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&payload_path, &payload)?;
    write_atomic(&header_path, &header)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Bilinear resampling with pixel-center alignment.
///
/// Output pixel `x` samples source coordinate `(x + 0.5) * src / dst - 0.5`,
/// clamped to the outermost source centers.
pub fn bilinear_upsample(grid: &RasterGrid, target_width: usize, target_height: usize) -> Result<RasterGrid> {
    if target_width < grid.width || target_height < grid.height {
        return Err(Error::InvalidArgument(format!(
            "target {}x{} is smaller than source {}x{}",
            target_height, target_width, grid.height, grid.width
        )));
    }
    let xs = axis_samples(grid.width, target_width);
    let ys = axis_samples(grid.height, target_height);
    let mut data = Vec::with_capacity(target_width * target_height * grid.channels);
    for c in 0..grid.channels {
        let plane = grid.channel(c);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let v00 = plane[y0 * grid.width + x0] as f64;
                let v01 = plane[y0 * grid.width + x1] as f64;
                let v10 = plane[y1 * grid.width + x0] as f64;
                let v11 = plane[y1 * grid.width + x1] as f64;
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                data.push((top + (bottom - top) * fy) as f32);
            }
        }
    }
    let geo = grid.geo_transform.map(|mut gt| {
        let sx = grid.width as f64 / target_width as f64;
        let sy = grid.height as f64 / target_height as f64;
        gt[1] *= sx;
        gt[2] *= sy;
        gt[4] *= sx;
        gt[5] *= sy;
        gt
    });
    let mut out = RasterGrid::new(target_width, target_height, grid.channels, data)?;
    out.nodata = grid.nodata;
    out.geo_transform = geo;
    out.channel_names = grid.channel_names.clone();
    Ok(out)
}

fn axis_samples(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|x| {
            let s = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_raw_byte_layout() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("tiny");
        let header = r#"{"width":2,"height":2,"channels":1,"dtype":"f32le","nodata":null,"geo_transform":null,"channel_names":["b"]}"#;
        fs::write(base.with_extension("json"), header).unwrap();
        let bytes: Vec<u8> = [0.0f32, 1.0, 2.0, 3.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fs::write(base.with_extension("bin"), bytes).unwrap();
        let g = read_raster(&base).unwrap();
        assert_eq!(g.get(0, 1, 1).unwrap(), 3.0);
        assert_eq!(g.get(0, 0, 1).unwrap(), 1.0);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("bad");
        let header = r#"{"width":4,"height":4,"channels":2,"dtype":"f32le","nodata":null,"geo_transform":null,"channel_names":["a","b"]}"#;
        fs::write(base.with_extension("json"), header).unwrap();
        fs::write(base.with_extension("bin"), vec![0u8; 15 * 4]).unwrap();
        match read_raster(&base) {
            Err(Error::SizeMismatch { expected, actual }) => {
                assert_eq!(expected, 32);
                assert_eq!(actual, 15);
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_dtype_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("u16");
        let header = r#"{"width":1,"height":1,"channels":1,"dtype":"u16le","nodata":null,"geo_transform":null,"channel_names":["a"]}"#;
        fs::write(base.with_extension("json"), header).unwrap();
        fs::write(base.with_extension("bin"), [0u8; 2]).unwrap();
        assert!(matches!(read_raster(&base), Err(Error::UnsupportedDtype(_))));
        assert!(matches!(read_raster(dir.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn nodata_and_geo_transform_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("nd");
        let g = RasterGrid::filled(3, 2, 1, 1.5)
            .unwrap()
            .with_nodata(Some(-9999.0))
            .with_geo_transform(Some([600000.0, 10.0, 0.0, 7700000.0, 0.0, -10.0]));
        write_raster(&g, &base).unwrap();
        let text = fs::read_to_string(base.with_extension("json")).unwrap();
        let header: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(header["nodata"].as_f64(), Some(-9999.0));
        assert_eq!(read_raster(&base).unwrap(), g);
        assert_eq!(g.pixel_area(), Some(100.0));
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let g = RasterGrid::new(3, 1, 1, vec![0.1, -2.5, 7.0]).unwrap();
        let a = dir.path().join("a");
        write_raster(&g, &a).unwrap();
        let first = (
            fs::read(a.with_extension("json")).unwrap(),
            fs::read(a.with_extension("bin")).unwrap(),
        );
        write_raster(&g, &a).unwrap();
        let second = (
            fs::read(a.with_extension("json")).unwrap(),
            fs::read(a.with_extension("bin")).unwrap(),
        );
        assert_eq!(first, second);
    }

    #[test]
    fn validity_uses_bit_equality() {
        let g = RasterGrid::new(3, 1, 1, vec![-9999.0, f32::NAN, 2.0])
            .unwrap()
            .with_nodata(Some(-9999.0));
        assert!(!g.is_valid(0, 0, 0).unwrap());
        assert!(!g.is_valid(0, 0, 1).unwrap());
        assert!(g.is_valid(0, 0, 2).unwrap());
        assert!(g.is_valid(0, 0, 3).is_err());
        assert!(g.get(1, 0, 0).is_err());
    }

    #[test]
    fn bilinear_constant_and_midpoint() {
        let g = RasterGrid::filled(3, 2, 1, 7.5).unwrap();
        let up = bilinear_upsample(&g, 10, 7).unwrap();
        assert!(up.data().iter().all(|&v| v == 7.5));

        // Samples 1 and 2 straddle the midpoint between the two source centers symmetrically.
        let g = RasterGrid::new(2, 1, 1, vec![0.0, 6.0]).unwrap();
        let up = bilinear_upsample(&g, 4, 1).unwrap();
        assert_eq!(up.data(), &[0.0, 1.5, 4.5, 6.0]);
        assert_eq!((up.data()[1] + up.data()[2]) / 2.0, 3.0);
    }

    #[test]
    fn bilinear_hits_source_centers_at_odd_factors() {
        let g = RasterGrid::new(3, 1, 1, vec![1.0, 4.0, -2.0]).unwrap();
        let up = bilinear_upsample(&g, 9, 1).unwrap();
        assert_eq!(up.data()[1], 1.0);
        assert_eq!(up.data()[4], 4.0);
        assert_eq!(up.data()[7], -2.0);
    }

    #[test]
    fn bilinear_rejects_shrinking() {
        let g = RasterGrid::filled(4, 4, 1, 0.0).unwrap();
        assert!(bilinear_upsample(&g, 3, 4).is_err());
    }
}
