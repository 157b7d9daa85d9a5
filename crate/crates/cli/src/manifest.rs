use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Record of one command invocation, written beside its outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration after merging flags, config file and defaults.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub wall_seconds: f64,
    /// Per-repeat timings of the measured section (bench only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timings: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_seconds: Option<f64>,
    pub pixels: u64,
    pub pixels_per_second: Option<f64>,
    pub pixel_area_m2: Option<f64>,
    pub km2_per_second: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize) -> Self {
        Self {
            command: command.into(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            ..Self::default()
        }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().display().to_string());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().display().to_string());
    }

    /// Fills the throughput fields from a pixel count and elapsed seconds.
    pub fn throughput(&mut self, pixels: u64, seconds: f64, pixel_area_m2: Option<f64>) {
        self.pixels = pixels;
        self.pixel_area_m2 = pixel_area_m2;
        if seconds > 0.0 {
            let pps = pixels as f64 / seconds;
            self.pixels_per_second = Some(pps);
            self.km2_per_second = pixel_area_m2.map(|a| pps * a / 1e6);
        }
    }

    pub fn write(&self, path: &Path) -> avalanche::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        avalanche::raster::write_atomic(path, text.as_bytes())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `<dir>/<command>.run.json` for directory outputs, `<stem>.run.json` beside file outputs.
pub fn manifest_path(out: &Path, command: &str, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(format!("{command}.run.json"))
    } else {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| command.into());
        out.with_file_name(format!("{stem}.run.json"))
    }
}
