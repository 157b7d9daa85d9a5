//! Pixel- and polygon-level evaluation.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decide::{fbeta, ThresholdResult};
use crate::error::{Error, Result};
use crate::raster::{write_atomic, RasterGrid};

/// A polygon counts as detected when at least this share of its pixels is predicted positive.
pub const HIT_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub iou: f64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    pub fn metrics(&self) -> PixelMetrics {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        PixelMetrics {
            precision,
            recall,
            f1: fbeta(precision, recall, 1.0),
            f2: fbeta(precision, recall, 2.0),
            iou: ratio(self.tp, self.tp + self.fp + self.fn_),
        }
    }
}

fn same_dims(a: &RasterGrid, b: &RasterGrid) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Dimension(format!(
            "prediction is {}x{} but reference is {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Confusion counts of two binary grids (first channel; values ≥ 0.5 are positive).
pub fn confusion_counts(pred: &RasterGrid, truth: &RasterGrid) -> Result<ConfusionCounts> {
    same_dims(pred, truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.channel(0).iter().zip(truth.channel(0)) {
        match (p >= 0.5, t >= 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn pixel_metrics(pred: &RasterGrid, truth: &RasterGrid) -> Result<(ConfusionCounts, PixelMetrics)> {
    let c = confusion_counts(pred, truth)?;
    Ok((c, c.metrics()))
}

/// Average precision: Σ (R_k − R_{k−1})·P_k over descending unique score thresholds.
pub fn auprc(scores: &[(f32, bool)]) -> Result<f64> {
    let positives = scores.iter().filter(|(_, l)| *l).count() as u64;
    if positives == 0 {
        return Err(Error::InsufficientData("average precision needs at least one positive".into()));
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (i, &(s, label)) in sorted.iter().enumerate() {
        if label {
            tp += 1;
        } else {
            fp += 1;
        }
        if i + 1 == sorted.len() || sorted[i + 1].0 != s {
            let recall = tp as f64 / positives as f64;
            let precision = tp as f64 / (tp + fp) as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }
    Ok(ap)
}

pub const CODE_TN: f32 = 0.0;
pub const CODE_TP: f32 = 1.0;
pub const CODE_FN: f32 = 2.0;
pub const CODE_FP: f32 = 3.0;

/// Per-pixel outcome codes: 0 = TN, 1 = TP, 2 = FN, 3 = FP.
pub fn confusion_map(pred: &RasterGrid, truth: &RasterGrid) -> Result<RasterGrid> {
    same_dims(pred, truth)?;
    let data = pred
        .channel(0)
        .iter()
        .zip(truth.channel(0))
        .map(|(&p, &t)| match (p >= 0.5, t >= 0.5) {
            (false, false) => CODE_TN,
            (true, true) => CODE_TP,
            (false, true) => CODE_FN,
            (true, false) => CODE_FP,
        })
        .collect();
    RasterGrid::new(pred.width(), pred.height(), 1, data)?
        .with_geo_transform(truth.geo_transform().copied())
        .with_channel_names(vec!["confusion"])
}

/// Renders a confusion map as RGB: TN black, TP green, FN red, FP yellow.
pub fn confusion_image(codes: &RasterGrid) -> image::RgbImage {
    let w = codes.width();
    image::RgbImage::from_fn(w as u32, codes.height() as u32, |x, y| {
        let code = codes.channel(0)[y as usize * w + x as usize];
        image::Rgb(match code as u8 {
            1 => [0, 255, 0],
            2 => [255, 0, 0],
            3 => [255, 255, 0],
            _ => [0, 0, 0],
        })
    })
}

pub fn save_confusion_png(codes: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = std::io::Cursor::new(Vec::new());
    confusion_image(codes)
        .write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    write_atomic(path, bytes.get_ref())
}

/// EAWS avalanche size classes with their typical release volumes (m³).
pub const EAWS_SIZE_CLASSES: [(u8, &str, &str); 5] = [
    (1, "Small", "<10^2"),
    (2, "Medium", "10^2-10^3"),
    (3, "Large", "10^3-10^4"),
    (4, "Very Large", "10^4-10^5"),
    (5, "Extremely large", ">10^5"),
];

/// A reference polygon rasterized to run-length encoded rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolygonRecord {
    pub polygon_id: String,
    pub size_class: u8,
    /// `[row, col_start, col_end)` runs.
    pub rle: Vec<[usize; 3]>,
}

impl PolygonRecord {
    pub fn pixel_count(&self) -> usize {
        self.rle.iter().map(|r| r[2].saturating_sub(r[1])).sum()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rle.iter().flat_map(|&[row, a, b]| (a..b).map(move |c| (row, c)))
    }

    /// Run-length encodes a set of pixels (any order, duplicates ignored).
    pub fn from_pixels(id: impl Into<String>, size_class: u8, pixels: &[(usize, usize)]) -> Self {
        let mut px = pixels.to_vec();
        px.sort_unstable();
        px.dedup();
        let mut rle: Vec<[usize; 3]> = Vec::new();
        for (r, c) in px {
            match rle.last_mut() {
                Some(run) if run[0] == r && run[2] == c => run[2] += 1,
                _ => rle.push([r, c, c + 1]),
            }
        }
        Self {
            polygon_id: id.into(),
            size_class,
            rle,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(1..=5).contains(&self.size_class) {
            return Err(Error::InvalidArgument(format!(
                "polygon {} has size class {} outside 1..=5",
                self.polygon_id, self.size_class
            )));
        }
        if self.pixel_count() == 0 {
            return Err(Error::InvalidArgument(format!("polygon {} is empty", self.polygon_id)));
        }
        for &[row, a, b] in &self.rle {
            if row >= height || b > width || a > b {
                return Err(Error::Dimension(format!(
                    "polygon {} run [{row}, {a}, {b}) lies outside {height}x{width}",
                    self.polygon_id
                )));
            }
        }
        Ok(())
    }
}

pub fn read_inventory(path: impl AsRef<Path>) -> Result<Vec<PolygonRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_inventory(path: impl AsRef<Path>, polygons: &[PolygonRecord]) -> Result<()> {
    let mut bytes = Vec::new();
    for p in polygons {
        serde_json::to_writer(&mut bytes, p)?;
        bytes.push(b'\n');
    }
    write_atomic(path.as_ref(), &bytes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHits {
    pub attempted: usize,
    pub hit: usize,
}

impl ClassHits {
    pub fn rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.hit as f64 / self.attempted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitReport {
    /// Per size class, including classes below `min_size_class`.
    pub classes: BTreeMap<u8, ClassHits>,
    pub min_size_class: u8,
    /// Totals over classes `>= min_size_class`.
    pub overall: ClassHits,
    pub overall_rate: f64,
}

/// Whether a polygon with `positive` predicted pixels out of `total` counts as detected.
pub fn is_hit(positive: usize, total: usize) -> bool {
    total > 0 && positive as f64 >= HIT_FRACTION * total as f64
}

/// Polygon hit rates per size class; classes below `min_size_class` are
/// reported but left out of the overall rate.
pub fn polygon_hit_rate(pred: &RasterGrid, inventory: &[PolygonRecord], min_size_class: u8) -> Result<HitReport> {
    if inventory.is_empty() {
        return Err(Error::InsufficientData("empty polygon inventory".into()));
    }
    let w = pred.width();
    let plane = pred.channel(0);
    let mut classes: BTreeMap<u8, ClassHits> = BTreeMap::new();
    for p in inventory {
        p.validate(w, pred.height())?;
        let positive = p.pixels().filter(|&(r, c)| plane[r * w + c] >= 0.5).count();
        let entry = classes.entry(p.size_class).or_default();
        entry.attempted += 1;
        if is_hit(positive, p.pixel_count()) {
            entry.hit += 1;
        }
    }
    let overall = classes
        .iter()
        .filter(|(&k, _)| k >= min_size_class)
        .fold(ClassHits::default(), |acc, (_, h)| ClassHits {
            attempted: acc.attempted + h.attempted,
            hit: acc.hit + h.hit,
        });
    Ok(HitReport {
        classes,
        min_size_class,
        overall,
        overall_rate: overall.rate(),
    })
}

/// Everything `eval` writes to its JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub threshold: f64,
    pub morphology: bool,
    pub counts: ConfusionCounts,
    pub metrics: PixelMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auprc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hits: Option<HitReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned: Option<ThresholdResult>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn g(values: &[f32]) -> RasterGrid {
        RasterGrid::new(values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn identical_masks() {
        let m = g(&[1.0, 0.0, 1.0, 0.0]);
        let (c, x) = pixel_metrics(&m, &m).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 0, fn_: 0, tn: 2 });
        assert_eq!((x.precision, x.recall, x.f1, x.iou), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn gaussian_row_counts() {
        // precision 0.8199 and recall 0.7928 from integer counts
        let c = ConfusionCounts {
            tp: 7928 * 8199,
            fp: 10000 * 7928 - 7928 * 8199,
            fn_: 10000 * 8199 - 7928 * 8199,
            tn: 0,
        };
        let m = c.metrics();
        assert_abs_diff_eq!(m.precision, 0.8199, epsilon = 1e-12);
        assert_abs_diff_eq!(m.recall, 0.7928, epsilon = 1e-12);
        assert_abs_diff_eq!(m.f1, 0.8061, epsilon = 5e-5);
        assert_abs_diff_eq!(m.iou, 0.6752, epsilon = 5e-5);
        assert_abs_diff_eq!(m.iou, m.f1 / (2.0 - m.f1), epsilon = 1e-12);
    }

    #[test]
    fn empty_denominators_are_zero() {
        let c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 5 };
        let m = c.metrics();
        assert_eq!((m.precision, m.recall, m.f1, m.iou), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(pixel_metrics(&g(&[1.0]), &g(&[1.0, 0.0])).is_err());
        assert!(confusion_map(&g(&[1.0]), &g(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn auprc_edge_cases() {
        let s = [(0.9, true), (0.8, true), (0.3, false), (0.1, false)];
        assert_eq!(auprc(&s).unwrap(), 1.0);
        let s = [(0.5, true), (0.5, false), (0.5, false), (0.5, true), (0.5, false)];
        assert_abs_diff_eq!(auprc(&s).unwrap(), 0.4, epsilon = 1e-15);
        assert!(auprc(&[(0.5, false)]).is_err());
    }

    #[test]
    fn confusion_codes() {
        let t = g(&[1.0, 0.0, 1.0, 0.0]);
        let same = confusion_map(&t, &t).unwrap();
        assert!(same.data().iter().all(|&c| c == CODE_TN || c == CODE_TP));
        let inv = g(&[0.0, 1.0, 0.0, 1.0]);
        let opp = confusion_map(&inv, &t).unwrap();
        assert_eq!(opp.data(), &[CODE_FN, CODE_FP, CODE_FN, CODE_FP]);
        let img = confusion_image(&opp);
        assert_eq!(img.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 255, 0]);
    }

    fn polygon(n: usize) -> PolygonRecord {
        PolygonRecord::from_pixels("p", 2, &(0..n).map(|c| (0, c)).collect::<Vec<_>>())
    }

    #[test]
    fn half_area_is_a_hit() {
        let p = polygon(10);
        let five = g(&[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let four = g(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(polygon_hit_rate(&five, &[p.clone()], 2).unwrap().overall.hit, 1);
        assert_eq!(polygon_hit_rate(&four, &[p], 2).unwrap().overall.hit, 0);
    }

    #[test]
    fn overall_rate_from_counts() {
        let pred = RasterGrid::filled(4, 1, 1, 0.0).unwrap();
        let mut hit_pred = pred.clone();
        hit_pred.set(0, 0, 0, 1.0).unwrap();
        let mut inv = Vec::new();
        for i in 0..112 {
            let col = if i < 77 { 0 } else { 1 };
            inv.push(PolygonRecord::from_pixels(format!("p{i}"), 2 + (i % 3) as u8, &[(0, col)]));
        }
        inv.push(PolygonRecord::from_pixels("small", 1, &[(0, 0)]));
        let r = polygon_hit_rate(&hit_pred, &inv, 2).unwrap();
        assert_eq!(r.overall, ClassHits { attempted: 112, hit: 77 });
        assert_abs_diff_eq!(r.overall_rate * 100.0, 68.75, epsilon = 1e-12);
        assert_eq!(r.classes[&1], ClassHits { attempted: 1, hit: 1 });
    }

    #[test]
    fn inventory_validation_and_io() {
        let pred = RasterGrid::filled(4, 2, 1, 1.0).unwrap();
        assert!(polygon_hit_rate(&pred, &[], 2).is_err());
        let bad = PolygonRecord {
            polygon_id: "x".into(),
            size_class: 6,
            rle: vec![[0, 0, 1]],
        };
        assert!(polygon_hit_rate(&pred, &[bad], 2).is_err());
        let outside = PolygonRecord::from_pixels("o", 2, &[(5, 0)]);
        assert!(polygon_hit_rate(&pred, &[outside], 2).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.jsonl");
        let inv = vec![
            PolygonRecord::from_pixels("a", 3, &[(0, 1), (0, 2), (1, 0)]),
            polygon(3),
        ];
        write_inventory(&path, &inv).unwrap();
        assert_eq!(read_inventory(&path).unwrap(), inv);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.lines().next().unwrap().contains("\"rle\":[[0,1,3],[1,0,1]]"));
    }
}
