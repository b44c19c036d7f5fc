//! Detector backends and post-processing of their boxes.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imaging::SourceImage;
use crate::{Error, Result};

#[cfg(feature = "onnx")]
mod onnx;
#[cfg(feature = "onnx")]
pub use onnx::{read_label_map, OnnxDetector};

pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;
pub const DOG_CLASS: &str = "dog";

/// Axis-aligned box in pixel coordinates, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn is_square(&self) -> bool {
        self.w == self.h
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 as u64 || y1 <= y0 as u64 {
            return None;
        }
        Some(BoundingBox::new(x0, y0, (x1 - x0 as u64) as u32, (y1 - y0 as u64) as u32))
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }
}

/// A detector box before clamping; coordinates may fall outside the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub class_label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_label: String,
    pub confidence: f64,
}

pub trait DetectorBackend: Send + Sync {
    /// Unclamped detections for `image`, in any order.
    fn detect_raw(&self, image: &SourceImage) -> Result<Vec<RawDetection>>;

    /// Whether `detect_raw` may run on several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Clamps `raw` to a `width`×`height` image. `None` when nothing is left.
pub fn clamp_box(raw: &RawDetection, width: u32, height: u32) -> Option<BoundingBox> {
    let x0 = raw.x.clamp(0, width as i64);
    let y0 = raw.y.clamp(0, height as i64);
    let x1 = raw.x.saturating_add(raw.w).clamp(0, width as i64);
    let y1 = raw.y.saturating_add(raw.h).clamp(0, height as i64);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some(BoundingBox::new(
        x0 as u32,
        y0 as u32,
        (x1 - x0) as u32,
        (y1 - y0) as u32,
    ))
}

/// Runs the backend, clamps boxes to the image, drops empty boxes and sorts
/// by descending confidence (stable for equal confidences).
pub fn detect(image: &SourceImage, backend: &dyn DetectorBackend) -> Result<Vec<Detection>> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let raw = backend.detect_raw(image)?;
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(Error::Detector(format!(
                "confidence {} outside [0, 1] for class {:?}",
                r.confidence, r.class_label
            )));
        }
        if let Some(bbox) = clamp_box(&r, image.width(), image.height()) {
            out.push(Detection {
                bbox,
                class_label: r.class_label,
                confidence: r.confidence,
            });
        }
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(out)
}

pub fn filter_class(detections: &[Detection], class_label: &str, min_confidence: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.class_label == class_label && d.confidence >= min_confidence)
        .cloned()
        .collect()
}

/// Keeps `"dog"` detections at or above `min_confidence`, preserving order.
pub fn filter_dogs(detections: &[Detection], min_confidence: f64) -> Vec<Detection> {
    filter_class(detections, DOG_CLASS, min_confidence)
}

/// Highest confidence wins; ties go to the larger box, then the earlier one.
pub fn select_primary(detections: &[Detection]) -> Option<&Detection> {
    let mut best: Option<&Detection> = None;
    for d in detections {
        best = match best {
            None => Some(d),
            Some(b) => {
                let ord = d
                    .confidence
                    .total_cmp(&b.confidence)
                    .then(d.bbox.area().cmp(&b.bbox.area()));
                if ord == Ordering::Greater {
                    Some(d)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Replays pre-recorded detections keyed by image key. Images without an
/// entry have no detections.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDetector {
    table: HashMap<String, Vec<RawDetection>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptedRow {
    image_path: String,
    class_label: String,
    confidence: f64,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

impl ScriptedDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, detection: RawDetection) {
        self.table.entry(key.into()).or_default().push(detection);
    }

    pub fn get(&self, key: &str) -> &[RawDetection] {
        self.table.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Reads a table with header `image_path,class_label,confidence,x,y,w,h`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut out = Self::new();
        for row in reader.deserialize() {
            let row: ScriptedRow = row?;
            out.insert(
                row.image_path,
                RawDetection {
                    x: row.x,
                    y: row.y,
                    w: row.w,
                    h: row.h,
                    class_label: row.class_label,
                    confidence: row.confidence,
                },
            );
        }
        Ok(out)
    }

    /// Writes the table sorted by key, rows within a key in insertion order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        if keys.is_empty() {
            w.write_record(["image_path", "class_label", "confidence", "x", "y", "w", "h"])?;
        }
        for key in keys {
            for d in &self.table[key] {
                w.serialize(ScriptedRow {
                    image_path: key.clone(),
                    class_label: d.class_label.clone(),
                    confidence: d.confidence,
                    x: d.x,
                    y: d.y,
                    w: d.w,
                    h: d.h,
                })?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

impl DetectorBackend for ScriptedDetector {
    fn detect_raw(&self, image: &SourceImage) -> Result<Vec<RawDetection>> {
        Ok(self.get(&image.key).to_vec())
    }
}
