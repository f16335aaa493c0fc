//! Annotated image records, the JSON-lines manifest, fold planning,
//! augmentation and the synthetic generator.

mod augment;
mod folds;
pub mod synth;

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{BoundingBox, Frame, LandmarkSet, Point2};

pub use augment::{
    augment, augment_affine, augment_annotation, augment_with_redraw, transform_box, transform_landmarks, AugmentError, AugmentRanges,
    AugmentSpec,
};
pub use folds::{plan_folds, FoldError, FoldPlan, FoldSplit};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: schema error: {message}")]
    SchemaError { line: usize, message: String },
    #[error("record {image_id}: {message}")]
    BoundsError { image_id: String, message: String },
    #[error("duplicate image_id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qc {
    pub status: QcStatus,
    pub reason: Option<String>,
}

impl Qc {
    pub fn accepted() -> Self {
        Self {
            status: QcStatus::Accepted,
            reason: None,
        }
    }

    pub fn rejected(reason: impl Into<String>) -> Self {
        Self {
            status: QcStatus::Rejected,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Clinical,
    Synthetic,
}

/// Box as written in the manifest (no confidence field).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireLandmarks {
    #[serde(rename = "A")]
    a: Point2<f64>,
    #[serde(rename = "B")]
    b: Point2<f64>,
    #[serde(rename = "Bp")]
    b_prime: Point2<f64>,
    #[serde(rename = "C")]
    c: Point2<f64>,
    #[serde(rename = "Cp")]
    c_prime: Point2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    image_id: String,
    path: String,
    width: u32,
    height: u32,
    bbox: WireBox,
    landmarks: WireLandmarks,
    qc: Qc,
    source: Source,
}

/// One annotated image. Landmarks and box are in the original frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub gt_box: BoundingBox<f64>,
    pub landmarks: LandmarkSet<f64>,
    pub qc: Qc,
    pub source: Source,
}

impl ImageRecord {
    pub fn is_accepted(&self) -> bool {
        self.qc.status == QcStatus::Accepted
    }

    pub fn in_bounds(&self, p: Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }

    /// Checks the record invariants: landmarks inside the image, a valid box
    /// that contains every landmark.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let fail = |message: String| ManifestError::BoundsError {
            image_id: self.image_id.clone(),
            message,
        };
        if self.landmarks.frame != Frame::Original {
            return Err(fail(format!("landmarks in {} frame", self.landmarks.frame)));
        }
        for (l, p) in crate::geometry::Landmark::ALL.iter().zip(self.landmarks.points()) {
            if !p.is_finite() || !self.in_bounds(p) {
                return Err(fail(format!(
                    "landmark {} at ({}, {}) outside {}x{} image",
                    l.key(),
                    p.x,
                    p.y,
                    self.width,
                    self.height
                )));
            }
            if !self.gt_box.contains(p) {
                return Err(fail(format!("landmark {} outside bbox", l.key())));
            }
        }
        self.gt_box.validate().map_err(|e| fail(e.to_string()))?;
        Ok(())
    }

    fn to_wire(&self) -> WireRecord {
        let b = &self.gt_box;
        let l = &self.landmarks;
        WireRecord {
            image_id: self.image_id.clone(),
            path: self.path.to_string_lossy().into_owned(),
            width: self.width,
            height: self.height,
            bbox: WireBox {
                x_min: b.x_min,
                y_min: b.y_min,
                x_max: b.x_max,
                y_max: b.y_max,
            },
            landmarks: WireLandmarks {
                a: l.a,
                b: l.b,
                b_prime: l.b_prime,
                c: l.c,
                c_prime: l.c_prime,
            },
            qc: self.qc.clone(),
            source: self.source,
        }
    }

    fn from_wire(w: WireRecord) -> Self {
        let l = w.landmarks;
        Self {
            image_id: w.image_id,
            path: PathBuf::from(w.path),
            width: w.width,
            height: w.height,
            gt_box: BoundingBox {
                x_min: w.bbox.x_min,
                y_min: w.bbox.y_min,
                x_max: w.bbox.x_max,
                y_max: w.bbox.y_max,
                confidence: 1.0,
            },
            landmarks: LandmarkSet::from_points([l.a, l.b, l.b_prime, l.c, l.c_prime], Frame::Original),
            qc: w.qc,
            source: w.source,
        }
    }

    /// One manifest line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("record serialises")
    }

    /// Resolves a relative image path against the manifest directory.
    pub fn resolved_path(&self, manifest_dir: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            manifest_dir.join(&self.path)
        }
    }
}

/// Parses and validates manifest text; blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ImageRecord>, ManifestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| ManifestError::SchemaError {
            line: i + 1,
            message: e.to_string(),
        })?;
        let record = ImageRecord::from_wire(wire);
        record.validate()?;
        if !seen.insert(record.image_id.clone()) {
            return Err(ManifestError::DuplicateId(record.image_id));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>, ManifestError> {
    let file = fs::File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_manifest(&text)
}

pub fn save_manifest(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<(), ManifestError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", r.to_json_line())?;
    }
    w.flush()?;
    Ok(())
}
