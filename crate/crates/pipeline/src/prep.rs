//! Turns manifest records into network inputs.

use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use post_core::dataset::{augment_affine, augment_annotation, load_manifest, transform_landmarks, AugmentRanges, AugmentSpec, ImageRecord};
use post_core::{build_crop_transform, encode, imaging, Affine2, BoundingBox, FrameTransform};
use post_models::artifact::sha256_hex;
use post_models::{DetectionSample, DetectorConfig, LandmarkNetConfig, LandmarkSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::PipelineError;

/// Margin added around a box before cropping, as a fraction of its longer side.
pub const DEFAULT_MARGIN: f64 = 0.1;
pub const MAX_REDRAWS: usize = 10;

/// Records with their decoded images, keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    images: HashMap<String, RgbImage>,
}

impl Dataset {
    pub fn from_parts(records: Vec<ImageRecord>, images: Vec<RgbImage>) -> Result<Self, PipelineError> {
        if records.len() != images.len() {
            return Err(PipelineError::Invalid("records and images differ in length".into()));
        }
        let mut map = HashMap::new();
        for (r, img) in records.iter().zip(images) {
            if img.dimensions() != (r.width, r.height) {
                return Err(PipelineError::Image {
                    id: r.image_id.clone(),
                    message: format!("decoded {:?}, manifest says {}x{}", img.dimensions(), r.width, r.height),
                });
            }
            map.insert(r.image_id.clone(), img);
        }
        Ok(Self { records, images: map })
    }

    /// Loads the manifest and every accepted image it references.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let manifest = manifest.as_ref();
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let records: Vec<ImageRecord> = load_manifest(manifest)?.into_iter().filter(|r| r.is_accepted()).collect();
        let images = records
            .iter()
            .map(|r| {
                imaging::load_rgb(r.resolved_path(dir)).map_err(|e| PipelineError::Image {
                    id: r.image_id.clone(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(records, images)
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == id)
    }

    pub fn image(&self, id: &str) -> Option<&RgbImage> {
        self.images.get(id)
    }

    pub fn get(&self, id: &str) -> Result<(&ImageRecord, &RgbImage), PipelineError> {
        match (self.record(id), self.image(id)) {
            (Some(r), Some(i)) => Ok((r, i)),
            _ => Err(PipelineError::Invalid(format!("image id {id} not in dataset"))),
        }
    }

    /// SHA-256 over the manifest lines of `ids`, in the given order.
    pub fn hash_of(&self, ids: &[String]) -> String {
        let mut text = String::new();
        for id in ids {
            if let Some(r) = self.record(id) {
                text.push_str(&r.to_json_line());
                text.push('\n');
            }
        }
        sha256_hex(text.as_bytes())
    }
}

/// Whole-image letterbox into a `size` square.
pub fn letterbox(width: u32, height: u32, size: usize) -> Result<FrameTransform<f64>, PipelineError> {
    let (w, h) = (width as f64, height as f64);
    let full = BoundingBox::new(0.0, 0.0, w, h, 1.0)?;
    Ok(build_crop_transform(&full, 0.0, size, w, h)?.0)
}

pub fn detector_input(image: &RgbImage, size: usize) -> Result<(Vec<f32>, FrameTransform<f64>), PipelineError> {
    let t = letterbox(image.width(), image.height(), size)?;
    let mut input = vec![0.0; 3 * size * size];
    imaging::warp_to_tensor(image, &t.to_affine(), size, size, &mut input);
    Ok((input, t))
}

/// Letterboxed detector sample; `spec` augments in the original frame and
/// is folded into the same warp.
pub fn detection_sample(
    record: &ImageRecord,
    image: &RgbImage,
    cfg: &DetectorConfig,
    spec: Option<&AugmentSpec>,
) -> Result<DetectionSample, PipelineError> {
    let (rec, aug) = match spec {
        Some(s) => augment_annotation(record, s)?,
        None => (record.clone(), Affine2::identity()),
    };
    let size = cfg.input_size;
    let t = letterbox(record.width, record.height, size)?;
    let mut input = vec![0.0; 3 * size * size];
    imaging::warp_to_tensor(image, &aug.then(&t.to_affine()), size, size, &mut input);
    Ok(DetectionSample {
        input,
        boxes: vec![t.apply_box(&rec.gt_box)],
    })
}

/// Landmark sample cropped around `region` (usually the ground-truth box);
/// `spec` augments in crop space and is folded into the same warp.
pub fn landmark_sample(
    record: &ImageRecord,
    image: &RgbImage,
    region: &BoundingBox<f64>,
    cfg: &LandmarkNetConfig,
    margin: f64,
    spec: Option<&AugmentSpec>,
) -> Result<LandmarkSample, PipelineError> {
    let size = cfg.input_size;
    let (t, _) = build_crop_transform(region, margin, size, record.width as f64, record.height as f64)?;
    let crop = t.apply_landmarks(&record.landmarks)?;
    let aug = match spec {
        Some(s) => {
            s.validate()?;
            augment_affine(s, size as f64, size as f64)
        }
        None => Affine2::identity(),
    };
    let target = encode(&transform_landmarks(&crop, &aug).cast::<f32>(), &cfg.codec())?.into_vec();
    let mut input = vec![0.0; 3 * size * size];
    imaging::warp_to_tensor(image, &t.to_affine().then(&aug), size, size, &mut input);
    Ok(LandmarkSample { input, target })
}

/// Samples augmentation specs until `make` succeeds, falling back to the
/// unaugmented sample after [`MAX_REDRAWS`] failures.
pub fn with_redraw<T>(
    seed: u64,
    ranges: Option<&AugmentRanges>,
    mut make: impl FnMut(Option<&AugmentSpec>) -> Result<T, PipelineError>,
) -> Result<T, PipelineError> {
    if let Some(ranges) = ranges {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_REDRAWS {
            let spec = ranges.sample(&mut rng);
            if let Ok(s) = make(Some(&spec)) {
                return Ok(s);
            }
        }
    }
    make(None)
}

/// Per-sample augmentation seed for `epoch`.
pub fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}
