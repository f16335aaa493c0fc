#![allow(dead_code)]

use std::io::Cursor;
use std::sync::OnceLock;

use image::RgbImage;
use post_core::dataset::synth::synth_sample;
use post_core::dataset::ImageRecord;
use post_models::{train_detector, train_landmarks, DetectorConfig, LandmarkNetConfig, TrainRequest, TrainedModel};
use post_pipeline::prep::{detection_sample, landmark_sample};
use post_pipeline::Scorer;

pub struct Fixture {
    pub record: ImageRecord,
    pub image: RgbImage,
    pub png: Vec<u8>,
    pub detector: TrainedModel,
    pub landmarks: TrainedModel,
}

pub fn tiny_detector() -> DetectorConfig {
    DetectorConfig {
        grid_size: 4,
        input_size: 32,
        channels: vec![8, 8, 16],
        epochs: 40,
        batch_size: 4,
        learning_rate: 2e-2,
        ..DetectorConfig::default()
    }
}

pub fn tiny_landmarks() -> LandmarkNetConfig {
    LandmarkNetConfig {
        stream_widths: vec![8, 16],
        stages: 2,
        stem_width: 8,
        input_size: 64,
        heatmap_size: 16,
        epochs: 100,
        batch_size: 4,
        learning_rate: 3e-3,
        lr_drops: Vec::new(),
        ..LandmarkNetConfig::default()
    }
}

pub fn png_bytes(image: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

/// Tiny networks overfit on a single synthetic image.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let s = synth_sample(11, 0, 96, 96);
        let record = s.record("fixture", "fixture.png");
        let image = s.image;
        let dcfg = tiny_detector();
        let dsample = detection_sample(&record, &image, &dcfg, None).unwrap();
        let dval = vec![dsample.clone()];
        let detector = train_detector(
            &dcfg,
            TrainRequest {
                seed: 1,
                data_hash: "fixture".into(),
                provider: |_| vec![dsample.clone(); 16],
                val: &dval,
            },
            |_| {},
        )
        .unwrap();
        let lcfg = tiny_landmarks();
        let lsample = landmark_sample(&record, &image, &record.gt_box, &lcfg, 0.1, None).unwrap();
        let lval = vec![lsample.clone()];
        let landmarks = train_landmarks(
            &lcfg,
            TrainRequest {
                seed: 2,
                data_hash: "fixture".into(),
                provider: |_| vec![lsample.clone(); 16],
                val: &lval,
            },
            |_| {},
        )
        .unwrap();
        let png = png_bytes(&image);
        Fixture {
            record,
            image,
            png,
            detector,
            landmarks,
        }
    })
}

pub fn scorer() -> Scorer {
    let f = fixture();
    Scorer::new(&f.detector, &f.landmarks).unwrap()
}
