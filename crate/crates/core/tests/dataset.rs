use std::collections::BTreeSet;

use post_core::dataset::synth::{glans_mask, synth_generate, synth_sample, SynthParams};
use post_core::dataset::{
    augment, augment_affine, augment_with_redraw, load_manifest, parse_manifest, plan_folds, save_manifest,
    AugmentError, AugmentRanges, AugmentSpec, FoldError, ImageRecord, ManifestError, Qc,
};
use post_core::{post_score, Point2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LINE: &str = r#"{"image_id": "img1", "path": "img1.png", "width": 100, "height": 80, "bbox": {"x_min": 10, "y_min": 10, "x_max": 90, "y_max": 70}, "landmarks": {"A": [50, 20], "B": [40, 40], "Bp": [60, 40], "C": [30, 60], "Cp": [70, 60]}, "qc": {"status": "accepted", "reason": null}, "source": "clinical"}"#;

fn records(n: usize) -> Vec<ImageRecord> {
    (0..n).map(|i| synth_sample(5, i, 128, 128).record(format!("r{i:03}"), format!("r{i:03}.png"))).collect()
}

#[test]
fn manifest_examples() {
    let two = format!("{LINE}\n{}\n", LINE.replace("img1", "img2"));
    let recs = parse_manifest(&two).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].gt_box.confidence, 1.0);

    let out_of_bounds = LINE.replace("\"C\": [30, 60]", "\"C\": [103, 60]");
    match parse_manifest(&out_of_bounds) {
        Err(ManifestError::BoundsError { image_id, .. }) => assert_eq!(image_id, "img1"),
        other => panic!("expected BoundsError, got {other:?}"),
    }
    let dup = format!("{LINE}\n{LINE}\n");
    assert!(matches!(parse_manifest(&dup), Err(ManifestError::DuplicateId(id)) if id == "img1"));
    let missing = LINE.replace("\"width\": 100, ", "");
    assert!(matches!(parse_manifest(&missing), Err(ManifestError::SchemaError { line: 1, .. })));
    let wrong_type = LINE.replace("\"width\": 100", "\"width\": \"wide\"");
    assert!(matches!(parse_manifest(&wrong_type), Err(ManifestError::SchemaError { .. })));
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = records(20);
    recs[3].qc = Qc::rejected("extreme camera angle");
    let path = dir.path().join("m.jsonl");
    save_manifest(&path, &recs).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), recs);
}

#[test]
fn fold_plan_examples() {
    let plan = plan_folds(&records(10), 5, 0.2, 1).unwrap();
    for f in 0..5 {
        assert_eq!(plan.split(f).test.len(), 2);
    }
    assert!(matches!(plan_folds(&records(4), 5, 0.2, 1), Err(FoldError::TooFewRecords { .. })));
}

#[test]
fn fold_plan_partitions_and_is_seeded() {
    let mut recs = records(53);
    recs[7].qc = Qc::rejected("blurred");
    let accepted: BTreeSet<String> = recs.iter().filter(|r| r.is_accepted()).map(|r| r.image_id.clone()).collect();
    let plan = plan_folds(&recs, 5, 0.2, 42).unwrap();
    let mut union = BTreeSet::new();
    let mut sizes = Vec::new();
    for f in 0..5 {
        let s = plan.split(f);
        sizes.push(s.test.len());
        for id in &s.test {
            assert!(union.insert(id.clone()), "{id} in two test folds");
        }
        let train: BTreeSet<_> = s.train.iter().collect();
        let val: BTreeSet<_> = s.val.iter().collect();
        let test: BTreeSet<_> = s.test.iter().collect();
        assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
        assert_eq!(train.len() + val.len() + test.len(), accepted.len());
        assert_eq!(val.len(), ((accepted.len() - test.len()) as f64 * 0.2).round() as usize);
    }
    assert_eq!(union, accepted);
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

    assert_eq!(plan, plan_folds(&recs, 5, 0.2, 42).unwrap());
    let mut reversed = recs.clone();
    reversed.reverse();
    assert_eq!(plan, plan_folds(&reversed, 5, 0.2, 42).unwrap());
    let plans: BTreeSet<String> = (0..20)
        .map(|s| serde_json::to_string(&plan_folds(&recs, 5, 0.2, s).unwrap().assignments).unwrap())
        .collect();
    assert_eq!(plans.len(), 20);
    let json = plan.to_json();
    assert_eq!(post_core::dataset::FoldPlan::from_json(&json).unwrap(), plan);
    for key in ["seed", "k", "assignments"] {
        assert!(json.contains(&format!("\"{key}\"")));
    }
}

fn symmetric_params() -> SynthParams {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = SynthParams::sample(&mut rng, 256, 256);
    p.center = Point2::new(127.5, 128.0);
    p.orientation = 0.0;
    p.plate_half_right = p.plate_half_left;
    p.corona_right = p.corona_left;
    p
}

#[test]
fn identity_augmentation_is_a_no_op() {
    let s = synth_sample(2, 0, 256, 256);
    let rec = s.record("x", "x.png");
    let (out, img) = augment(&rec, &s.image, &AugmentSpec::identity()).unwrap();
    assert_eq!(out, rec);
    assert_eq!(img, s.image);
}

#[test]
fn hflip_swaps_labels_and_keeps_score() {
    let flip = AugmentSpec {
        hflip: true,
        ..AugmentSpec::identity()
    };
    let sym = synth_generate(&symmetric_params()).unwrap();
    let rec = sym.record("sym", "sym.png");
    let (out, _) = augment(&rec, &sym.image, &flip).unwrap();
    let (before, after) = (post_score(&rec.landmarks).unwrap(), post_score(&out.landmarks).unwrap());
    assert!((after.score - before.score).abs() <= 1e-12 * before.score);
    // a symmetric glans maps onto itself
    for (p, q) in out.landmarks.points().iter().zip(rec.landmarks.points()) {
        assert!(p.distance(q) < 1e-9);
    }

    for i in 0..50 {
        let s = synth_sample(9, i, 256, 256);
        let rec = s.record("a", "a.png");
        let Ok((out, _)) = augment(&rec, &s.image, &flip) else { continue };
        let (b, a) = (post_score(&rec.landmarks).unwrap(), post_score(&out.landmarks).unwrap());
        assert!((a.ratio_left - b.ratio_right).abs() <= 1e-9 * b.ratio_right);
        assert!((a.ratio_right - b.ratio_left).abs() <= 1e-9 * b.ratio_left);
        assert!((a.score - b.score).abs() <= 1e-6 * b.score);
        // B stays left of B' after the flip, as in the source
        assert_eq!(out.landmarks.b.x < out.landmarks.b_prime.x, rec.landmarks.b.x < rec.landmarks.b_prime.x);
    }
}

#[test]
fn rotation_matches_matrix_oracle() {
    let s = synth_generate(&symmetric_params()).unwrap();
    let rec = s.record("r", "r.png");
    let spec = AugmentSpec {
        rotate_deg: 30.0,
        ..AugmentSpec::identity()
    };
    let (out, _) = augment(&rec, &s.image, &spec).unwrap();
    let (c, sn) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    let (cx, cy) = (127.5, 127.5);
    for (p, q) in rec.landmarks.points().iter().zip(out.landmarks.points()) {
        let (dx, dy) = (p.x - cx, p.y - cy);
        let oracle = Point2::new(cx + c * dx - sn * dy, cy + sn * dx + c * dy);
        assert!(oracle.distance(q) < 1e-6);
    }
    let out_of_frame = AugmentSpec {
        translate_x: 1.0,
        ..AugmentSpec::identity()
    };
    assert!(matches!(augment(&rec, &s.image, &out_of_frame), Err(AugmentError::LandmarkOutOfFrame(_))));
    let bad = AugmentSpec {
        rotate_deg: 45.0,
        ..AugmentSpec::identity()
    };
    assert!(matches!(augment(&rec, &s.image, &bad), Err(AugmentError::InvalidSpec(_))));
}

#[test]
fn redraw_is_deterministic_and_in_frame() {
    let s = synth_sample(4, 1, 256, 256);
    let rec = s.record("d", "d.png");
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        augment_with_redraw(&rec, &s.image, &AugmentRanges::default(), &mut rng, 10).unwrap()
    };
    let (a, img_a, spec_a) = run(8);
    let (b, img_b, spec_b) = run(8);
    assert_eq!((a.clone(), spec_a), (b, spec_b));
    assert_eq!(img_a, img_b);
    assert!(a.landmarks.points().iter().all(|p| a.in_bounds(*p) && a.gt_box.contains(*p)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn augmentation_commutes_with_annotation(seed in any::<u64>(), index in 0usize..1000) {
        let s = synth_sample(seed, index, 256, 256);
        let rec = s.record("c", "c.png");
        let spec = AugmentRanges::default().sample(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let affine = augment_affine(&spec, 256.0, 256.0);
        let rederived = s.params.transformed(&affine).landmarks();
        if let Ok((out, _)) = augment(&rec, &s.image, &spec) {
            for (p, q) in out.landmarks.points().iter().zip(rederived.points()) {
                prop_assert!(p.distance(q) < 1.0);
            }
            if !spec.hflip {
                let (b, a) = (post_score(&rec.landmarks).unwrap(), post_score(&out.landmarks).unwrap());
                prop_assert!((a.score - b.score).abs() <= 1e-6 * b.score);
            }
        }
    }
}

#[test]
fn synth_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = SynthParams::sample(&mut rng, 200, 160);
    let (a, b) = (synth_generate(&p).unwrap(), synth_generate(&p).unwrap());
    assert_eq!(a.image.as_raw(), b.image.as_raw());
    assert_eq!(a.landmarks, b.landmarks);
    assert_eq!(a.gt_box, b.gt_box);
}

#[test]
fn doubling_axes_doubles_diameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = SynthParams::sample(&mut rng, 256, 256);
    let mut q = p.clone();
    q.axis_u *= 2.0;
    q.axis_v *= 2.0;
    let (d1, d2) = (p.landmarks().glanular_diameter(), q.landmarks().glanular_diameter());
    assert!((d2 - 2.0 * d1).abs() < 1e-6);
}

#[test]
fn landmarks_lie_inside_rendered_mask() {
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SynthParams::sample(&mut rng, 96, 96);
        if p.validate().is_err() {
            continue;
        }
        let mask = glans_mask(&p);
        let lm = p.landmarks();
        assert!(lm.glanular_diameter() > 0.0);
        for q in lm.points() {
            let (x, y) = (q.x.round() as usize, q.y.round() as usize);
            assert!(mask[y * 96 + x], "seed {seed}: ({}, {}) outside mask", q.x, q.y);
        }
        assert!(lm.points().iter().all(|q| p.glans_box().contains(*q)));
    }
}

#[test]
fn invalid_params_are_rejected() {
    let mut p = symmetric_params();
    p.corona_left = 0.0;
    p.corona_right = 0.0;
    p.plate_depth = 0.0;
    p.plate_half_left = 0.95;
    assert!(synth_generate(&p).is_err());
    let mut q = symmetric_params();
    q.center = Point2::new(5.0, 5.0);
    assert!(synth_generate(&q).is_err());
}
