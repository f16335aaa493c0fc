//! Acceptance run: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use image::RgbImage;
use post_core::dataset::synth::synth_sample;
use post_core::dataset::{augment, plan_folds, AugmentSpec, ImageRecord};
use post_core::metrics::{average_precision, failure_rate, mean_average_precision, nme, DetectionRecord};
use post_core::{
    build_crop_transform, decode, decode_with, encode, post_score, BoundingBox, CodecConfig, Frame, LandmarkSet, Point2,
};
use post_models::{fit, nms, EpochRecord, Fit, LandmarkNet, LandmarkNetConfig, LandmarkSample, LrDrop, ModelError};
use post_nn::Optimizer;
use post_pipeline::service::{router, AppState, ServiceConfig};
use post_pipeline::{evaluate, Dataset, EvalConfig, FoldModels, ModelTrainer, Scorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_landmarks(r: &mut ChaCha8Rng, lo: f64, hi: f64, frame: Frame) -> LandmarkSet<f64> {
    let pts: [Point2<f64>; 5] = std::array::from_fn(|_| Point2::new(r.random_range(lo..hi), r.random_range(lo..hi)));
    LandmarkSet::from_points(pts, frame)
}

fn dist(p: (f64, f64), q: (f64, f64)) -> f64 {
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

fn xy(p: Point2<f64>) -> (f64, f64) {
    (p.x, p.y)
}

/// POST score straight from the five coordinates.
fn score_oracle(lm: &LandmarkSet<f64>) -> (f64, f64, f64) {
    let (a, b, bp, c, cp) = (xy(lm.a), xy(lm.b), xy(lm.b_prime), xy(lm.c), xy(lm.c_prime));
    let l = dist(a, b) / dist(b, c);
    let r = dist(a, bp) / dist(bp, cp);
    (l, r, (l + r) / 2.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut swap_ok = true;
    for _ in 0..1000 {
        let lm = random_landmarks(&mut r, 0.0, 1000.0, Frame::Original);
        let Ok(base) = post_score(&lm) else { continue };
        let theta = r.random_range(0.0..std::f64::consts::TAU);
        let s = r.random_range(0.1..10.0);
        let (tx, ty) = (r.random_range(-1e3..1e3), r.random_range(-1e3..1e3));
        let reflect = r.random_bool(0.5);
        let moved = lm.map(Frame::Original, |p| {
            let x = if reflect { -p.x } else { p.x };
            Point2::new(
                s * (theta.cos() * x - theta.sin() * p.y) + tx,
                s * (theta.sin() * x + theta.cos() * p.y) + ty,
            )
        });
        let got = post_score(&moved).expect("similarity keeps geometry non-degenerate");
        worst = worst.max(((got.score - base.score) / base.score).abs());
        let swapped = post_score(&lm.swap_sides()).unwrap();
        swap_ok &= swapped.ratio_left == base.ratio_right && swapped.ratio_right == base.ratio_left;
        let (ol, or, os) = score_oracle(&lm);
        swap_ok &= (ol - base.ratio_left).abs() <= 1e-12 * ol && (or - base.ratio_right).abs() <= 1e-12 * or;
        worst = worst.max(((os - base.score) / os).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-9 && swap_ok && secs < 5.0,
        format!("max relative error {worst:.2e} (< 1e-9), side swap exchanges ratios: {swap_ok}, {secs:.3}s (< 5 s)"),
    )
}

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut values = Vec::new();
    for _ in 0..1000 {
        let gt = random_landmarks(&mut r, 0.0, 500.0, Frame::Original);
        if gt.glanular_diameter() < 1.0 {
            continue;
        }
        let noise: Vec<(f64, f64)> = (0..5).map(|_| (r.random_range(-40.0..40.0), r.random_range(-40.0..40.0))).collect();
        let pts = gt.points();
        let pred = LandmarkSet::from_points(
            std::array::from_fn(|k| Point2::new(pts[k].x + noise[k].0, pts[k].y + noise[k].1)),
            Frame::Original,
        );
        let v = nme(&pred, &gt).unwrap();
        let d = dist(xy(gt.c), xy(gt.c_prime));
        let mut sum = 0.0;
        for (p, g) in pred.points().iter().zip(gt.points()) {
            sum += dist(xy(*p), xy(g));
        }
        let oracle = sum / 5.0 / d;
        worst = worst.max((v - oracle).abs());
        values.push(v);
    }
    let fr = failure_rate(&values, 0.1).unwrap();
    let count = values.iter().filter(|&&v| v > 0.1).count();
    let fr_ok = fr == count as f64 / values.len() as f64;
    let gt = LandmarkSet::from_points(
        [
            Point2::new(10.0, 0.0),
            Point2::new(3.0, 5.0),
            Point2::new(17.0, 5.0),
            Point2::new(8.0, 12.0),
            Point2::new(12.0, 12.0),
        ],
        Frame::Original,
    );
    let mut off = gt;
    off.a = Point2::new(gt.a.x, gt.a.y + 4.0);
    let single = nme(&off, &gt).unwrap();
    check(
        worst <= 1e-9 && fr_ok && single == 0.2,
        format!("max |NME - loop| {worst:.2e} over {} pairs, FR equals count: {fr_ok}, one landmark off by |CC'| gives {single}", values.len()),
    )
}

fn criterion_3() -> Outcome {
    let cfg = CodecConfig::default();
    let mut r = rng(3);
    let (mut worst_arg, mut worst_ref) = (0.0f64, 0.0f64);
    let max = (cfg.heatmap_size - 1) as f64 * cfg.stride();
    for _ in 0..1000 {
        let lm = random_landmarks(&mut r, 0.0, max, Frame::Crop);
        let hm = encode(&lm, &cfg).unwrap();
        let raw = decode_with(&hm, &cfg, false).unwrap().landmarks;
        let refined = decode(&hm, &cfg).unwrap().landmarks;
        for ((p, a), b) in lm.points().iter().zip(raw.points()).zip(refined.points()) {
            worst_arg = worst_arg.max(((p.x - a.x).abs()).max((p.y - a.y).abs()) / cfg.stride());
            worst_ref = worst_ref.max(((p.x - b.x).abs()).max((p.y - b.y).abs()) / cfg.stride());
        }
    }
    let on_cell = LandmarkSet::from_points([Point2::new(80.0, 100.0); 5], Frame::Crop);
    let hm = encode(&on_cell, &cfg).unwrap();
    let one = hm.get(0, 25, 21);
    let expected = (-1.0f64 / 4.5).exp();
    let one_ok = (one - expected).abs() < 1e-9 && hm.get(0, 25, 20) == 1.0;
    check(
        worst_arg <= 0.5 && worst_ref <= 0.35 && one_ok,
        format!("max per-axis error argmax {worst_arg:.3} (<= 0.5) refined {worst_ref:.3} (<= 0.35) cells, one-cell value {one:.12} vs exp(-1/4.5)"),
    )
}

fn iou_oracle(a: &BoundingBox<f64>, b: &BoundingBox<f64>) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Precision/recall at every distinct confidence cutoff, then the
/// all-points interpolated area.
fn ap_oracle(records: &[DetectionRecord<f64>], thr: f64) -> f64 {
    let total: usize = records.iter().map(|r| r.ground_truth.len()).sum();
    let mut cutoffs: Vec<f64> = records.iter().flat_map(|r| r.predictions.iter().map(|p| p.confidence)).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    let mut points = vec![(0.0f64, 1.0f64)];
    for &c in &cutoffs {
        let mut tp = 0;
        let mut n = 0;
        for rec in records {
            let mut preds: Vec<&BoundingBox<f64>> = rec.predictions.iter().filter(|p| p.confidence >= c).collect();
            preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            let mut used = vec![false; rec.ground_truth.len()];
            for p in preds {
                n += 1;
                let mut best: Option<(usize, f64)> = None;
                for (g, gt) in rec.ground_truth.iter().enumerate() {
                    let v = iou_oracle(p, gt);
                    if !used[g] && best.is_none_or(|(_, b)| v > b) {
                        best = Some((g, v));
                    }
                }
                if let Some((g, v)) = best {
                    if v >= thr {
                        used[g] = true;
                        tp += 1;
                    }
                }
            }
        }
        points.push((tp as f64 / total as f64, tp as f64 / n as f64));
    }
    let mut area = 0.0;
    for i in 1..points.len() {
        let envelope = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        area += (points[i].0 - points[i - 1].0) * envelope;
    }
    area
}

fn random_box(r: &mut ChaCha8Rng, conf: f64) -> BoundingBox<f64> {
    let x = r.random_range(0.0..60.0);
    let y = r.random_range(0.0..60.0);
    BoundingBox::new(x, y, x + r.random_range(5.0..40.0), y + r.random_range(5.0..40.0), conf).unwrap()
}

fn nms_oracle(boxes: &[BoundingBox<f64>], thr: f64, conf: f64) -> Vec<BoundingBox<f64>> {
    let mut cand: Vec<BoundingBox<f64>> = boxes.iter().copied().filter(|b| b.confidence >= conf).collect();
    let mut kept = Vec::new();
    while !cand.is_empty() {
        let mut best = 0;
        for i in 1..cand.len() {
            if cand[i].confidence > cand[best].confidence {
                best = i;
            }
        }
        let top = cand.remove(best);
        cand.retain(|b| iou_oracle(&top, b) <= thr);
        kept.push(top);
    }
    kept
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let mut ap_mismatch = 0;
    let mut map_mismatch = 0;
    for _ in 0..100 {
        let n_img = r.random_range(1..4);
        let mut left = 10;
        let records: Vec<DetectionRecord<f64>> = (0..n_img)
            .map(|i| {
                let gts = r.random_range(1..3);
                let preds = r.random_range(0..=left.min(5));
                left -= preds;
                DetectionRecord {
                    image_id: i.to_string(),
                    ground_truth: (0..gts).map(|_| random_box(&mut r, 1.0)).collect(),
                    predictions: (0..preds)
                        .map(|_| {
                            let c = (r.random_range(1..10) as f64) / 10.0;
                            random_box(&mut r, c)
                        })
                        .collect(),
                }
            })
            .collect();
        let ap = average_precision(&records, 0.5).unwrap();
        if ap != ap_oracle(&records, 0.5) {
            ap_mismatch += 1;
        }
        if mean_average_precision(&[ap]).unwrap() != ap {
            map_mismatch += 1;
        }
    }
    let mut nms_mismatch = 0;
    for _ in 0..100 {
        let boxes: Vec<BoundingBox<f64>> = (0..50)
            .map(|_| {
                let c = r.random_range(0.0..1.0);
                random_box(&mut r, c)
            })
            .collect();
        if nms(&boxes, 0.45, 0.25) != nms_oracle(&boxes, 0.45, 0.25) {
            nms_mismatch += 1;
        }
    }
    check(
        ap_mismatch + map_mismatch + nms_mismatch == 0,
        format!("AP vs cutoff oracle mismatches {ap_mismatch}/100, mAP != AP {map_mismatch}/100, NMS vs O(n^2) oracle mismatches {nms_mismatch}/100"),
    )
}

fn criterion_5(models: Option<&FoldModels>) -> Outcome {
    let mut r = rng(5);
    let mut worst_rt = 0.0f64;
    for _ in 0..1000 {
        let b = random_box(&mut r, 1.0);
        let (t, _) = build_crop_transform(&b, r.random_range(0.0..0.3), 256, 200.0, 200.0).unwrap();
        let inv = t.invert();
        let p = Point2::new(r.random_range(-50.0..250.0), r.random_range(-50.0..250.0));
        let q = inv.apply(t.apply(p));
        worst_rt = worst_rt.max(dist(xy(p), xy(q)));
    }
    let Some(m) = models else {
        return Err(format!("crop round trip {worst_rt:.2e}; no trained models for the inference check"));
    };
    let scorer = Scorer::new(&m.detector, &m.landmarks).map_err(|e| e.to_string())?;
    let mut worst_frame = 0.0f64;
    let mut ok = 0;
    let mut errors = Vec::new();
    for i in 0..100 {
        let s = synth_sample(9_000, i, 256, 256);
        match scorer.score(&format!("s{i}"), &s.image) {
            Ok(rep) => {
                ok += 1;
                let back = rep.frames.crop.apply_landmarks(&rep.landmarks).unwrap();
                for (p, q) in back.points().iter().zip(rep.frames.crop_landmarks.points()) {
                    worst_frame = worst_frame.max(dist(xy(*p), xy(q)));
                }
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    check(
        worst_rt < 1e-9 && ok == 100 && worst_frame < 1e-6,
        format!(
            "crop round trip max {worst_rt:.2e} px (< 1e-9), {ok}/100 inferences, frame consistency max {worst_frame:.2e} px (< 1e-6){}",
            if errors.is_empty() { String::new() } else { format!(", errors: {errors:?}") }
        ),
    )
}

fn desk_config() -> EvalConfig {
    let mut cfg = EvalConfig {
        seed: 2024,
        ..EvalConfig::default()
    };
    cfg.detector.epochs = 60;
    cfg.landmarks = vec![LandmarkNetConfig {
        stream_widths: vec![8, 16, 32, 64],
        input_size: 128,
        heatmap_size: 32,
        epochs: 25,
        learning_rate: 1e-3,
        lr_drops: vec![LrDrop { epoch: 15, lr: 1e-4 }, LrDrop { epoch: 21, lr: 1e-5 }],
        ..LandmarkNetConfig::default()
    }];
    cfg
}

fn criterion_6(models: &mut Option<FoldModels>) -> Outcome {
    let start = Instant::now();
    let (recs, imgs): (Vec<ImageRecord>, Vec<RgbImage>) = (0..300)
        .map(|i| {
            let s = synth_sample(2024, i, 256, 256);
            (s.record(format!("synth_{i:05}"), format!("synth_{i:05}.png")), s.image)
        })
        .unzip();
    let data = Dataset::from_parts(recs, imgs).map_err(|e| e.to_string())?;
    let plan = plan_folds(&data.records, 5, 0.2, 2024).map_err(|e| e.to_string())?;
    let cfg = desk_config();
    let mut trainer = ModelTrainer::new(cfg.clone());
    trainer.keep_models = true;
    let out = evaluate(&data, &plan, &cfg, &mut trainer).map_err(|e| e.to_string())?;
    *models = trainer.trained.into_iter().find(|m| m.fold == 0);
    let r = &out.report;
    let map = r.map.unwrap_or(0.0);
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    for f in &r.folds {
        eprintln!(
            "  fold {}: mAP {:.4} sensitivity {:.4} NME {:.4} FR {:.3}",
            f.fold,
            f.map.unwrap_or(f64::NAN),
            f.sensitivity.unwrap_or(f64::NAN),
            f.landmarks.mean,
            f.landmarks.failure_rate
        );
    }
    check(
        map >= 0.90 && r.nme_mean <= 0.10 && r.fr_at_0p1 <= 0.25 && r.folds.len() == 5 && minutes < 240.0,
        format!(
            "300 images, 5 folds ({} ok): mAP@0.5 {map:.4} (>= 0.90), NME {:.4} ± {:.4} (<= 0.10), FR@0.1 {:.3} (<= 0.25), sensitivity {:.4}, {minutes:.1} min CPU (< 240)",
            r.folds.len(),
            r.nme_mean,
            r.nme_std,
            r.fr_at_0p1,
            r.sensitivity.unwrap_or(f64::NAN)
        ),
    )
}

struct Scripted {
    val: Vec<f64>,
    epoch: usize,
}

impl Fit for Scripted {
    fn train_epoch(&mut self, epoch: usize, _: f64) -> Result<f64, ModelError> {
        self.epoch = epoch;
        Ok(1.0)
    }
    fn validate(&mut self) -> Result<f64, ModelError> {
        Ok(self.val[(self.epoch - 1).min(self.val.len() - 1)])
    }
    fn keep_best(&mut self) {}
    fn restore_best(&mut self) {}
}

fn criterion_7() -> Outcome {
    let cfg = LandmarkNetConfig::default();
    let mut flat = Scripted { val: vec![0.3], epoch: 0 };
    let out = fit(&mut flat, cfg.epochs, |e| cfg.lr_at(e), Some(cfg.early_stop_patience), |_| {}).unwrap();
    let non_improving = out.history.len() - out.best_epoch;
    let stop_ok = out.stopped_early && non_improving == 15;

    let mut improving = Scripted {
        val: (0..cfg.epochs).map(|i| 1.0 / (1 + i) as f64).collect(),
        epoch: 0,
    };
    let mut log: Vec<EpochRecord> = Vec::new();
    fit(&mut improving, cfg.epochs, |e| cfg.lr_at(e), Some(cfg.early_stop_patience), |r| log.push(*r)).unwrap();
    let lr = |e: usize| log.iter().find(|r| r.epoch == e).map(|r| r.lr);
    let lr_ok = lr(49) == Some(1e-4) && lr(50) == Some(1e-5) && lr(69) == Some(1e-5) && lr(70) == Some(1e-6);

    let s = synth_sample(7, 0, 256, 256);
    let (t, _) = build_crop_transform(&s.gt_box, 0.1, 256, 256.0, 256.0).unwrap();
    let mut input = vec![0.0; 3 * 256 * 256];
    post_core::imaging::warp_to_tensor(&s.image, &t.to_affine(), 256, 256, &mut input);
    let target = encode(&t.apply_landmarks(&s.landmarks).unwrap().cast::<f32>(), &cfg.codec())
        .unwrap()
        .into_vec();
    let sample = LandmarkSample { input, target };
    let mut net = LandmarkNet::new(&cfg, 3).unwrap();
    let mut opt = post_nn::Adam::new(cfg.learning_rate as f32, cfg.beta1 as f32, cfg.beta2 as f32);
    let mut reached = None;
    for step in 1..=200 {
        let (_, g) = net.train_step(&[&sample]);
        opt.step(&mut net.store, &g);
        if step % 25 == 0 && reached.is_none() && net.eval_loss(std::slice::from_ref(&sample)) < 1e-3 {
            reached = Some(step);
        }
    }
    let final_mse = net.eval_loss(std::slice::from_ref(&sample));
    check(
        stop_ok && lr_ok && final_mse < 1e-3,
        format!(
            "early stop after {non_improving} non-improving epochs ({} total), LR at epochs 50/70 = {:?}/{:?}, overfit MSE {final_mse:.2e} after 200 steps (< 1e-3 first seen at step {reached:?})",
            out.history.len(),
            lr(50),
            lr(70)
        ),
    )
}

fn criterion_8() -> Outcome {
    let s = synth_sample(8, 0, 256, 256);
    let rec = s.record("a", "a.png");
    let spec = AugmentSpec {
        rotate_deg: 30.0,
        ..AugmentSpec::identity()
    };
    let (rot, _) = augment(&rec, &s.image, &spec).map_err(|e| e.to_string())?;
    let (c, sn) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    let centre = (127.5, 127.5);
    let mut worst_rot = 0.0f64;
    for (p, q) in rec.landmarks.points().iter().zip(rot.landmarks.points()) {
        let (dx, dy) = (p.x - centre.0, p.y - centre.1);
        let expected = (c * dx - sn * dy + centre.0, sn * dx + c * dy + centre.1);
        worst_rot = worst_rot.max(dist(expected, xy(q)));
    }
    let flip = AugmentSpec {
        hflip: true,
        ..AugmentSpec::identity()
    };
    let (fl, _) = augment(&rec, &s.image, &flip).map_err(|e| e.to_string())?;
    let mirror = |p: Point2<f64>| (255.0 - p.x, p.y);
    let labels_ok = dist(xy(fl.landmarks.b), mirror(rec.landmarks.b_prime)) < 1e-9
        && dist(xy(fl.landmarks.b_prime), mirror(rec.landmarks.b)) < 1e-9
        && dist(xy(fl.landmarks.c), mirror(rec.landmarks.c_prime)) < 1e-9
        && dist(xy(fl.landmarks.c_prime), mirror(rec.landmarks.c)) < 1e-9
        && dist(xy(fl.landmarks.a), mirror(rec.landmarks.a)) < 1e-9;
    let before = post_score(&rec.landmarks).unwrap().score;
    let after = post_score(&fl.landmarks).unwrap().score;
    let rel = ((after - before) / before).abs();
    check(
        worst_rot < 1e-6 && labels_ok && rel < 1e-6,
        format!("30° rotation max deviation {worst_rot:.2e} px (< 1e-6), hflip swaps B/C labels: {labels_ok}, score relative change {rel:.2e} (< 1e-6)"),
    )
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn criterion_9(models: Option<&FoldModels>) -> Outcome {
    let m = models.ok_or("no trained models")?;
    let scorer = Scorer::new(&m.detector, &m.landmarks).map_err(|e| e.to_string())?;
    let app = router(AppState::new(scorer, ServiceConfig::default()));
    let fixture = synth_sample(31_337, 0, 256, 256).image;
    let mut png = std::io::Cursor::new(Vec::new());
    fixture.write_to(&mut png, image::ImageFormat::Png).unwrap();
    let png = png.into_inner();
    let boundary = "acceptance";
    let score_req = || {
        let mut body = format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"fixture.png\"\r\nContent-Type: image/png\r\n\r\n"
        )
        .into_bytes();
        body.extend_from_slice(&png);
        body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
        Request::post("/api/v1/score")
            .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
            .body(Body::from(body))
            .unwrap()
    };
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let (s1, mut a) = call(&app, score_req()).await;
        let (s2, mut b) = call(&app, score_req()).await;
        let schema_ok = s1 == StatusCode::OK
            && ["image_id", "box", "landmarks", "confidence", "post", "models", "timings_ms", "frames"]
                .iter()
                .all(|k| a.get(k).is_some())
            && ["A", "B", "Bp", "C", "Cp"]
                .iter()
                .all(|k| a["landmarks"][k].as_array().is_some_and(|v| v.len() == 2 && v.iter().all(Value::is_number)))
            && ["ratio_left", "ratio_right", "score"].iter().all(|k| a["post"][k].is_number())
            && ["x_min", "y_min", "x_max", "y_max", "confidence"].iter().all(|k| a["box"][k].is_number());
        for v in [&mut a, &mut b] {
            if let Some(o) = v.as_object_mut() {
                o.remove("timings_ms");
            }
        }
        let repeat_ok = s2 == StatusCode::OK && a == b;
        let degenerate = r#"{"landmarks": {"A": [0, 0], "B": [5, 5], "Bp": [9, 1], "C": [5, 5], "Cp": [12, 8]}}"#;
        let (s3, err) = call(
            &app,
            Request::post("/api/v1/recompute")
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(degenerate))
                .unwrap(),
        )
        .await;
        let degenerate_ok = s3 == StatusCode::UNPROCESSABLE_ENTITY && err["error"] == "DegenerateGeometry" && err["detail"].is_string();
        check(
            schema_ok && repeat_ok && degenerate_ok,
            format!("score {s1} schema valid: {schema_ok}, repeat call identical: {repeat_ok}, degenerate recompute {s3} {}", err["error"]),
        )
    })
}

fn run(name: usize, f: impl FnOnce() -> Outcome) -> (usize, Outcome) {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    eprintln!("  criterion {name} finished in {:.1}s", start.elapsed().as_secs_f64());
    (name, out)
}

fn main() {
    // cargo passes harness flags such as --list; only run on a plain invocation
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results = vec![
        run(1, criterion_1),
        run(2, criterion_2),
        run(3, criterion_3),
        run(4, criterion_4),
        run(7, criterion_7),
        run(8, criterion_8),
    ];
    let mut models = None;
    results.push(run(6, || criterion_6(&mut models)));
    results.push(run(5, || criterion_5(models.as_ref())));
    results.push(run(9, || criterion_9(models.as_ref())));
    results.sort_by_key(|r| r.0);
    println!();
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(msg) => println!("PASS criterion {n}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {n}: {msg}")
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
