//! Grid-head detector: a strided convolutional backbone, a neck that folds
//! the previous scale back in, and a 1×1 head predicting
//! `(tx, ty, tw, th, objectness)` per grid cell.
//!
//! Box decoding per cell `(gx, gy)`: centre `((gx + 2σ(tx) - 0.5)·stride,
//! (gy + 2σ(ty) - 0.5)·stride)`, size `(σ(tw)·input, σ(th)·input)`,
//! confidence `σ(obj)`. A box is assigned to the cell holding its centre and
//! to the nearer horizontal and vertical neighbours.

use std::fs;

use post_core::BoundingBox;
use post_nn::loss::{bce_with_logits, sigmoid};
use post_nn::{Conv2d, ConvBn, Graph, ParamStore, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::DetectorConfig;
use crate::ModelError;

pub const OUTPUTS_PER_CELL: usize = 5;

/// Input image (normalised CHW, `input_size` square) with its boxes in
/// input pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSample {
    pub input: Vec<f32>,
    pub boxes: Vec<BoundingBox<f64>>,
}

#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    pub store: ParamStore,
    backbone: Vec<(ConvBn, ConvBn)>,
    neck_down: ConvBn,
    neck: ConvBn,
    head: Conv2d,
}

impl Detector {
    pub fn new(config: &DetectorConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut backbone = Vec::new();
        let mut in_c = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            let down = ConvBn::new(&mut store, &mut rng, &format!("backbone.{i}.down"), in_c, c, 3, 2, true);
            let conv = ConvBn::new(&mut store, &mut rng, &format!("backbone.{i}.conv"), c, c, 3, 1, true);
            backbone.push((down, conv));
            in_c = c;
        }
        let n = config.channels.len();
        let prev = if n >= 2 { config.channels[n - 2] } else { 3 };
        let last = config.channels[n - 1];
        let neck_down = ConvBn::new(&mut store, &mut rng, "neck.down", prev, last, 3, 2, false);
        let neck = ConvBn::new(&mut store, &mut rng, "neck.conv", last, last, 3, 1, true);
        let head = Conv2d::new(&mut store, &mut rng, "head", last, OUTPUTS_PER_CELL, 1, 1, true);
        // start with low objectness everywhere
        let obj_bias = store.value_mut(head.bias.expect("head has bias"));
        obj_bias[4] = -4.0;
        let mut det = Self {
            config: config.clone(),
            store,
            backbone,
            neck_down,
            neck,
            head,
        };
        if let Some(path) = &config.pretrained_init {
            det.store.load_from(fs::File::open(path)?)?;
        }
        Ok(det)
    }

    fn graph_forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let mut h = x;
        let mut prev = x;
        for (down, conv) in &self.backbone {
            prev = h;
            h = down.forward(g, h);
            h = conv.forward(g, h);
        }
        let lateral = self.neck_down.forward(g, prev);
        let fused = g.add(h, lateral);
        let fused = g.relu(fused);
        let n = self.neck.forward(g, fused);
        self.head.forward(g, n)
    }

    fn input_tensor(&self, inputs: &[&[f32]]) -> Tensor {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(inputs.len() * 3 * s * s);
        for i in inputs {
            assert_eq!(i.len(), 3 * s * s, "detector input length");
            data.extend_from_slice(i);
        }
        Tensor::from_vec(Shape::new(inputs.len(), 3, s, s), data)
    }

    /// Raw head output `(N, 5, grid, grid)` in inference mode.
    pub fn forward_raw(&self, inputs: &[&[f32]]) -> Tensor {
        let mut g = Graph::new(&self.store, false);
        let x = g.input(self.input_tensor(inputs));
        let out = self.graph_forward(&mut g, x);
        g.value(out).clone()
    }

    /// One box per grid cell for every input, in input pixels.
    pub fn forward(&self, inputs: &[&[f32]]) -> Vec<Vec<BoundingBox<f64>>> {
        let raw = self.forward_raw(inputs);
        (0..inputs.len()).map(|n| self.decode_cells(&raw, n)).collect()
    }

    fn decode_cells(&self, raw: &Tensor, n: usize) -> Vec<BoundingBox<f64>> {
        let gsz = self.config.grid_size;
        let stride = self.config.stride() as f64;
        let size = self.config.input_size as f64;
        let mut out = Vec::with_capacity(gsz * gsz);
        for gy in 0..gsz {
            for gx in 0..gsz {
                let o = |c: usize| sigmoid(raw.at(n, c, gy, gx)) as f64;
                let cx = (gx as f64 + 2.0 * o(0) - 0.5) * stride;
                let cy = (gy as f64 + 2.0 * o(1) - 0.5) * stride;
                let w = (o(2) * size).max(1e-3);
                let h = (o(3) * size).max(1e-3);
                out.push(BoundingBox::from_center(cx, cy, w, h, o(4)));
            }
        }
        out
    }

    /// Objectness BCE over every cell plus squared centre/size error (in
    /// grid cells) on positive cells; both summed per image and averaged
    /// over the batch.
    pub fn loss(&self, raw: &Tensor, targets: &[&[BoundingBox<f64>]]) -> (f64, Tensor) {
        let shape = raw.shape();
        let gsz = self.config.grid_size;
        let stride = self.config.stride() as f64;
        let cells_per_side = gsz as f32;
        let mut grad = Tensor::zeros(shape);
        let inv_n = 1.0 / shape.n as f32;
        let mut total = 0.0f64;
        for (n, boxes) in targets.iter().enumerate() {
            let mut positive = vec![None; gsz * gsz];
            for b in boxes.iter() {
                let c = b.center();
                let (ux, uy) = (c.x / stride, c.y / stride);
                for (gx, gy) in assigned_cells(ux, uy, gsz) {
                    positive[gy * gsz + gx] = Some((
                        ((ux - gx as f64 + 0.5) / 2.0) as f32,
                        ((uy - gy as f64 + 0.5) / 2.0) as f32,
                        (b.width() / stride) as f32,
                        (b.height() / stride) as f32,
                    ));
                }
            }
            for gy in 0..gsz {
                for gx in 0..gsz {
                    let cell = positive[gy * gsz + gx];
                    let obj_i = raw.index(n, 4, gy, gx);
                    let (l, d) = bce_with_logits(raw.data()[obj_i], if cell.is_some() { 1.0 } else { 0.0 });
                    total += f64::from(l * inv_n);
                    grad.data_mut()[obj_i] = d * inv_n;
                    if let Some((fx, fy, w, h)) = cell {
                        let targets = [fx, fy, w / cells_per_side, h / cells_per_side];
                        for (c, t) in targets.iter().enumerate() {
                            let i = raw.index(n, c, gy, gx);
                            let s = sigmoid(raw.data()[i]);
                            // errors measured in cells
                            let k = if c < 2 { 2.0 } else { cells_per_side };
                            let e = k * (s - t);
                            total += f64::from(e * e * inv_n);
                            grad.data_mut()[i] = 2.0 * e * k * s * (1.0 - s) * inv_n;
                        }
                    }
                }
            }
        }
        (total, grad)
    }

    /// Loss and parameter gradients on one batch in training mode.
    pub fn train_step(&self, batch: &[&DetectionSample]) -> (f64, post_nn::Gradients) {
        let inputs: Vec<&[f32]> = batch.iter().map(|s| s.input.as_slice()).collect();
        let targets: Vec<&[BoundingBox<f64>]> = batch.iter().map(|s| s.boxes.as_slice()).collect();
        let mut g = Graph::new(&self.store, true);
        let x = g.input(self.input_tensor(&inputs));
        let out = self.graph_forward(&mut g, x);
        let (loss, grad) = self.loss(g.value(out), &targets);
        (loss, g.backward(out, grad))
    }

    /// Mean inference-mode loss over `samples`.
    pub fn eval_loss(&self, samples: &[DetectionSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for chunk in samples.chunks(self.config.batch_size) {
            let inputs: Vec<&[f32]> = chunk.iter().map(|s| s.input.as_slice()).collect();
            let targets: Vec<&[BoundingBox<f64>]> = chunk.iter().map(|s| s.boxes.as_slice()).collect();
            let raw = self.forward_raw(&inputs);
            total += self.loss(&raw, &targets).0 * chunk.len() as f64;
        }
        total / samples.len() as f64
    }
}

/// Cell holding the centre `(ux, uy)` (in cells) plus its nearer horizontal
/// and vertical neighbours when they exist.
fn assigned_cells(ux: f64, uy: f64, gsz: usize) -> Vec<(usize, usize)> {
    let cell = |u: f64| (u.floor().max(0.0) as usize).min(gsz - 1);
    let (gx, gy) = (cell(ux), cell(uy));
    let near = |u: f64, g: usize| {
        if u - (g as f64) < 0.5 {
            g.checked_sub(1)
        } else {
            Some(g + 1).filter(|&n| n < gsz)
        }
    };
    let mut out = vec![(gx, gy)];
    out.extend(near(ux, gx).map(|x| (x, gy)));
    out.extend(near(uy, gy).map(|y| (gx, y)));
    out
}
