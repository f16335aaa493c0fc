//! Reverse-mode tape. Every forward op appends a node holding its output and
//! whatever it needs to run backwards; `backward` walks the tape in reverse.

use crate::kernels::{col2im_add, gemm, im2col, ConvGeom};
use crate::layers::{BatchNorm2d, Conv2d};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Conv {
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        geom: ConvGeom,
        out_c: usize,
    },
    BatchNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Concat {
        xs: Vec<Var>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Running-statistics refresh produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct RunningUpdate {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub momentum: f32,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
}

/// Parameter gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    running: Vec<RunningUpdate>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.grads.get(id.index()).and_then(|g| g.as_deref())
    }

    pub fn running_updates(&self) -> &[RunningUpdate] {
        &self.running
    }

    /// Sum of squares over every parameter gradient.
    pub fn norm_sq(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&v| f64::from(v) * f64::from(v))
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    training: bool,
    running: Vec<RunningUpdate>,
}

impl<'s> Graph<'s> {
    /// In training mode batch norm uses batch statistics and records
    /// running-average updates.
    pub fn new(store: &'s ParamStore, training: bool) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            training,
            running: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn conv2d(&mut self, x: Var, layer: &Conv2d) -> Var {
        let xs = self.shape(x);
        assert_eq!(
            xs.c, layer.in_c,
            "conv {} expects {} input channels, got {}",
            layer.name, layer.in_c, xs.c
        );
        let geom = ConvGeom {
            in_c: xs.c,
            in_h: xs.h,
            in_w: xs.w,
            kernel: layer.kernel,
            stride: layer.stride,
            pad: layer.pad,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let out_shape = Shape::new(xs.n, layer.out_c, oh, ow);
        let mut out = Tensor::zeros(out_shape);
        let w = self.store.value(layer.weight);
        let bias = layer.bias.map(|b| self.store.value(b));
        let mut cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; geom.col_rows() * geom.col_cols()]
        };
        let xv = &self.nodes[x.0].value;
        for n in 0..xs.n {
            let sample = xv.sample(n);
            let cmat: &[f32] = if geom.is_pointwise() {
                sample
            } else {
                im2col(sample, &geom, &mut cols);
                &cols
            };
            let o = out.sample_mut(n);
            gemm(layer.out_c, geom.col_rows(), oh * ow, w, false, cmat, false, o, false);
            if let Some(b) = bias {
                for (c, plane) in o.chunks_mut(oh * ow).enumerate() {
                    let bc = b[c];
                    plane.iter_mut().for_each(|v| *v += bc);
                }
            }
        }
        self.push(
            out,
            Op::Conv {
                x,
                weight: layer.weight,
                bias: layer.bias,
                geom,
                out_c: layer.out_c,
            },
            true,
        )
    }

    pub fn batch_norm(&mut self, x: Var, layer: &BatchNorm2d) -> Var {
        let xs = self.shape(x);
        assert_eq!(xs.c, layer.channels, "batch norm {} channel mismatch", layer.name);
        let plane = xs.plane();
        let count = (xs.n * plane) as f64;
        let xv = &self.nodes[x.0].value;
        let (mean, var) = if self.training {
            let mut mean = vec![0.0f32; xs.c];
            let mut var = vec![0.0f32; xs.c];
            for c in 0..xs.c {
                let mut s = 0.0f64;
                for n in 0..xs.n {
                    let off = (n * xs.c + c) * plane;
                    s += xv.data()[off..off + plane].iter().map(|&v| f64::from(v)).sum::<f64>();
                }
                let m = s / count;
                let mut sq = 0.0f64;
                for n in 0..xs.n {
                    let off = (n * xs.c + c) * plane;
                    sq += xv.data()[off..off + plane]
                        .iter()
                        .map(|&v| {
                            let d = f64::from(v) - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[c] = m as f32;
                var[c] = (sq / count) as f32;
            }
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 } as f32;
            self.running.push(RunningUpdate {
                mean_id: layer.running_mean,
                var_id: layer.running_var,
                momentum: layer.momentum,
                batch_mean: mean.clone(),
                batch_var: var.iter().map(|v| v * unbiased).collect(),
            });
            (mean, var)
        } else {
            (
                self.store.value(layer.running_mean).to_vec(),
                self.store.value(layer.running_var).to_vec(),
            )
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + layer.eps).sqrt()).collect();
        let gamma = self.store.value(layer.gamma);
        let beta = self.store.value(layer.beta);
        let mut out = xv.clone();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let off = (n * xs.c + c) * plane;
                let (m, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
                for v in &mut out.data_mut()[off..off + plane] {
                    *v = (*v - m) * is * g + b;
                }
            }
        }
        let batch_stats = self.training;
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma: layer.gamma,
                beta: layer.beta,
                mean,
                inv_std,
                batch_stats,
            },
            true,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let ng = self.nodes[x.0].needs_grad;
        self.push(out, Op::Relu { x }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        out.add_assign(&self.nodes[b.0].value);
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(out, Op::Add { a, b }, ng)
    }

    /// Left-folds `add` over a non-empty list.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let (first, rest) = xs.split_first().expect("sum of zero vars");
        rest.iter().fold(*first, |acc, &v| self.add(acc, v))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        assert!(factor >= 1);
        if factor == 1 {
            return x;
        }
        let xs = self.shape(x);
        let os = Shape::new(xs.n, xs.c, xs.h * factor, xs.w * factor);
        let xv = &self.nodes[x.0].value;
        let mut out = Tensor::zeros(os);
        for nc in 0..xs.n * xs.c {
            let src = &xv.data()[nc * xs.plane()..(nc + 1) * xs.plane()];
            let dst = &mut out.data_mut()[nc * os.plane()..(nc + 1) * os.plane()];
            for oy in 0..os.h {
                let srow = &src[(oy / factor) * xs.w..(oy / factor + 1) * xs.w];
                let drow = &mut dst[oy * os.w..(oy + 1) * os.w];
                for (ox, d) in drow.iter_mut().enumerate() {
                    *d = srow[ox / factor];
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(out, Op::Upsample { x, factor }, ng)
    }

    /// Channel-axis concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let first = self.shape(xs[0]);
        let total_c: usize = xs.iter().map(|&v| self.shape(v).c).sum();
        let os = Shape::new(first.n, total_c, first.h, first.w);
        let mut out = Tensor::zeros(os);
        for n in 0..first.n {
            let mut c0 = 0;
            for &v in xs {
                let t = &self.nodes[v.0].value;
                let s = t.shape();
                assert_eq!((s.n, s.h, s.w), (first.n, first.h, first.w), "concat shape mismatch");
                let len = s.sample_len();
                let dst_off = (n * total_c + c0) * os.plane();
                out.data_mut()[dst_off..dst_off + len].copy_from_slice(t.sample(n));
                c0 += s.c;
            }
        }
        let ng = xs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(out, Op::Concat { xs: xs.to_vec() }, ng)
    }

    /// Backpropagates `grad` (d loss / d output) from `out` through the tape.
    pub fn backward(self, out: Var, grad: Tensor) -> Gradients {
        let Graph {
            store, nodes, running, ..
        } = self;
        assert_eq!(nodes[out.0].value.shape(), grad.shape(), "seed gradient shape mismatch");
        let mut pgrads: Vec<Option<Vec<f32>>> = vec![None; store.len()];
        let mut vgrads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        vgrads[out.0] = Some(grad);

        fn accum(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(t) => t.add_assign(&g),
                None => *slot = Some(g),
            }
        }
        fn pgrad(slots: &mut [Option<Vec<f32>>], id: ParamId, len: usize) -> &mut Vec<f32> {
            slots[id.index()].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..nodes.len()).rev() {
            let Some(gy) = vgrads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Conv {
                    x,
                    weight,
                    bias,
                    geom,
                    out_c,
                } => {
                    let xv = &nodes[x.0].value;
                    let xs = xv.shape();
                    let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                    let w = store.value(*weight);
                    let x_needs = nodes[x.0].needs_grad;
                    let mut dx = if x_needs { Some(Tensor::zeros(xs)) } else { None };
                    let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; rows * cols_n] };
                    let mut dcols = if x_needs && !geom.is_pointwise() {
                        vec![0.0; rows * cols_n]
                    } else {
                        Vec::new()
                    };
                    {
                        let dw = pgrad(&mut pgrads, *weight, w.len());
                        for n in 0..xs.n {
                            let gys = gy.sample(n);
                            let cmat: &[f32] = if geom.is_pointwise() {
                                xv.sample(n)
                            } else {
                                im2col(xv.sample(n), geom, &mut cols);
                                &cols
                            };
                            // dW[out_c, rows] += dY[out_c, cols_n] · C^T
                            gemm(*out_c, cols_n, rows, gys, false, cmat, true, dw, true);
                            if let Some(dx) = dx.as_mut() {
                                if geom.is_pointwise() {
                                    gemm(rows, *out_c, cols_n, w, true, gys, false, dx.sample_mut(n), true);
                                } else {
                                    gemm(rows, *out_c, cols_n, w, true, gys, false, &mut dcols, false);
                                    col2im_add(&dcols, geom, dx.sample_mut(n));
                                }
                            }
                        }
                    }
                    if let Some(b) = bias {
                        let db = pgrad(&mut pgrads, *b, *out_c);
                        for n in 0..xs.n {
                            for (c, plane) in gy.sample(n).chunks(cols_n).enumerate() {
                                db[c] += plane.iter().sum::<f32>();
                            }
                        }
                    }
                    if let Some(dx) = dx {
                        accum(&mut vgrads[x.0], dx);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    batch_stats,
                } => {
                    let xv = &nodes[x.0].value;
                    let s = xv.shape();
                    let plane = s.plane();
                    let count = (s.n * plane) as f32;
                    let g = store.value(*gamma);
                    let mut sum_dy = vec![0.0f32; s.c];
                    let mut sum_dy_xhat = vec![0.0f32; s.c];
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let off = (n * s.c + c) * plane;
                            let (mut a, mut b) = (0.0f64, 0.0f64);
                            for (dy, xval) in gy.data()[off..off + plane].iter().zip(&xv.data()[off..off + plane]) {
                                let xhat = (xval - mean[c]) * inv_std[c];
                                a += f64::from(*dy);
                                b += f64::from(dy * xhat);
                            }
                            sum_dy[c] += a as f32;
                            sum_dy_xhat[c] += b as f32;
                        }
                    }
                    {
                        let dg = pgrad(&mut pgrads, *gamma, s.c);
                        for c in 0..s.c {
                            dg[c] += sum_dy_xhat[c];
                        }
                    }
                    {
                        let db = pgrad(&mut pgrads, *beta, s.c);
                        for c in 0..s.c {
                            db[c] += sum_dy[c];
                        }
                    }
                    if nodes[x.0].needs_grad {
                        let mut dx = Tensor::zeros(s);
                        for n in 0..s.n {
                            for c in 0..s.c {
                                let off = (n * s.c + c) * plane;
                                let k = g[c] * inv_std[c];
                                let md = sum_dy[c] / count;
                                let mdx = sum_dy_xhat[c] / count;
                                for j in off..off + plane {
                                    let dy = gy.data()[j];
                                    dx.data_mut()[j] = if *batch_stats {
                                        let xhat = (xv.data()[j] - mean[c]) * inv_std[c];
                                        k * (dy - md - xhat * mdx)
                                    } else {
                                        k * dy
                                    };
                                }
                            }
                        }
                        accum(&mut vgrads[x.0], dx);
                    }
                }
                Op::Relu { x } => {
                    if nodes[x.0].needs_grad {
                        let mut dx = gy;
                        for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                            if *y <= 0.0 {
                                *d = 0.0;
                            }
                        }
                        accum(&mut vgrads[x.0], dx);
                    }
                }
                Op::Add { a, b } => {
                    if nodes[b.0].needs_grad {
                        accum(&mut vgrads[b.0], gy.clone());
                    }
                    if nodes[a.0].needs_grad {
                        accum(&mut vgrads[a.0], gy);
                    }
                }
                Op::Upsample { x, factor } => {
                    if nodes[x.0].needs_grad {
                        let xs = nodes[x.0].value.shape();
                        let os = gy.shape();
                        let mut dx = Tensor::zeros(xs);
                        for nc in 0..xs.n * xs.c {
                            let src = &gy.data()[nc * os.plane()..(nc + 1) * os.plane()];
                            let dst = &mut dx.data_mut()[nc * xs.plane()..(nc + 1) * xs.plane()];
                            for oy in 0..os.h {
                                let drow = &mut dst[(oy / factor) * xs.w..(oy / factor + 1) * xs.w];
                                for (ox, v) in src[oy * os.w..(oy + 1) * os.w].iter().enumerate() {
                                    drow[ox / factor] += v;
                                }
                            }
                        }
                        accum(&mut vgrads[x.0], dx);
                    }
                }
                Op::Concat { xs } => {
                    let os = gy.shape();
                    let mut c0 = 0;
                    for v in xs {
                        let s = nodes[v.0].value.shape();
                        if nodes[v.0].needs_grad {
                            let mut dx = Tensor::zeros(s);
                            for n in 0..s.n {
                                let off = (n * os.c + c0) * os.plane();
                                dx.sample_mut(n).copy_from_slice(&gy.data()[off..off + s.sample_len()]);
                            }
                            accum(&mut vgrads[v.0], dx);
                        }
                        c0 += s.c;
                    }
                }
            }
        }
        Gradients {
            grads: pgrads,
            running,
        }
    }
}
