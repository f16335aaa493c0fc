//! Multi-resolution landmark network. Stage `s` runs `s` parallel streams
//! at 1/4, 1/8, … of the input; after every stage the streams exchange
//! information by summing resampled copies of each other, and a new,
//! coarser stream branches off the coarsest one. The head upsamples every
//! stream to 1/4 resolution, concatenates and maps to five heatmaps with a
//! 1×1 convolution.

use post_core::HeatmapStack;
use post_nn::{Conv2d, ConvBn, Gradients, Graph, ParamStore, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::LandmarkNetConfig;
use crate::ModelError;

/// Crop (normalised CHW, `input_size` square) and its target heatmaps
/// (`5 × heatmap_size²`).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSample {
    pub input: Vec<f32>,
    pub target: Vec<f32>,
}

#[derive(Debug, Clone)]
struct BasicBlock {
    a: ConvBn,
    b: ConvBn,
}

impl BasicBlock {
    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.a.forward(g, x);
        let h = self.b.forward(g, h);
        let s = g.add(x, h);
        g.relu(s)
    }
}

#[derive(Debug, Clone)]
enum Exchange {
    Identity,
    /// Coarser source: 1×1 channel match, then nearest upsampling.
    Up(ConvBn, usize),
    /// Finer source: chain of stride-2 3×3 convolutions.
    Down(Vec<ConvBn>),
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<Vec<BasicBlock>>,
    /// `exchange[j][i]` carries stream `i` into output stream `j`.
    exchange: Vec<Vec<Exchange>>,
    /// Branches the next, coarser stream off the coarsest output.
    transition: Option<ConvBn>,
}

#[derive(Debug, Clone)]
pub struct LandmarkNet {
    pub config: LandmarkNetConfig,
    pub store: ParamStore,
    stem: Vec<ConvBn>,
    stages: Vec<Stage>,
    head: Conv2d,
}

impl LandmarkNet {
    pub fn new(config: &LandmarkNetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths = &config.stream_widths;
        let stem = vec![
            ConvBn::new(&mut store, &mut rng, "stem.0", 3, config.stem_width, 3, 2, true),
            ConvBn::new(&mut store, &mut rng, "stem.1", config.stem_width, widths[0], 3, 2, true),
        ];
        let mut stages = Vec::new();
        for s in 0..config.stages {
            let streams = s + 1;
            let blocks = (0..streams)
                .map(|i| {
                    (0..config.blocks_per_stage)
                        .map(|k| {
                            let name = format!("stage{s}.stream{i}.block{k}");
                            let a = ConvBn::new(&mut store, &mut rng, &format!("{name}.a"), widths[i], widths[i], 3, 1, true);
                            let b = ConvBn::new(&mut store, &mut rng, &format!("{name}.b"), widths[i], widths[i], 3, 1, false)
                                .zero_init_gamma(&mut store);
                            BasicBlock { a, b }
                        })
                        .collect()
                })
                .collect();
            let exchange = (0..streams)
                .map(|j| {
                    (0..streams)
                        .map(|i| {
                            let name = format!("stage{s}.fuse{i}to{j}");
                            if i == j {
                                Exchange::Identity
                            } else if i > j {
                                let c = ConvBn::new(&mut store, &mut rng, &name, widths[i], widths[j], 1, 1, false);
                                Exchange::Up(c, 1 << (i - j))
                            } else {
                                let steps = j - i;
                                let chain = (0..steps)
                                    .map(|k| {
                                        let last = k + 1 == steps;
                                        let out_c = if last { widths[j] } else { widths[i] };
                                        ConvBn::new(&mut store, &mut rng, &format!("{name}.{k}"), widths[i], out_c, 3, 2, !last)
                                    })
                                    .collect();
                                Exchange::Down(chain)
                            }
                        })
                        .collect()
                })
                .collect();
            let transition = (s + 1 < config.stages).then(|| {
                ConvBn::new(&mut store, &mut rng, &format!("stage{s}.transition"), widths[s], widths[s + 1], 3, 2, true)
            });
            stages.push(Stage {
                blocks,
                exchange,
                transition,
            });
        }
        let total: usize = widths.iter().sum();
        let head = Conv2d::new(&mut store, &mut rng, "head", total, post_core::heatmap::NUM_LANDMARKS, 1, 1, true);
        // near-zero initial heatmaps
        for w in store.value_mut(head.weight) {
            *w *= 0.01;
        }
        Ok(Self {
            config: config.clone(),
            store,
            stem,
            stages,
            head,
        })
    }

    /// Parallel streams entering the head, finest first.
    fn streams(&self, g: &mut Graph<'_>, x: Var) -> Vec<Var> {
        let mut h = x;
        for c in &self.stem {
            h = c.forward(g, h);
        }
        let mut streams = vec![h];
        for stage in &self.stages {
            for (i, blocks) in stage.blocks.iter().enumerate() {
                for b in blocks {
                    streams[i] = b.forward(g, streams[i]);
                }
            }
            if streams.len() > 1 {
                let mut fused = Vec::with_capacity(streams.len());
                for row in &stage.exchange {
                    let parts: Vec<Var> = row
                        .iter()
                        .zip(&streams)
                        .map(|(ex, &src)| match ex {
                            Exchange::Identity => src,
                            Exchange::Up(c, f) => {
                                let y = c.forward(g, src);
                                g.upsample(y, *f)
                            }
                            Exchange::Down(chain) => chain.iter().fold(src, |y, c| c.forward(g, y)),
                        })
                        .collect();
                    let s = g.sum(&parts);
                    fused.push(g.relu(s));
                }
                streams = fused;
            }
            if let Some(t) = &stage.transition {
                let coarsest = *streams.last().expect("at least one stream");
                streams.push(t.forward(g, coarsest));
            }
        }
        streams
    }

    fn graph_forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let streams = self.streams(g, x);
        let up: Vec<Var> = streams
            .iter()
            .enumerate()
            .map(|(i, &s)| if i == 0 { s } else { g.upsample(s, 1 << i) })
            .collect();
        let cat = g.concat(&up);
        self.head.forward(g, cat)
    }

    fn input_tensor(&self, inputs: &[&[f32]]) -> Tensor {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(inputs.len() * 3 * s * s);
        for i in inputs {
            assert_eq!(i.len(), 3 * s * s, "landmark input length");
            data.extend_from_slice(i);
        }
        Tensor::from_vec(Shape::new(inputs.len(), 3, s, s), data)
    }

    /// Raw output `(N, 5, H, W)` in inference mode.
    pub fn forward_raw(&self, inputs: &[&[f32]]) -> Tensor {
        let mut g = Graph::new(&self.store, false);
        let x = g.input(self.input_tensor(inputs));
        let out = self.graph_forward(&mut g, x);
        g.value(out).clone()
    }

    pub fn forward(&self, inputs: &[&[f32]]) -> Vec<HeatmapStack<f32>> {
        let raw = self.forward_raw(inputs);
        let sh = raw.shape();
        (0..sh.n)
            .map(|n| HeatmapStack::from_vec(sh.h, sh.w, raw.sample(n).to_vec()).expect("five channels"))
            .collect()
    }

    fn target_tensor(&self, targets: &[&[f32]]) -> Tensor {
        let h = self.config.heatmap_size;
        let mut data = Vec::with_capacity(targets.len() * 5 * h * h);
        for t in targets {
            assert_eq!(t.len(), 5 * h * h, "target length");
            data.extend_from_slice(t);
        }
        Tensor::from_vec(Shape::new(targets.len(), 5, h, h), data)
    }

    /// Heatmap MSE and parameter gradients on one batch in training mode.
    pub fn train_step(&self, batch: &[&LandmarkSample]) -> (f64, Gradients) {
        let inputs: Vec<&[f32]> = batch.iter().map(|s| s.input.as_slice()).collect();
        let targets: Vec<&[f32]> = batch.iter().map(|s| s.target.as_slice()).collect();
        let mut g = Graph::new(&self.store, true);
        let x = g.input(self.input_tensor(&inputs));
        let out = self.graph_forward(&mut g, x);
        let (loss, grad) = post_nn::loss::mse(g.value(out), &self.target_tensor(&targets));
        (loss, g.backward(out, grad))
    }

    /// Mean inference-mode heatmap MSE over `samples`.
    pub fn eval_loss(&self, samples: &[LandmarkSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for chunk in samples.chunks(self.config.batch_size) {
            let inputs: Vec<&[f32]> = chunk.iter().map(|s| s.input.as_slice()).collect();
            let targets: Vec<&[f32]> = chunk.iter().map(|s| s.target.as_slice()).collect();
            let raw = self.forward_raw(&inputs);
            total += post_nn::loss::mse(&raw, &self.target_tensor(&targets)).0 * chunk.len() as f64;
        }
        total / samples.len() as f64
    }
}
