use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamKind, ParamStore};

/// Square-kernel 2D convolution. Holds parameter handles only; values live
/// in the [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    /// "Same" padding for odd kernels.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        with_bias: bool,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = store.add_he(format!("{name}.weight"), &[out_c, in_c, kernel, kernel], fan_in, 1.0, rng);
        let bias = with_bias.then(|| store.add(format!("{name}.bias"), &[out_c], ParamKind::Bias, vec![0.0; out_c]));
        Self {
            name: name.to_string(),
            in_c,
            out_c,
            kernel,
            stride,
            pad: kernel / 2,
            weight,
            bias,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        g.conv2d(x, self)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    pub eps: f32,
    pub momentum: f32,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self::with_gamma(store, name, channels, 1.0)
    }

    /// A zero `gamma` makes a residual branch start as the identity.
    pub fn with_gamma(store: &mut ParamStore, name: &str, channels: usize, gamma: f32) -> Self {
        Self {
            name: name.to_string(),
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: store.add(format!("{name}.gamma"), &[channels], ParamKind::Bias, vec![gamma; channels]),
            beta: store.add(format!("{name}.beta"), &[channels], ParamKind::Bias, vec![0.0; channels]),
            running_mean: store.add(
                format!("{name}.running_mean"),
                &[channels],
                ParamKind::Buffer,
                vec![0.0; channels],
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                &[channels],
                ParamKind::Buffer,
                vec![1.0; channels],
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        g.batch_norm(x, self)
    }
}

/// Convolution (no bias) → batch norm → optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        relu: bool,
    ) -> Self {
        let conv = Conv2d::new(store, rng, &format!("{name}.conv"), in_c, out_c, kernel, stride, false);
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), out_c);
        Self { conv, bn, relu }
    }

    pub fn zero_init_gamma(self, store: &mut ParamStore) -> Self {
        store.value_mut(self.bn.gamma).fill(0.0);
        self
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let y = self.conv.forward(g, x);
        let y = self.bn.forward(g, y);
        if self.relu {
            g.relu(y)
        } else {
            y
        }
    }
}
