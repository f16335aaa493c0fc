use crate::graph::Gradients;
use crate::params::{ParamKind, ParamStore};

pub trait Optimizer {
    /// Applies one update from `grads`, then folds any batch-norm running
    /// statistics into the store.
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients);
    fn learning_rate(&self) -> f32;
    fn set_learning_rate(&mut self, lr: f32);
}

pub fn apply_running_updates(store: &mut ParamStore, grads: &Gradients) {
    for u in grads.running_updates() {
        let m = u.momentum;
        for (r, b) in store.value_mut(u.mean_id).iter_mut().zip(&u.batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in store.value_mut(u.var_id).iter_mut().zip(&u.batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay
/// on `Weight` parameters.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        if self.velocity.len() != store.len() {
            self.velocity = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        }
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if p.kind == ParamKind::Buffer {
                continue;
            }
            let Some(g) = grads.get(crate::ParamId(i)) else { continue };
            let decay = if p.kind == ParamKind::Weight { self.weight_decay } else { 0.0 };
            let vel = &mut self.velocity[i];
            for ((w, v), &gi) in p.value.iter_mut().zip(vel.iter_mut()).zip(g) {
                let d = gi + decay * *w;
                *v = self.momentum * *v + d;
                *w -= self.lr * *v;
            }
        }
        apply_running_updates(store, grads);
    }

    fn learning_rate(&self) -> f32 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f32) {
        self.lr = lr;
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if p.kind == ParamKind::Buffer {
                continue;
            }
            let Some(g) = grads.get(crate::ParamId(i)) else { continue };
            let decay = if p.kind == ParamKind::Weight { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, mi), vi), &gi) in p.value.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                let gi = gi + decay * *w;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        apply_running_updates(store, grads);
    }

    fn learning_rate(&self) -> f32 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f32) {
        self.lr = lr;
    }
}
