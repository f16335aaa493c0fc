use crate::tensor::Tensor;

/// Mean squared error over every element, with its gradient w.r.t. `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let n = pred.data().len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0f64;
    let scale = (2.0 / n) as f32;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += f64::from(d) * f64::from(d);
        *g = scale * d;
    }
    (sum / n, grad)
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy on a logit. Returns the loss and
/// its derivative w.r.t. the logit.
#[inline]
pub fn bce_with_logits(logit: f32, target: f32) -> (f32, f32) {
    let loss = logit.max(0.0) - logit * target + (1.0 + (-logit.abs()).exp()).ln();
    (loss, sigmoid(logit) - target)
}
