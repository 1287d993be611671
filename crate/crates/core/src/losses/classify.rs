use super::{check_matrix, LossValue};
use crate::autograd::softmax_rows;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped into `[CLIP, 1 - CLIP]` before taking logs.
const CLIP: f64 = 1e-7;

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let k = x.dim(1).max(1);
    let mut y = x.clone();
    for r in y.data_mut().chunks_mut(k) {
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        r.iter_mut().for_each(|v| *v -= lse);
    }
    y
}

/// Mean cross-entropy of `logits (B, K)` against hard labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossValue> {
    let (b, k) = check_matrix(logits, "logits")?;
    if labels.len() != b || b == 0 {
        return Err(invalid("cross_entropy: one label per row, at least one row"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(invalid(format!("label {y} outside [0, {k})")));
    }
    let lp = log_softmax_rows(logits);
    let mut grad = softmax_rows(logits);
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        value -= lp.row(i)[y];
        grad.data_mut()[i * k + y] -= 1.0;
    }
    let inv = 1.0 / b as f64;
    Ok(LossValue::new(value * inv, vec![grad.scale(inv)]))
}

/// `-mean_b sum_k p log p` over probability rows, `0 log 0 = 0`.
/// Gradient w.r.t. `probs`.
pub fn conditional_entropy(probs: &Tensor) -> Result<LossValue> {
    let (b, _) = check_matrix(probs, "probabilities")?;
    if probs.data().iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(invalid("conditional_entropy: negative or non-finite probability"));
    }
    if b == 0 {
        return Ok(LossValue::new(0.0, vec![probs.clone()]));
    }
    let inv = 1.0 / b as f64;
    let mut value = 0.0;
    let grad = probs.map(|p| {
        if p > 0.0 {
            value -= p * p.ln();
            -(p.ln() + 1.0) * inv
        } else {
            // the derivative diverges at 0; use the clamped value
            -(CLIP.ln() + 1.0) * inv
        }
    });
    Ok(LossValue::new(value * inv, vec![grad]))
}

/// Entropy of `softmax(logits)`, averaged over rows. Gradient w.r.t. logits.
pub fn entropy_logits(logits: &Tensor) -> Result<LossValue> {
    let (b, k) = check_matrix(logits, "logits")?;
    if b == 0 {
        return Ok(LossValue::new(0.0, vec![logits.clone()]));
    }
    let p = softmax_rows(logits);
    let lp = log_softmax_rows(logits);
    let inv = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; b * k];
    for i in 0..b {
        let (pr, lr) = (p.row(i), lp.row(i));
        let h: f64 = -pr.iter().zip(lr).map(|(a, l)| a * l).sum::<f64>();
        value += h;
        for j in 0..k {
            grad[i * k + j] = -pr[j] * (lr[j] + h) * inv;
        }
    }
    Ok(LossValue::new(value * inv, vec![Tensor::new(vec![b, k], grad)?]))
}

/// `KL(p || softmax(logits))` averaged over rows, `p` held fixed.
/// Gradient w.r.t. logits.
pub fn kl_logits(p: &Tensor, logits: &Tensor) -> Result<LossValue> {
    let (b, k) = check_matrix(logits, "logits")?;
    if p.shape() != logits.shape() {
        return Err(invalid("kl_logits: shape mismatch"));
    }
    if b == 0 {
        return Ok(LossValue::new(0.0, vec![logits.clone()]));
    }
    let lq = log_softmax_rows(logits);
    let q = softmax_rows(logits);
    let inv = 1.0 / b as f64;
    let mut value = 0.0;
    for (pi, lqi) in p.data().iter().zip(lq.data()) {
        if *pi > 0.0 {
            value += pi * (pi.ln() - lqi);
        }
    }
    let grad: Vec<f64> = q.data().iter().zip(p.data()).map(|(a, b)| (a - b) * inv).collect();
    Ok(LossValue::new(value * inv, vec![Tensor::new(vec![b, k], grad)?]))
}

/// Mean squared difference; gradient w.r.t. `a` only (`b` is the target).
pub fn mse(a: &Tensor, b: &Tensor) -> Result<LossValue> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(invalid("mse: shapes differ or empty"));
    }
    let inv = 1.0 / a.len() as f64;
    let mut value = 0.0;
    let grad: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            value += (x - y) * (x - y);
            2.0 * (x - y) * inv
        })
        .collect();
    Ok(LossValue::new(value * inv, vec![Tensor::new(a.shape().to_vec(), grad)?]))
}

fn log_sigmoid(x: f64) -> f64 {
    -((-x.abs()).exp().ln_1p() + (-x).max(0.0))
}

/// Binary cross-entropy on logits, averaged over every row of every group.
/// Each group is `(logits, target in {0, 1})`; one gradient per group.
pub fn bce_logits(groups: &[(&Tensor, f64)]) -> Result<LossValue> {
    let n: usize = groups.iter().map(|(t, _)| t.len()).sum();
    if n == 0 {
        return Err(invalid("bce on empty input"));
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(groups.len());
    for (t, y) in groups {
        grads.push(t.map(|x| {
            value -= y * log_sigmoid(x) + (1.0 - y) * log_sigmoid(-x);
            (1.0 / (1.0 + (-x).exp()) - y) * inv
        }));
    }
    Ok(LossValue::new(value * inv, grads))
}

/// Binary cross-entropy of discriminator outputs, source labeled 1 and
/// target 0, averaged over both. Inputs are clamped to
/// `[1e-7, 1 - 1e-7]`; gradients w.r.t. both inputs.
pub fn domain_discriminator_loss(d_src: &Tensor, d_tgt: &Tensor) -> Result<LossValue> {
    let all = d_src.data().iter().chain(d_tgt.data());
    if all.clone().any(|&v| !(0.0..=1.0).contains(&v) || v.is_nan()) {
        return Err(invalid("discriminator outputs must lie in [0, 1]"));
    }
    let n = d_src.len() + d_tgt.len();
    if n == 0 {
        return Err(invalid("bce on empty input"));
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    let gs = d_src.map(|v| {
        let c = v.clamp(CLIP, 1.0 - CLIP);
        value -= c.ln();
        if c == v { -inv / v } else { 0.0 }
    });
    let gt = d_tgt.map(|v| {
        let c = v.clamp(CLIP, 1.0 - CLIP);
        value -= (1.0 - c).ln();
        if c == v { inv / (1.0 - v) } else { 0.0 }
    });
    Ok(LossValue::new(value * inv, vec![gs, gt]))
}
