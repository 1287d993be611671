use serde::{Deserialize, Serialize};

use super::kl_logits;
use crate::autograd::{softmax_rows, Graph, Var};
use crate::error::{invalid, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VatConfig {
    /// Radius of the adversarial perturbation (per-sample L2 norm).
    pub epsilon: f64,
    /// Finite-difference step of the power iteration.
    pub xi: f64,
    pub power_iters: usize,
}

impl Default for VatConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            xi: 1e-6,
            power_iters: 1,
        }
    }
}

fn normalize_rows(t: &mut Tensor) {
    let w = t.row_len().max(1);
    for r in t.data_mut().chunks_mut(w) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n + 1e-12);
    }
}

/// `KL(p(x) || p(x + r_adv))` with `r_adv` found by power iteration.
///
/// `logits(g, x, attached)` must run the model on `g`; `attached` is true
/// only for the final pass whose gradient reaches the parameters. `clean`
/// holds the model's logits at `x`, treated as a constant target.
pub fn vat_loss<F>(
    g: &mut Graph,
    mut logits: F,
    x: &Tensor,
    clean: &Tensor,
    cfg: &VatConfig,
    rng: &mut Rng,
) -> Result<Var>
where
    F: FnMut(&mut Graph, Var, bool) -> Result<Var>,
{
    if cfg.power_iters == 0 || cfg.xi <= 0.0 || cfg.epsilon < 0.0 {
        return Err(invalid("vat needs power_iters >= 1, xi > 0, epsilon >= 0"));
    }
    if cfg.epsilon == 0.0 || x.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let p = softmax_rows(clean);
    let mut d = x.map(|_| rng::normal(rng));
    normalize_rows(&mut d);
    for _ in 0..cfg.power_iters {
        let mut h = Graph::new();
        let r = h.variable(d.scale(cfg.xi));
        let xc = h.constant(x.clone());
        let xa = h.add(xc, r)?;
        let l = logits(&mut h, xa, false)?;
        let kl = kl_logits(&p, h.value(l))?.record(&mut h, &[l])?;
        let grads = h.backward(kl);
        if let Some(gr) = grads.get(r) {
            d = gr.clone();
            normalize_rows(&mut d);
        }
    }
    let mut xa = x.clone();
    xa.add_assign(&d.scale(cfg.epsilon));
    let xv = g.constant(xa);
    let l = logits(g, xv, true)?;
    let kl = kl_logits(&p, g.value(l))?;
    kl.record(g, &[l])
}
