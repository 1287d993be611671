//! Central finite differences, used to verify analytic gradients.

use crate::tensor::Tensor;

/// Numerical gradient of `f` with respect to every element of every input.
pub fn central_difference<F>(mut f: F, inputs: &[Tensor], h: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for a in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[a].shape());
        for i in 0..inputs[a].len() {
            let orig = work[a].data()[i];
            work[a].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[a].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[a].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Outcome of comparing an analytic gradient with a numerical one.
#[derive(Clone, Debug)]
pub struct GradComparison {
    pub checked: usize,
    pub failures: usize,
    pub worst_abs: f64,
    pub worst_rel: f64,
}

impl GradComparison {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Element-wise check `|a - n| <= rtol * max(|a|, |n|) + atol`.
pub fn compare(analytic: &[Tensor], numeric: &[Tensor], rtol: f64, atol: f64) -> GradComparison {
    let mut r = GradComparison {
        checked: 0,
        failures: 0,
        worst_abs: 0.0,
        worst_rel: 0.0,
    };
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shape mismatch");
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let diff = (x - y).abs();
            let scale = x.abs().max(y.abs());
            r.checked += 1;
            r.worst_abs = r.worst_abs.max(diff);
            if scale > 0.0 {
                r.worst_rel = r.worst_rel.max(diff / scale);
            }
            if diff > rtol * scale + atol || !diff.is_finite() {
                r.failures += 1;
            }
        }
    }
    r
}

use crate::autograd::{Graph, Var};
use crate::backbones::Network;
use crate::error::Result;
use crate::nn::{Mode, TensorStore};

/// `sum(c ⊙ v)` with a fixed, non-trivial `c`, as a scalar on `g`.
pub fn probe(g: &mut Graph, v: Var) -> Result<Var> {
    let t = g.value(v);
    let c = Tensor::new(
        t.shape().to_vec(),
        (0..t.len()).map(|i| ((i as f64) * 0.73 + 0.1).sin()).collect(),
    )?;
    let value = t.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
    g.scalar_op(&[v], value, vec![c])
}

fn network_probe(net: &Network, pe: &TensorStore, ph: &TensorStore, x: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let be = pe.bind(&mut g, true);
    let bh = ph.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let mut upd = Vec::new();
    let (_, logits) = net.forward_train(&mut g, &be, &bh, xv, Mode::TrainNoTrack, &mut upd)?;
    let loss = probe(&mut g, logits)?;
    let grads = g.backward(loss);
    let out: Vec<Tensor> = be
        .collect(&grads)
        .into_iter()
        .chain(bh.collect(&grads))
        .zip(pe.tensors().iter().chain(ph.tensors()))
        .map(|(gr, t)| gr.unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((g.value(loss).item(), out))
}

/// Compares the analytic gradient of a fixed projection of the logits
/// (training-mode batch norm) with central differences, for every
/// parameter of `net`.
pub fn check_network(net: &Network, x: &Tensor, h: f64, rtol: f64, atol: f64) -> Result<GradComparison> {
    let (pe, ph) = (&net.extractor.params, &net.head.params);
    let (_, analytic) = network_probe(net, pe, ph, x)?;
    let ne = pe.len();
    let inputs: Vec<Tensor> = pe.tensors().iter().chain(ph.tensors()).cloned().collect();
    let mut err = None;
    let numeric = central_difference(
        |ts| {
            let mut a = pe.clone();
            let mut b = ph.clone();
            for (i, t) in ts.iter().enumerate() {
                if i < ne {
                    *a.get_mut(crate::nn::Slot(i)) = t.clone();
                } else {
                    *b.get_mut(crate::nn::Slot(i - ne)) = t.clone();
                }
            }
            match network_probe(net, &a, &b, x) {
                Ok((v, _)) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &inputs,
        h,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(compare(&analytic, &numeric, rtol, atol))
}
