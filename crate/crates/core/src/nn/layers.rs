use rand::Rng as _;

use super::{Forward, Mode, Slot, TensorStore};
use crate::autograd::{ConvGeom, Graph, Var};
use crate::error::Result;
use crate::nn::Binding;
use crate::rng::Rng;
use crate::tensor::Tensor;

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Fully connected layer, weight `(out, in)`, uniform `1/sqrt(in)` init.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Slot,
    pub b: Option<Slot>,
}

impl Linear {
    pub fn new(store: &mut TensorStore, name: &str, inp: usize, out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let w = store.push(format!("{name}.weight"), uniform(rng, &[out, inp], bound));
        let b = store.push(format!("{name}.bias"), uniform(rng, &[out], bound));
        Self { w, b: Some(b) }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        g.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: Slot,
    pub b: Option<Slot>,
    pub geom: ConvGeom,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut TensorStore,
        name: &str,
        inp: usize,
        out: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / ((inp * kernel) as f64).sqrt();
        let w = store.push(
            format!("{name}.weight"),
            uniform(rng, &[out, inp, kernel], bound),
        );
        let b = bias.then(|| store.push(format!("{name}.bias"), uniform(rng, &[out], bound)));
        Self { w, b, geom }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let (w, b) = (f.p(self.w), self.b.map(|b| f.p(b)));
        f.g.conv1d(x, w, b, self.geom)
    }
}

/// Batch norm over the channel axis of `(B, C, T)` or `(B, C)` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: Slot,
    pub beta: Slot,
    pub running_mean: Slot,
    pub running_var: Slot,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(params: &mut TensorStore, buffers: &mut TensorStore, name: &str, ch: usize) -> Self {
        Self {
            gamma: params.push(format!("{name}.weight"), Tensor::full(&[ch], 1.0)),
            beta: params.push(format!("{name}.bias"), Tensor::zeros(&[ch])),
            running_mean: buffers.push(format!("{name}.running_mean"), Tensor::zeros(&[ch])),
            running_var: buffers.push(format!("{name}.running_var"), Tensor::full(&[ch], 1.0)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let (gamma, beta) = (f.p(self.gamma), f.p(self.beta));
        match f.mode {
            Mode::Eval => {
                let rm = f.buffers.get(self.running_mean).data().to_vec();
                let rv = f.buffers.get(self.running_var).data().to_vec();
                Ok(f.g.batch_norm_eval(x, gamma, beta, &rm, &rv, self.eps))
            }
            Mode::Train | Mode::TrainNoTrack => {
                let (y, stats) = f.g.batch_norm_train(x, gamma, beta, self.eps)?;
                if f.mode == Mode::Train {
                    let m = self.momentum;
                    let n = stats.count as f64;
                    // running variance tracks the unbiased estimate
                    let unbias = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
                    let rm = f.buffers.get(self.running_mean);
                    let rv = f.buffers.get(self.running_var);
                    let new_m: Vec<f64> = rm
                        .data()
                        .iter()
                        .zip(&stats.mean)
                        .map(|(r, b)| (1.0 - m) * r + m * b)
                        .collect();
                    let new_v: Vec<f64> = rv
                        .data()
                        .iter()
                        .zip(&stats.var)
                        .map(|(r, b)| (1.0 - m) * r + m * b * unbias)
                        .collect();
                    let ch = new_m.len();
                    f.updates
                        .push((self.running_mean, Tensor::from_parts(vec![ch], new_m)));
                    f.updates
                        .push((self.running_var, Tensor::from_parts(vec![ch], new_v)));
                }
                Ok(y)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlpActivation {
    Relu,
    /// Cosine after the first layer (random-Fourier-style features), ReLU after later ones.
    Spectral,
}

/// Plain multi-layer perceptron with its own parameter store.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: MlpActivation,
    pub params: TensorStore,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; no activation after the last layer.
    pub fn new(dims: &[usize], activation: MlpActivation, rng: &mut Rng) -> Self {
        let mut params = TensorStore::new();
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(&mut params, &format!("fc{i}"), d[0], d[1], rng))
            .collect();
        Self {
            layers,
            activation,
            params,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, p, h)?;
            if i < last {
                h = match (self.activation, i) {
                    (MlpActivation::Spectral, 0) => g.cos(h),
                    _ => g.relu(h),
                };
            }
        }
        Ok(h)
    }

    /// Forward on constants only; returns the output tensor.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }
}
