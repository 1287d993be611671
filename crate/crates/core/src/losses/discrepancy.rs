use serde::{Deserialize, Serialize};

use super::{check_matrix, LossValue};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-|a - b|^2 / gamma)`
    Rbf(f64),
    /// `a . b`
    Linear,
    /// `(a . b)^p`
    Poly(u32),
}

/// Sum of kernels used by MMD and LMMD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    pub kernels: Vec<Kernel>,
}

impl KernelBank {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(invalid("empty kernel bank"));
        }
        for k in &kernels {
            if let Kernel::Rbf(g) = k {
                if !(g.is_finite() && *g > 0.0) {
                    return Err(invalid(format!("RBF bandwidth {g} must be finite and > 0")));
                }
            }
        }
        Ok(Self { kernels })
    }

    pub fn linear() -> Self {
        Self {
            kernels: vec![Kernel::Linear],
        }
    }

    pub fn rbf(bandwidths: &[f64]) -> Result<Self> {
        Self::new(bandwidths.iter().map(|&g| Kernel::Rbf(g)).collect())
    }

    /// Five RBF kernels at `{m/4, m/2, m, 2m, 4m}`, `m` the median pairwise
    /// squared distance over the rows of both batches (1.0 if that is 0).
    pub fn median_heuristic(zs: &Tensor, zt: &Tensor) -> Self {
        let rows: Vec<&[f64]> = (0..zs.dim(0))
            .map(|i| zs.row(i))
            .chain((0..zt.dim(0)).map(|i| zt.row(i)))
            .collect();
        let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                d.push(sqdist(rows[i], rows[j]));
            }
        }
        let m = if d.is_empty() {
            1.0
        } else {
            d.sort_by(f64::total_cmp);
            let n = d.len();
            let med = if n % 2 == 1 {
                d[n / 2]
            } else {
                0.5 * (d[n / 2 - 1] + d[n / 2])
            };
            if med.is_finite() && med > 0.0 {
                med
            } else {
                1.0
            }
        };
        Self {
            kernels: [0.25, 0.5, 1.0, 2.0, 4.0]
                .iter()
                .map(|f| Kernel::Rbf(f * m))
                .collect(),
        }
    }
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_ij w_i w_j k(z_i, z_j)` over a signed weight vector, with gradient
/// `2 w_i sum_j w_j d1k(z_i, z_j)` for each row.
fn signed_mmd(rows: &[&[f64]], w: &[f64], bank: &KernelBank) -> (f64, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mut value = 0.0;
    let mut grads = vec![vec![0.0; d]; n];
    let need_dist = bank.kernels.iter().any(|k| matches!(k, Kernel::Rbf(_)));
    let need_dot = bank.kernels.iter().any(|k| !matches!(k, Kernel::Rbf(_)));
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let gi = &mut grads[i];
        for j in 0..n {
            if w[j] == 0.0 {
                continue;
            }
            let (a, b) = (rows[i], rows[j]);
            let ww = w[i] * w[j];
            let sd = if need_dist { sqdist(a, b) } else { 0.0 };
            let s = if need_dot { dot(a, b) } else { 0.0 };
            for k in &bank.kernels {
                match *k {
                    Kernel::Rbf(gamma) => {
                        let kv = (-sd / gamma).exp();
                        value += ww * kv;
                        let c = 2.0 * ww * kv * (-2.0 / gamma);
                        for ((g, x), y) in gi.iter_mut().zip(a).zip(b) {
                            *g += c * (x - y);
                        }
                    }
                    Kernel::Linear => {
                        value += ww * s;
                        for (g, y) in gi.iter_mut().zip(b) {
                            *g += 2.0 * ww * y;
                        }
                    }
                    Kernel::Poly(p) => {
                        value += ww * s.powi(p as i32);
                        let c = 2.0 * ww * p as f64 * s.powi(p as i32 - 1);
                        for (g, y) in gi.iter_mut().zip(b) {
                            *g += c * y;
                        }
                    }
                }
            }
        }
    }
    (value, grads)
}

fn pair_dims(zs: &Tensor, zt: &Tensor) -> Result<(usize, usize, usize)> {
    let (ns, d) = check_matrix(zs, "source features")?;
    let (nt, dt) = check_matrix(zt, "target features")?;
    if d != dt {
        return Err(invalid(format!("feature widths differ: {d} vs {dt}")));
    }
    Ok((ns, nt, d))
}

/// MMD between weighted empirical measures `sum a_i delta(s_i)` and
/// `sum b_j delta(t_j)`. Gradients w.r.t. `zs` and `zt`.
pub fn weighted_mmd(zs: &Tensor, a: &[f64], zt: &Tensor, b: &[f64], bank: &KernelBank) -> Result<LossValue> {
    let (ns, nt, d) = pair_dims(zs, zt)?;
    if a.len() != ns || b.len() != nt {
        return Err(invalid("one weight per row required"));
    }
    let rows: Vec<&[f64]> = (0..ns)
        .map(|i| zs.row(i))
        .chain((0..nt).map(|i| zt.row(i)))
        .collect();
    let w: Vec<f64> = a.iter().copied().chain(b.iter().map(|v| -v)).collect();
    let (value, g) = signed_mmd(&rows, &w, bank);
    let gs = g[..ns].concat();
    let gt = g[ns..].concat();
    Ok(LossValue::new(
        value,
        vec![Tensor::new(vec![ns, d], gs)?, Tensor::new(vec![nt, d], gt)?],
    ))
}

/// Biased (V-statistic) MMD^2 summed over the bank.
pub fn mmd(zs: &Tensor, zt: &Tensor, bank: &KernelBank) -> Result<LossValue> {
    let (ns, nt, _) = pair_dims(zs, zt)?;
    if ns == 0 || nt == 0 {
        return Err(invalid("mmd needs at least one row per side"));
    }
    let a = vec![1.0 / ns as f64; ns];
    let b = vec![1.0 / nt as f64; nt];
    weighted_mmd(zs, &a, zt, &b, bank)
}

fn centered(z: &Tensor) -> Tensor {
    let (n, d) = (z.dim(0), z.dim(1));
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = z.clone();
    for r in out.data_mut().chunks_mut(d.max(1)) {
        for (v, m) in r.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    out
}

/// Unbiased covariance `Xc^T Xc / (N - 1)` as a row-major `D x D` vector.
fn covariance(xc: &Tensor) -> Vec<f64> {
    let (n, d) = (xc.dim(0), xc.dim(1));
    let mut c = vec![0.0; d * d];
    for i in 0..n {
        let r = xc.row(i);
        for a in 0..d {
            for b in 0..d {
                c[a * d + b] += r[a] * r[b];
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    c
}

/// `|Cov(zs) - Cov(zt)|_F^2 / (4 D^2)`.
pub fn coral(zs: &Tensor, zt: &Tensor) -> Result<LossValue> {
    let (ns, nt, d) = pair_dims(zs, zt)?;
    if ns < 2 || nt < 2 {
        return Err(invalid("coral needs at least two rows per side"));
    }
    let (xs, xt) = (centered(zs), centered(zt));
    let (cs, ct) = (covariance(&xs), covariance(&xt));
    let scale = 1.0 / (4.0 * (d * d) as f64);
    let diff: Vec<f64> = cs.iter().zip(&ct).map(|(a, b)| a - b).collect();
    let value = scale * diff.iter().map(|v| v * v).sum::<f64>();
    // dL/dC = 2 scale (Cs - Ct); dL/dXc = 2/(N-1) Xc dL/dC
    let g: Vec<f64> = diff.iter().map(|v| 2.0 * scale * v).collect();
    let grad = |xc: &Tensor, n: usize, sign: f64| {
        let mut out = vec![0.0; n * d];
        let c = sign * 2.0 / (n - 1) as f64;
        for i in 0..n {
            let r = xc.row(i);
            for b in 0..d {
                out[i * d + b] = c * (0..d).map(|a| r[a] * g[a * d + b]).sum::<f64>();
            }
        }
        Tensor::from_parts(vec![n, d], out)
    };
    Ok(LossValue::new(value, vec![grad(&xs, ns, 1.0), grad(&xt, nt, -1.0)]))
}

/// `|M_p(zs) - M_p(zt)|^2 / D^p` where `M_p(z) = mean_i (z_i - mean z)^{(x)p}`.
///
/// Evaluated through the identity `<M_p(x), M_p(y)> = mean_ij (x_i . y_j)^p`,
/// so the moment tensors are never formed.
pub fn homm(zs: &Tensor, zt: &Tensor, order: u32) -> Result<LossValue> {
    let (ns, nt, d) = pair_dims(zs, zt)?;
    if !(2..=3).contains(&order) {
        return Err(invalid(format!("homm order {order} unsupported (2 or 3)")));
    }
    if ns == 0 || nt == 0 {
        return Err(invalid("homm needs at least one row per side"));
    }
    let (xs, xt) = (centered(zs), centered(zt));
    let bank = KernelBank {
        kernels: vec![Kernel::Poly(order)],
    };
    let mut r = mmd(&xs, &xt, &bank)?;
    let scale = 1.0 / (d as f64).powi(order as i32);
    r.value *= scale;
    for g in &mut r.grads {
        // project back through the centering
        *g = centered(&g.scale(scale));
    }
    Ok(r)
}

/// Class-conditional MMD: for each class, source rows weighted by their
/// normalized one-hot labels and target rows by normalized `pt[:, k]`.
/// Classes empty on either side are skipped; the result is the mean over
/// the remaining classes. Gradients w.r.t. `zs` and `zt` (`pt` is treated
/// as constant).
pub fn lmmd(zs: &Tensor, ys: &[usize], zt: &Tensor, pt: &Tensor, bank: &KernelBank) -> Result<LossValue> {
    let (ns, nt, d) = pair_dims(zs, zt)?;
    let (np, k) = check_matrix(pt, "target probabilities")?;
    if ys.len() != ns || np != nt {
        return Err(invalid("lmmd: labels or probabilities do not match the batches"));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= k) {
        return Err(invalid(format!("lmmd: label {y} outside [0, {k})")));
    }
    let mut total = 0.0;
    let mut gs = Tensor::zeros(&[ns, d]);
    let mut gt = Tensor::zeros(&[nt, d]);
    let mut used = 0usize;
    for c in 0..k {
        let cnt = ys.iter().filter(|&&y| y == c).count();
        let mass: f64 = (0..nt).map(|i| pt.row(i)[c]).sum();
        if cnt == 0 || !(mass > 0.0) {
            continue;
        }
        let a: Vec<f64> = ys
            .iter()
            .map(|&y| if y == c { 1.0 / cnt as f64 } else { 0.0 })
            .collect();
        let b: Vec<f64> = (0..nt).map(|i| pt.row(i)[c] / mass).collect();
        let r = weighted_mmd(zs, &a, zt, &b, bank)?;
        total += r.value;
        gs.add_assign(&r.grads[0]);
        gt.add_assign(&r.grads[1]);
        used += 1;
    }
    if used == 0 {
        return Ok(LossValue {
            value: 0.0,
            grads: vec![gs, gt],
            vacuous: true,
        });
    }
    let inv = 1.0 / used as f64;
    Ok(LossValue::new(total * inv, vec![gs.scale(inv), gt.scale(inv)]))
}
