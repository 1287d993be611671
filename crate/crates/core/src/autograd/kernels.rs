//! Numeric kernels behind the graph ops. Batch-shaped work is split across
//! samples (or output rows) through [`crate::par`]; reductions over the batch
//! run in a fixed order inside one task so results never depend on scheduling.

use crate::par;
use crate::tensor::Tensor;

/// Stride, dilation and (possibly asymmetric) zero padding of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    pub fn same(kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            dilation: 1,
            pad_left: kernel / 2,
            pad_right: kernel / 2,
        }
    }

    /// Left-only padding so output step `t` sees inputs `<= t`.
    pub fn causal(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            pad_left: (kernel - 1) * dilation,
            pad_right: 0,
        }
    }

    pub fn out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + self.pad_left + self.pad_right;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    /// Output steps `t` whose tap `j` lands inside `[0, len)`.
    fn valid(&self, j: usize, len: usize, out: usize) -> (usize, usize) {
        let off = (j * self.dilation) as isize - self.pad_left as isize;
        let s = self.stride as isize;
        // smallest t with t*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // t*s + off <= len - 1
        let top = len as isize - 1 - off;
        let hi = if top < 0 { 0 } else { top / s + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi as usize).min(out);
        (lo, hi.max(lo))
    }

    fn offset(&self, j: usize) -> isize {
        (j * self.dilation) as isize - self.pad_left as isize
    }
}

/// `x (B, Ci, T)`, `w (Co, Ci, K)` -> `(B, Co, To)`.
pub fn conv1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, geom: ConvGeom) -> Tensor {
    let (b, ci, t) = (x.dim(0), x.dim(1), x.dim(2));
    let (co, k) = (w.dim(0), w.dim(2));
    let to = geom.out_len(t, k).expect("conv output length checked by caller");
    let mut y = vec![0.0; b * co * to];
    let xd = x.data();
    let wd = w.data();
    par::for_each_chunk(&mut y, co * to, |n, ys| {
        let xs = &xd[n * ci * t..(n + 1) * ci * t];
        for o in 0..co {
            let yo = &mut ys[o * to..(o + 1) * to];
            if let Some(bias) = bias {
                yo.fill(bias.data()[o]);
            }
            for c in 0..ci {
                let xc = &xs[c * t..(c + 1) * t];
                for j in 0..k {
                    let wv = wd[(o * ci + c) * k + j];
                    let (lo, hi) = geom.valid(j, t, to);
                    if lo >= hi {
                        continue;
                    }
                    let off = geom.offset(j);
                    if geom.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        let src = &xc[start..start + (hi - lo)];
                        for (yv, xv) in yo[lo..hi].iter_mut().zip(src) {
                            *yv += wv * xv;
                        }
                    } else {
                        for (tt, yv) in yo.iter_mut().enumerate().take(hi).skip(lo) {
                            *yv += wv * xc[(tt as isize * geom.stride as isize + off) as usize];
                        }
                    }
                }
            }
        }
    });
    Tensor::from_parts(vec![b, co, to], y)
}

/// Gradient of [`conv1d`] with respect to its input.
pub fn conv1d_grad_input(dy: &Tensor, w: &Tensor, geom: ConvGeom, t: usize) -> Tensor {
    let (b, co, to) = (dy.dim(0), dy.dim(1), dy.dim(2));
    let (ci, k) = (w.dim(1), w.dim(2));
    let mut dx = vec![0.0; b * ci * t];
    let dyd = dy.data();
    let wd = w.data();
    par::for_each_chunk(&mut dx, ci * t, |n, dxs| {
        let dys = &dyd[n * co * to..(n + 1) * co * to];
        for c in 0..ci {
            let dxc = &mut dxs[c * t..(c + 1) * t];
            for o in 0..co {
                let dyo = &dys[o * to..(o + 1) * to];
                for j in 0..k {
                    let wv = wd[(o * ci + c) * k + j];
                    let (lo, hi) = geom.valid(j, t, to);
                    if lo >= hi {
                        continue;
                    }
                    let off = geom.offset(j);
                    if geom.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        let dst = &mut dxc[start..start + (hi - lo)];
                        for (d, g) in dst.iter_mut().zip(&dyo[lo..hi]) {
                            *d += wv * g;
                        }
                    } else {
                        for (tt, g) in dyo.iter().enumerate().take(hi).skip(lo) {
                            dxc[(tt as isize * geom.stride as isize + off) as usize] += wv * g;
                        }
                    }
                }
            }
        }
    });
    Tensor::from_parts(vec![b, ci, t], dx)
}

/// Gradient of [`conv1d`] with respect to its weight.
pub fn conv1d_grad_weight(dy: &Tensor, x: &Tensor, geom: ConvGeom, k: usize) -> Tensor {
    let (b, co, to) = (dy.dim(0), dy.dim(1), dy.dim(2));
    let (ci, t) = (x.dim(1), x.dim(2));
    let mut dw = vec![0.0; co * ci * k];
    let dyd = dy.data();
    let xd = x.data();
    par::for_each_chunk(&mut dw, ci * k, |o, dwo| {
        for n in 0..b {
            let dyo = &dyd[(n * co + o) * to..(n * co + o + 1) * to];
            for c in 0..ci {
                let xc = &xd[(n * ci + c) * t..(n * ci + c + 1) * t];
                for j in 0..k {
                    let (lo, hi) = geom.valid(j, t, to);
                    if lo >= hi {
                        continue;
                    }
                    let off = geom.offset(j);
                    let mut acc = 0.0;
                    if geom.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        for (g, xv) in dyo[lo..hi].iter().zip(&xc[start..start + (hi - lo)]) {
                            acc += g * xv;
                        }
                    } else {
                        for (tt, g) in dyo.iter().enumerate().take(hi).skip(lo) {
                            acc += g * xc[(tt as isize * geom.stride as isize + off) as usize];
                        }
                    }
                    dwo[c * k + j] += acc;
                }
            }
        }
    });
    Tensor::from_parts(vec![co, ci, k], dw)
}

/// Sum of `dy (B, C, T)` over batch and time.
pub fn channel_sum(dy: &Tensor) -> Tensor {
    let (b, c) = (dy.dim(0), dy.dim(1));
    let t = dy.row_len() / c.max(1);
    let mut out = vec![0.0; c];
    for n in 0..b {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += dy.data()[(n * c + ch) * t..(n * c + ch + 1) * t].iter().sum::<f64>();
        }
    }
    Tensor::from_parts(vec![c], out)
}

/// `x (B, In)`, `w (Out, In)` -> `x w^T + b`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let (b, inp) = (x.dim(0), x.dim(1));
    let out = w.dim(0);
    let mut y = vec![0.0; b * out];
    let xd = x.data();
    let wd = w.data();
    par::for_each_chunk(&mut y, out, |n, yr| {
        let xr = &xd[n * inp..(n + 1) * inp];
        for (o, yv) in yr.iter_mut().enumerate() {
            let wr = &wd[o * inp..(o + 1) * inp];
            let mut acc = bias.map_or(0.0, |bb| bb.data()[o]);
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            *yv = acc;
        }
    });
    Tensor::from_parts(vec![b, out], y)
}

/// `dy (B, Out)`, `w (Out, In)` -> `dy w`.
pub fn linear_grad_input(dy: &Tensor, w: &Tensor) -> Tensor {
    let (b, out) = (dy.dim(0), dy.dim(1));
    let inp = w.dim(1);
    let mut dx = vec![0.0; b * inp];
    let dyd = dy.data();
    let wd = w.data();
    par::for_each_chunk(&mut dx, inp, |n, dxr| {
        for o in 0..out {
            let g = dyd[n * out + o];
            if g == 0.0 {
                continue;
            }
            for (d, wv) in dxr.iter_mut().zip(&wd[o * inp..(o + 1) * inp]) {
                *d += g * wv;
            }
        }
    });
    Tensor::from_parts(vec![b, inp], dx)
}

/// `dy (B, Out)`, `x (B, In)` -> `dy^T x`.
pub fn linear_grad_weight(dy: &Tensor, x: &Tensor) -> Tensor {
    let (b, out) = (dy.dim(0), dy.dim(1));
    let inp = x.dim(1);
    let mut dw = vec![0.0; out * inp];
    let dyd = dy.data();
    let xd = x.data();
    par::for_each_chunk(&mut dw, inp, |o, dwr| {
        for n in 0..b {
            let g = dyd[n * out + o];
            if g == 0.0 {
                continue;
            }
            for (d, xv) in dwr.iter_mut().zip(&xd[n * inp..(n + 1) * inp]) {
                *d += g * xv;
            }
        }
    });
    Tensor::from_parts(vec![out, inp], dw)
}

/// Column sums of a `(B, Out)` matrix.
pub fn column_sum(dy: &Tensor) -> Tensor {
    let out = dy.dim(1);
    let mut s = vec![0.0; out];
    for r in dy.data().chunks(out.max(1)) {
        for (a, v) in s.iter_mut().zip(r) {
            *a += v;
        }
    }
    Tensor::from_parts(vec![out], s)
}

/// Non-overlapping max pooling over time with ceil-mode output length.
/// Returns the pooled tensor and the flat input index of every maximum.
pub fn max_pool(x: &Tensor, size: usize) -> (Tensor, Vec<usize>) {
    let (b, c, t) = (x.dim(0), x.dim(1), x.dim(2));
    let to = t.div_ceil(size);
    let mut y = Vec::with_capacity(b * c * to);
    let mut arg = Vec::with_capacity(b * c * to);
    for row in 0..b * c {
        let base = row * t;
        for o in 0..to {
            let start = o * size;
            let end = (start + size).min(t);
            let mut best = start;
            for i in start + 1..end {
                if x.data()[base + i] > x.data()[base + best] {
                    best = i;
                }
            }
            y.push(x.data()[base + best]);
            arg.push(base + best);
        }
    }
    (Tensor::from_parts(vec![b, c, to], y), arg)
}
