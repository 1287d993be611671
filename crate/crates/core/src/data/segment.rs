use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Sliding windows over a `(C, T_raw)` signal: window `i` covers
/// `[i * stride, i * stride + window)`. Returns `(N, C, window)`.
pub fn segment(signal: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    if signal.ndim() != 2 {
        return Err(invalid(format!(
            "signal must be (C, T), got {:?}",
            signal.shape()
        )));
    }
    if stride == 0 {
        return Err(invalid("stride must be positive"));
    }
    let (c, t) = (signal.dim(0), signal.dim(1));
    if window == 0 || window > t {
        return Err(Error::Segmentation { window, len: t });
    }
    let n = (t - window) / stride + 1;
    let mut data = Vec::with_capacity(n * c * window);
    for i in 0..n {
        let start = i * stride;
        for ch in 0..c {
            data.extend_from_slice(&signal.data()[ch * t + start..ch * t + start + window]);
        }
    }
    Tensor::new(vec![n, c, window], data)
}
