use super::TimeSeriesDataset;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Floor on the standard deviation used as divisor.
pub const NORM_EPS: f64 = 1e-8;

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Statistics over all samples and timesteps of each channel.
pub fn channel_stats(samples: &Tensor) -> ChannelStats {
    let (n, c, t) = (samples.dim(0), samples.dim(1), samples.dim(2));
    let count = (n * t) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    if n * t == 0 {
        return ChannelStats {
            mean,
            std: vec![0.0; c],
        };
    }
    for s in 0..n {
        for (ch, m) in mean.iter_mut().enumerate() {
            *m += samples.data()[(s * c + ch) * t..(s * c + ch + 1) * t]
                .iter()
                .sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for s in 0..n {
        for (ch, v) in var.iter_mut().enumerate() {
            let m = mean[ch];
            *v += samples.data()[(s * c + ch) * t..(s * c + ch + 1) * t]
                .iter()
                .map(|x| (x - m) * (x - m))
                .sum::<f64>();
        }
    }
    ChannelStats {
        mean,
        std: var.iter().map(|v| (v / count).sqrt()).collect(),
    }
}

fn apply(samples: &Tensor, stats: &ChannelStats) -> Tensor {
    let (c, t) = (samples.dim(1), samples.dim(2));
    let mut out = samples.clone();
    for (i, x) in out.data_mut().iter_mut().enumerate() {
        let ch = (i / t) % c;
        *x = (*x - stats.mean[ch]) / stats.std[ch].max(NORM_EPS);
    }
    out
}

/// Z-scores both splits with the train split's per-channel statistics.
pub fn normalize(
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if train.samples().shape()[1..] != test.samples().shape()[1..] {
        return Err(invalid(format!(
            "train {:?} and test {:?} differ in (C, T)",
            train.samples().shape(),
            test.samples().shape()
        )));
    }
    let stats = channel_stats(train.samples());
    Ok((
        train.with_samples(apply(train.samples(), &stats)),
        test.with_samples(apply(test.samples(), &stats)),
    ))
}

#[cfg(test)]
mod tests {
    use super::super::Split;
    use super::*;
    use proptest::prelude::*;

    fn ds(shape: [usize; 3], data: Vec<f64>) -> TimeSeriesDataset {
        let n = shape[0];
        TimeSeriesDataset::new(
            "d",
            Tensor::new(shape.to_vec(), data).unwrap(),
            vec![0; n],
            2,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn one_two_three() {
        let tr = ds([1, 1, 3], vec![1.0, 2.0, 3.0]);
        assert!(normalize(&tr, &ds([1, 1, 2], vec![2.0, 5.0])).is_err());
        let te = ds([1, 1, 3], vec![2.0, 2.0, 2.0]);
        let (a, b) = normalize(&tr, &te).unwrap();
        // mean 2, population std sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        let want = [-1.0 / s, 0.0, 1.0 / s];
        for (x, w) in a.samples().data().iter().zip(want) {
            assert!((x - w).abs() < 1e-12);
        }
        assert!((want[2] - 1.2247).abs() < 1e-4);
        assert!(b.samples().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_channel_goes_to_zero() {
        let tr = ds([2, 2, 2], vec![5.0, 5.0, 1.0, 2.0, 5.0, 5.0, 3.0, 4.0]);
        let (a, _) = normalize(&tr, &tr).unwrap();
        for s in 0..2 {
            assert_eq!(&a.samples().row(s)[..2], &[0.0, 0.0]);
        }
    }

    proptest! {
        #[test]
        fn standardized_and_stable(data in proptest::collection::vec(-50.0f64..50.0, 24)) {
            let tr = ds([4, 2, 3], data);
            let (a, _) = normalize(&tr, &tr).unwrap();
            let st = channel_stats(a.samples());
            let raw = channel_stats(tr.samples());
            for ch in 0..2 {
                prop_assert!(st.mean[ch].abs() < 1e-5);
                if raw.std[ch] > NORM_EPS {
                    prop_assert!((st.std[ch] - 1.0).abs() < 1e-4);
                }
            }
            let (again, _) = normalize(&a, &a).unwrap();
            for (x, y) in again.samples().data().iter().zip(a.samples().data()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
