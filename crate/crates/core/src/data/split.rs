use super::{Split, TimeSeriesDataset};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};

/// Per-class count going to train: `round_half_up(fraction * n)`, capped so
/// at least one sample of the class lands in test.
fn train_count(fraction: f64, n: usize) -> usize {
    let k = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    k.min(n - 1)
}

/// Stratified train/test partition. Each output keeps the input order of
/// its rows; which rows go where depends only on `seed`.
pub fn stratified_split(
    ds: &TimeSeriesDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction <= 0.0 {
        return Err(invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let counts = ds.class_counts();
    if let Some((k, _)) = counts.iter().enumerate().find(|(_, &n)| n == 1) {
        return Err(Error::Split(format!(
            "class {k} has a single sample; test coverage impossible"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Split);
    let mut in_train = vec![false; ds.len()];
    for (k, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == k).collect();
        let perm = rng::permutation(&mut rng, n);
        for &p in perm.iter().take(train_count(train_fraction, n)) {
            in_train[members[p]] = true;
        }
    }
    let train: Vec<usize> = (0..ds.len()).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..ds.len()).filter(|&i| !in_train[i]).collect();
    Ok((ds.subset(&train, Split::Train), ds.subset(&test, Split::Test)))
}
