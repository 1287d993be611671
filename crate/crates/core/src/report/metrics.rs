use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn check(y_true: &[usize], y_pred: &[usize], k: Option<usize>) -> Result<()> {
    if y_true.is_empty() {
        return Err(invalid("metrics need at least one prediction"));
    }
    if y_true.len() != y_pred.len() {
        return Err(invalid(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if let Some(k) = k {
        if let Some(bad) = y_true.iter().chain(y_pred).find(|&&y| y >= k) {
            return Err(invalid(format!("class {bad} outside [0, {k})")));
        }
    }
    Ok(())
}

/// Unweighted mean of per-class F1. A class that is neither present nor
/// predicted is left out; one that is present but never predicted scores 0.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<f64> {
    check(y_true, y_pred, Some(k))?;
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in 0..k {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            continue;
        }
        sum += (2 * tp[c]) as f64 / denom as f64;
        n += 1;
    }
    Ok(sum / n as f64)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check(y_true, y_pred, None)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

pub fn metrics(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<MetricPair> {
    Ok(MetricPair {
        macro_f1: macro_f1(y_true, y_pred, k)?,
        accuracy: accuracy(y_true, y_pred)?,
    })
}
