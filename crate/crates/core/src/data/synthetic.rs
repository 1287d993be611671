//! Class-conditional sinusoids with a controllable domain shift.
//!
//! A sample of class `k` on channel `c` is
//!
//! ```text
//! x[c, t] = a · g_c · sin(2π f_k s t / T + φ + c·π/4)
//!         + b · sin(2π f_i t / T + ψ_c) + o + σ ε[c, t]
//! ```
//!
//! with `f_k` the class frequency (cycles per window), `s` the domain's
//! frequency scale, `φ, ψ_c` uniform phases, `g_c` a fixed channel gain and
//! `a` jittered by ±20% per sample. `b, f_i` describe an interfering tone
//! present only where the domain sets it. Values are rounded to `f32`
//! precision so that they survive the on-disk format unchanged.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{stratified_split, Domain, Split, TimeSeriesDataset};
use crate::error::{invalid, Result};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

/// Per-domain generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainShift {
    pub amplitude: f64,
    pub offset: f64,
    pub noise_std: f64,
    pub frequency_scale: f64,
    pub interference_amplitude: f64,
    pub interference_frequency: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            offset: 0.0,
            noise_std: 0.3,
            frequency_scale: 1.0,
            interference_amplitude: 0.0,
            interference_frequency: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftSpec {
    pub channels: usize,
    pub length: usize,
    pub samples_per_class: usize,
    /// One frequency per class, in cycles per window.
    pub class_frequencies: Vec<f64>,
    pub source: DomainShift,
    pub target: DomainShift,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl ShiftSpec {
    /// Source and target drawn from the same process.
    pub fn zero_shift() -> Self {
        Self {
            channels: 3,
            length: 64,
            samples_per_class: 40,
            class_frequencies: vec![2.0, 4.0, 6.0, 8.0],
            source: DomainShift::default(),
            target: DomainShift::default(),
        }
    }

    /// The frozen desk-scale benchmark shift.
    pub fn benchmark() -> Self {
        Self {
            target: DomainShift {
                amplitude: 2.0,
                noise_std: 0.6,
                interference_amplitude: 5.0,
                interference_frequency: 11.0,
                ..DomainShift::default()
            },
            ..Self::zero_shift()
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_frequencies.len()
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes() < 2 {
            return Err(invalid("synthetic spec needs at least two classes"));
        }
        if self.channels == 0 || self.length < 2 {
            return Err(invalid("synthetic spec needs C >= 1 and T >= 2"));
        }
        if self.samples_per_class < 2 {
            return Err(invalid("synthetic spec needs >= 2 samples per class"));
        }
        let mut f = self.class_frequencies.clone();
        f.sort_by(f64::total_cmp);
        if f.iter().any(|v| !v.is_finite() || *v <= 0.0) || f.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("class frequencies must be positive and distinct"));
        }
        for d in [&self.source, &self.target] {
            let vals = [
                d.amplitude,
                d.offset,
                d.noise_std,
                d.frequency_scale,
                d.interference_amplitude,
                d.interference_frequency,
            ];
            if vals.iter().any(|v| !v.is_finite())
                || d.amplitude <= 0.0
                || d.noise_std < 0.0
                || d.frequency_scale <= 0.0
            {
                return Err(invalid(format!("degenerate domain parameters {d:?}")));
            }
        }
        Ok(())
    }
}

fn generate(spec: &ShiftSpec, d: &DomainShift, rng: &mut Rng, name: &str) -> Result<TimeSeriesDataset> {
    let (k, c, t) = (spec.num_classes(), spec.channels, spec.length);
    let n = k * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * c * t);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        labels.push(y);
        let f = spec.class_frequencies[y] * d.frequency_scale;
        let phase = rng.random::<f64>() * 2.0 * PI;
        let amp = d.amplitude * (0.8 + 0.4 * rng.random::<f64>());
        for ch in 0..c {
            let gain = 1.0 / (1.0 + 0.5 * ch as f64);
            let psi = rng.random::<f64>() * 2.0 * PI;
            for s in 0..t {
                let tau = s as f64 / t as f64;
                let v = amp * gain * (2.0 * PI * f * tau + phase + ch as f64 * PI / 4.0).sin()
                    + d.interference_amplitude
                        * (2.0 * PI * d.interference_frequency * tau + psi).sin()
                    + d.offset
                    + d.noise_std * rng::normal(rng);
                data.push(v as f32 as f64);
            }
        }
    }
    TimeSeriesDataset::new(name, Tensor::new(vec![n, c, t], data)?, labels, k, Split::Train)
}

/// Draws a `(source, target)` pair, each split 70/30 stratified.
pub fn make_synthetic(spec: &ShiftSpec, seed: u64) -> Result<(Domain, Domain)> {
    spec.validate()?;
    let mut out = Vec::with_capacity(2);
    for (i, (d, name)) in [(&spec.source, "synthetic/0"), (&spec.target, "synthetic/1")]
        .into_iter()
        .enumerate()
    {
        let mut r = rng::indexed(seed, Stream::Synthetic, i as u64);
        let full = generate(spec, d, &mut r, name)?;
        let (train, test) = stratified_split(&full, 0.7, seed.wrapping_add(i as u64))?;
        out.push(Domain { train, test });
    }
    let target = out.pop().expect("two domains");
    let source = out.pop().expect("two domains");
    Ok((source, target))
}
