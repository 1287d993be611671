//! Registry of adaptation methods, their hyper-parameter schemas and the
//! shared training loop.

mod train;

pub use train::{adapt, CandidateModel, EpochLog, TrainConfig, TrialStatus};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::cross_entropy;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmId {
    SourceOnly,
    TargetOnly,
    Ddc,
    DeepCoral,
    Homm,
    Mmda,
    Dsan,
    Dann,
    Cdan,
    DirtT,
    Codats,
    Advskm,
}

impl AlgorithmId {
    pub const ALL: [AlgorithmId; 12] = [
        Self::SourceOnly,
        Self::TargetOnly,
        Self::Ddc,
        Self::DeepCoral,
        Self::Homm,
        Self::Mmda,
        Self::Dsan,
        Self::Dann,
        Self::Cdan,
        Self::DirtT,
        Self::Codats,
        Self::Advskm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SourceOnly => "source_only",
            Self::TargetOnly => "target_only",
            Self::Ddc => "ddc",
            Self::DeepCoral => "deep_coral",
            Self::Homm => "homm",
            Self::Mmda => "mmda",
            Self::Dsan => "dsan",
            Self::Dann => "dann",
            Self::Cdan => "cdan",
            Self::DirtT => "dirt_t",
            Self::Codats => "codats",
            Self::Advskm => "advskm",
        }
    }

    /// Display name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::SourceOnly => "Source-only",
            Self::TargetOnly => "Target-only",
            Self::Ddc => "DDC",
            Self::DeepCoral => "Deep-Coral",
            Self::Homm => "HoMM",
            Self::Mmda => "MMDA",
            Self::Dsan => "DSAN",
            Self::Dann => "DANN",
            Self::Cdan => "CDAN",
            Self::DirtT => "DIRT-T",
            Self::Codats => "CoDATS",
            Self::Advskm => "AdvSKM",
        }
    }

    /// Whether the method legitimately reads target training labels.
    pub fn reads_target_labels(self) -> bool {
        self == Self::TargetOnly
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Discrepancy,
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Marginal,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Visual,
    TimeSeries,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    LogUniform,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub name: String,
    pub low: f64,
    pub high: f64,
    pub scale: Scale,
}

impl ParamRange {
    fn log(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.into(),
            low,
            high,
            scale: Scale::LogUniform,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let u: f64 = rng.random();
        let v = match self.scale {
            Scale::LogUniform => (self.low.ln() + u * (self.high.ln() - self.low.ln())).exp(),
            Scale::Uniform => self.low + u * (self.high - self.low),
        };
        v.clamp(self.low, self.high)
    }
}

/// Sampled hyper-parameter ranges of one method. The learning rate is
/// always the first entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HParamSchema {
    pub params: Vec<ParamRange>,
}

/// One method's registry entry. Baselines have no taxonomy tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub id: AlgorithmId,
    pub origin: Option<Origin>,
    pub category: Option<Category>,
    pub distribution: Option<Distribution>,
    pub losses: Vec<String>,
    pub schema: HParamSchema,
}

pub const LEARNING_RATE: &str = "learning_rate";

fn schema(id: AlgorithmId) -> HParamSchema {
    use AlgorithmId::*;
    let w = |n: &str| ParamRange::log(n, 1e-2, 1e1);
    let cls = ParamRange::log("cls_weight", 1e-1, 1e1);
    let mut params = vec![ParamRange::log(LEARNING_RATE, 1e-3, 1e0)];
    params.extend(match id {
        SourceOnly | TargetOnly => vec![cls],
        Ddc => vec![w("mmd_weight"), cls],
        DeepCoral => vec![w("coral_weight"), cls],
        Homm => vec![w("homm_weight"), cls],
        Mmda => vec![w("mmd_weight"), w("coral_weight"), w("entropy_weight"), cls],
        Dsan => vec![w("lmmd_weight"), w("cls_weight")],
        Dann | Codats => vec![w("adversarial_weight"), cls],
        Cdan => vec![w("adversarial_weight"), w("entropy_weight"), cls],
        DirtT => vec![
            w("adversarial_weight"),
            w("entropy_weight"),
            w("vat_weight"),
            w("disc_steps"),
            cls,
        ],
        Advskm => vec![w("mmd_weight"), cls],
    });
    HParamSchema { params }
}

pub fn algorithm_spec(id: AlgorithmId) -> AlgorithmSpec {
    use AlgorithmId::*;
    use Category::*;
    use Distribution::*;
    use Origin::*;
    let (origin, cat, dist, losses): (_, _, _, &[&str]) = match id {
        SourceOnly | TargetOnly => (None, None, None, &["classification"]),
        Ddc => (Some(Visual), Some(Discrepancy), Some(Marginal), &["mmd"]),
        DeepCoral => (Some(Visual), Some(Discrepancy), Some(Marginal), &["coral"]),
        Homm => (Some(Visual), Some(Discrepancy), Some(Marginal), &["high-order mmd"]),
        Mmda => (
            Some(Visual),
            Some(Discrepancy),
            Some(Joint),
            &["mmd", "coral", "entropy"],
        ),
        Dsan => (Some(Visual), Some(Discrepancy), Some(Joint), &["local mmd"]),
        Dann => (Some(Visual), Some(Adversarial), Some(Marginal), &["domain classifier"]),
        Cdan => (
            Some(Visual),
            Some(Adversarial),
            Some(Joint),
            &["conditional adversarial", "domain classifier"],
        ),
        DirtT => (
            Some(Visual),
            Some(Adversarial),
            Some(Joint),
            &["virtual adversarial", "entropy", "domain classifier"],
        ),
        Codats => (
            Some(TimeSeries),
            Some(Adversarial),
            Some(Marginal),
            &["domain classifier"],
        ),
        Advskm => (
            Some(TimeSeries),
            Some(Adversarial),
            Some(Marginal),
            &["spectral kernel", "adversarial mmd"],
        ),
    };
    AlgorithmSpec {
        id,
        origin,
        category: cat,
        distribution: dist,
        losses: losses.iter().map(|s| s.to_string()).collect(),
        schema: schema(id),
    }
}

/// Every registered method, in registry order.
pub fn list_algorithms() -> Vec<AlgorithmSpec> {
    AlgorithmId::ALL.into_iter().map(algorithm_spec).collect()
}

/// A point in a method's hyper-parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HParams {
    pub learning_rate: f64,
    pub weights: BTreeMap<String, f64>,
    pub seed: u64,
}

impl HParams {
    /// Learning rate `lr`, every loss weight 1.
    pub fn uniform(id: AlgorithmId, lr: f64, seed: u64) -> Self {
        let weights = schema(id)
            .params
            .iter()
            .skip(1)
            .map(|p| (p.name.clone(), 1.0))
            .collect();
        Self {
            learning_rate: lr,
            weights,
            seed,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.weights.insert(name.to_string(), value);
        self
    }

    /// Named weight; 0 when absent.
    pub fn weight(&self, name: &str) -> f64 {
        self.weights.get(name).copied().unwrap_or(0.0)
    }

    /// Checks names against the method's schema. Values outside the
    /// sampled range are accepted (0 disables a term) but must be finite
    /// and non-negative.
    pub fn validate(&self, id: AlgorithmId) -> Result<()> {
        let s = schema(id);
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be finite and > 0"));
        }
        for (k, v) in &self.weights {
            if !s.params.iter().any(|p| &p.name == k) {
                return Err(invalid(format!("{id} has no hyper-parameter {k:?}")));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return Err(invalid(format!("{k} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// True when every value lies inside its sampled range.
    pub fn within(&self, schema: &HParamSchema) -> bool {
        schema.params.iter().all(|p| {
            let v = if p.name == LEARNING_RATE {
                self.learning_rate
            } else {
                self.weight(&p.name)
            };
            p.contains(v)
        })
    }
}

/// Draws every schema entry independently.
pub fn sample_hparams(schema: &HParamSchema, seed: u64, rng: &mut Rng) -> Result<HParams> {
    if schema.params.is_empty() {
        return Err(invalid("empty hyper-parameter schema"));
    }
    let mut hp = HParams {
        learning_rate: 0.0,
        weights: BTreeMap::new(),
        seed,
    };
    for p in &schema.params {
        let v = p.sample(rng);
        if p.name == LEARNING_RATE {
            hp.learning_rate = v;
        } else {
            hp.weights.insert(p.name.clone(), v);
        }
    }
    Ok(hp)
}

/// Mean `-log p[y]` over rows of a probability matrix, `p` clamped to
/// `[1e-7, 1]`.
pub fn source_classification_loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.ndim() != 2 || probs.dim(0) != labels.len() || labels.is_empty() {
        return Err(invalid("one label per probability row required"));
    }
    let k = probs.dim(1);
    let mut acc = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(invalid(format!("label {y} outside [0, {k})")));
        }
        acc -= probs.row(i)[y].max(1e-7).ln();
    }
    Ok(acc / labels.len() as f64)
}

/// Cross-entropy on logits; the form used inside training.
pub fn logits_classification_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy(logits, labels)?.value)
}
