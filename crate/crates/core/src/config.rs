//! TOML run configuration shared by `train` and `sweep`.
//!
//! ```toml
//! [dataset]
//! kind = "manifest"          # or "synthetic" with an optional [dataset.spec]
//! path = "data/manifest.json"
//!
//! [backbone]
//! kind = "cnn1d"
//! input_channels = 9
//! num_classes = 6
//!
//! [train]
//! epochs = 40
//!
//! [hparams]                  # used by `train`
//! learning_rate = 1e-3
//! weights = { mmd_weight = 1.0 }
//!
//! [sweep]
//! algorithm = "ddc"
//! scenarios = ["2:11", "6:23"]
//! n_combos = 100
//! seeds = [1, 2, 3]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmId, HParamSchema, HParams, TrainConfig};
use crate::backbones::{BackboneKind, BackboneSpec};
use crate::data::ShiftSpec;
use crate::error::{Error, Result};
use crate::selection::{DevConfig, RiskType};
use crate::sweep::{DataSource, SelectionMode, SweepPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    pub kind: BackboneKind,
    pub input_channels: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl BackboneSection {
    pub fn spec(&self) -> Result<BackboneSpec> {
        let mut s = BackboneSpec::new(self.kind, self.input_channels, self.num_classes);
        s.kernel_size = self.kernel_size.unwrap_or(s.kernel_size);
        s.stride = self.stride.unwrap_or(s.stride);
        s.feature_dim = self.feature_dim.unwrap_or(s.feature_dim);
        s.width = self.width.unwrap_or(s.width);
        s.validate().map_err(|e| Error::Config(format!("[backbone] {e}")))?;
        Ok(s)
    }
}

/// Fixed hyper-parameters for a single run. Unlisted weights are 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HParamSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

fn default_lr() -> f64 {
    1e-3
}

impl Default for HParamSection {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            weights: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmId>,
    #[serde(default)]
    pub scenarios: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_combos: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub search_seed: u64,
    #[serde(default)]
    pub selection: SelectionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risks: Option<Vec<RiskType>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate_target: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fewshot_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<HParamSchema>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DataSource,
    pub backbone: BackboneSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub hparams: HParamSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub dev: DevConfig,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The `[hparams]` section checked against `id`'s schema names.
    pub fn hparams(&self, id: AlgorithmId, seed: u64) -> Result<HParams> {
        let mut hp = HParams::uniform(id, self.hparams.learning_rate, seed);
        for (k, v) in &self.hparams.weights {
            if !hp.weights.contains_key(k) {
                return Err(Error::Config(format!(
                    "[hparams] {id} has no weight {k:?} (expected one of {:?})",
                    hp.weights.keys().collect::<Vec<_>>()
                )));
            }
            hp.weights.insert(k.clone(), *v);
        }
        hp.validate(id).map_err(|e| Error::Config(format!("[hparams] {e}")))?;
        Ok(hp)
    }

    /// A sweep plan from the `[sweep]` section; `algorithm` overrides the
    /// one in the file.
    pub fn to_plan(&self, algorithm: Option<AlgorithmId>) -> Result<SweepPlan> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sweep] section".into()))?;
        let alg = algorithm
            .or(s.algorithm)
            .ok_or_else(|| Error::Config("[sweep] needs an algorithm".into()))?;
        let mut p = SweepPlan::new(alg, self.dataset.clone(), s.scenarios.clone(), self.backbone.spec()?);
        p.train = self.train.clone();
        p.dev = self.dev.clone();
        if let Some(n) = s.n_combos {
            p.n_combos = n;
        }
        if let Some(v) = &s.seeds {
            p.seeds = v.clone();
        }
        if let Some(v) = &s.risks {
            p.risks = v.clone();
        }
        if let Some(v) = s.evaluate_target {
            p.evaluate_target = v;
        }
        if let Some(v) = s.fewshot_per_class {
            p.fewshot_per_class = v;
        }
        p.search_seed = s.search_seed;
        p.selection = s.selection;
        p.workers = s.workers;
        p.save_checkpoints = s.save_checkpoints;
        p.schema = s.schema.clone();
        p.validate().map_err(|e| Error::Config(format!("[sweep] {e}")))?;
        Ok(p)
    }
}

/// Input of `tsda synth`: a generator spec (benchmark defaults for
/// omitted fields) and its seed. TOML, or JSON for `.json` files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "synthetic_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub spec: ShiftSpec,
}

fn synthetic_name() -> String {
    "synthetic".into()
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
