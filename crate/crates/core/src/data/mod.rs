//! Time-series domains: ingestion, segmentation, splitting, normalization,
//! and a synthetic generator of shifted domain pairs.

mod audit;
mod io;
mod normalize;
mod segment;
mod split;
mod synthetic;

pub use audit::{LabelAudit, TargetView};
pub use io::{load_dataset, manifest_path, read_manifest, save_dataset, DatasetManifest, DomainEntry, SplitEntry};
pub use normalize::{channel_stats, normalize, ChannelStats, NORM_EPS};
pub use segment::segment;
pub use split::stratified_split;
pub use synthetic::{make_synthetic, DomainShift, ShiftSpec};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labeled multichannel windows of one domain split: `samples (N, C, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    samples: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    pub split: Split,
}

impl TimeSeriesDataset {
    pub fn new(
        name: impl Into<String>,
        samples: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if samples.ndim() != 3 {
            return Err(invalid(format!(
                "samples must be (N, C, T), got {:?}",
                samples.shape()
            )));
        }
        if labels.len() != samples.dim(0) {
            return Err(invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.dim(0)
            )));
        }
        if num_classes < 2 {
            return Err(invalid("need at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            name: name.into(),
            samples,
            labels,
            num_classes,
            split,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples.dim(1)
    }

    pub fn length(&self) -> usize {
        self.samples.dim(2)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize], split: Split) -> Self {
        Self {
            name: self.name.clone(),
            samples: self.samples.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split,
        }
    }

    pub(crate) fn with_samples(&self, samples: Tensor) -> Self {
        Self {
            samples,
            ..self.clone()
        }
    }
}

/// The train and test splits of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub train: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
}

impl Domain {
    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn channels(&self) -> usize {
        self.train.channels()
    }

    /// Both splits z-scored with the train split's per-channel statistics.
    pub fn normalized(&self) -> Result<Self> {
        let (train, test) = normalize(&self.train, &self.test)?;
        Ok(Self { train, test })
    }
}

/// One source -> target pair within a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scenario {
    pub dataset_name: String,
    pub source: u32,
    pub target: u32,
}

impl Scenario {
    pub fn new(dataset_name: impl Into<String>, source: u32, target: u32) -> Result<Self> {
        if source == target {
            return Err(invalid(format!(
                "scenario needs distinct domains, got {source} twice"
            )));
        }
        Ok(Self {
            dataset_name: dataset_name.into(),
            source,
            target,
        })
    }

    /// Parses `"src:tgt"`.
    pub fn parse(dataset_name: &str, s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("scenario {s:?} is not src:tgt")))?;
        let p = |x: &str| {
            u32::from_str(x.trim()).map_err(|_| invalid(format!("bad domain id {x:?}")))
        };
        Self::new(dataset_name, p(a)?, p(b)?)
    }

    pub fn label(&self) -> String {
        format!("{}\u{2192}{}", self.source, self.target)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.source, self.target)
    }
}

/// Preprocessed data for one scenario. Target labels are reachable only
/// through audited [`TargetView`]s.
#[derive(Clone, Debug)]
pub struct ScenarioData {
    pub scenario: Scenario,
    pub source: Domain,
    target: Domain,
}

impl ScenarioData {
    /// Normalizes both domains (each with its own train statistics) after
    /// checking they agree on classes, channels and window length.
    pub fn prepare(scenario: Scenario, source: &Domain, target: &Domain) -> Result<Self> {
        if source.num_classes() != target.num_classes() || source.channels() != target.channels()
        {
            return Err(invalid(format!(
                "domains {} and {} disagree on classes or channels",
                scenario.source, scenario.target
            )));
        }
        if source.train.length() != target.train.length() {
            return Err(invalid("source and target windows differ in length"));
        }
        Ok(Self {
            scenario,
            source: source.normalized()?,
            target: target.normalized()?,
        })
    }

    /// Picks and prepares `scenario` out of loaded domains.
    pub fn from_domains(domains: &BTreeMap<u32, Domain>, scenario: Scenario) -> Result<Self> {
        let get = |id: u32| {
            domains
                .get(&id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown domain {id}")))
        };
        let (s, t) = (get(scenario.source)?, get(scenario.target)?);
        Self::prepare(scenario, s, t)
    }

    pub fn num_classes(&self) -> usize {
        self.source.num_classes()
    }

    pub fn target_train<'a>(&'a self, audit: &'a LabelAudit) -> TargetView<'a> {
        TargetView::new(&self.target.train, audit)
    }

    pub fn target_test<'a>(&'a self, audit: &'a LabelAudit) -> TargetView<'a> {
        TargetView::new(&self.target.test, audit)
    }
}
