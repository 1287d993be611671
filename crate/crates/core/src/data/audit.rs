use std::sync::atomic::{AtomicU64, Ordering};

use super::TimeSeriesDataset;
use crate::tensor::Tensor;

/// Counts reads of target-domain labels.
#[derive(Debug, Default)]
pub struct LabelAudit {
    reads: AtomicU64,
}

impl LabelAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    /// Returns the count so far and resets it.
    pub fn take(&self) -> u64 {
        self.reads.swap(0, Ordering::SeqCst)
    }

    fn record(&self) {
        self.reads.fetch_add(1, Ordering::SeqCst);
    }
}

/// Read access to a target split; every label read is counted.
#[derive(Clone, Copy, Debug)]
pub struct TargetView<'a> {
    data: &'a TimeSeriesDataset,
    audit: &'a LabelAudit,
}

impl<'a> TargetView<'a> {
    pub(crate) fn new(data: &'a TimeSeriesDataset, audit: &'a LabelAudit) -> Self {
        Self { data, audit }
    }

    pub fn samples(&self) -> &'a Tensor {
        self.data.samples()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    pub fn labels(&self) -> &'a [usize] {
        self.audit.record();
        self.data.labels()
    }

    /// The whole labeled split; counted as a label read.
    pub fn labeled(&self) -> &'a TimeSeriesDataset {
        self.audit.record();
        self.data
    }
}
