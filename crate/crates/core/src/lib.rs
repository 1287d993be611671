//! Core of a benchmarking framework for unsupervised domain adaptation on
//! time-series classification: data preparation, backbones, alignment
//! losses, adaptation algorithms, label-free model selection, sweeps and
//! reporting.

pub mod algorithms;
pub mod autograd;
pub mod backbones;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod par;
pub mod report;
pub mod rng;
pub mod selection;
pub mod sweep;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
