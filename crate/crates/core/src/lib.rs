#![no_std]
//! Debiased training under multiple spurious correlations.
//!
//! Samples are grouped by whether each of their bias attributes agrees with
//! the majority attribute of their class, and a classifier is trained on a
//! softmax-weighted combination of group losses whose weights move toward a
//! Pareto-stationary point. Everything here is `no_std` + `alloc`; file
//! formats, CLI and parallel experiment drivers live in the `debias` crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod metrics;
pub mod model;
pub mod moo;
pub mod seed;
pub mod tensor;

pub use autodiff::{AutodiffError, Gradient, ParamId, ParamLayout, ParamSlot, Tape, Var};
pub use baselines::BaselineKind;
pub use data::{DataError, Dataset, GroupIndex, SplitDataset};
pub use metrics::{GroupAccuracyTable, MetricsError};
pub use model::{Mlp, MlpSpec, Parameters};
pub use moo::{train, Method, RunRecord, TrainConfig, TrainError, TrainOutput};
pub use tensor::Tensor;
