//! Group-weighted multi-objective training.
//!
//! The scaling weights `sigma(alpha)` descend on a loss-plus-stationarity
//! objective and the multiplier `lambda` ascends on the Pareto residual every
//! `U` iterations, while the parameters descend on the weighted group loss at
//! every iteration. A min-norm (MGDA) solver and the residual diagnostics live
//! here too.

mod gram;
mod mgda;
mod objective;
mod scaling;
mod train;
mod trainer;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::metrics::MetricsError;

pub use gram::{pareto_residual, quad_form, GradMatrix};
pub use mgda::{mgda_solve, min_norm_pair, MgdaSolution};
pub use objective::{compute_group_losses, GroupEval, GroupObjectives, QuadraticObjectives};
pub use scaling::{alpha_lambda_step, loss_alpha, loss_alpha_grad, softmax, softmax_vjp, AlphaStep, ScalingState};
pub use train::{
    train, EvalRecord, Method, MetricSummary, RunGroups, RunRecord, Selection, SelectionMetric, SelectionSplit,
    TrainConfig, TrainOutput,
};
pub use trainer::{theta_step, JointStepRecord, Optimizer, OptimizerInfo, OptimizerKind, Trainer, WeightRule};

/// Where and how a run diverged, with the joint steps logged so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub iter: usize,
    pub group: usize,
    pub loss: f64,
    pub trajectory: Vec<JointStepRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("diverged at iteration {}: group {} loss {}", .0.iter, .0.group, .0.loss)]
    Diverged(Box<Divergence>),
    #[error("non-finite gradient for group {group}")]
    NonFiniteGradient { group: usize },
    #[error("empty sub-batch for group {group}")]
    EmptyGroupBatch { group: usize },
    #[error("expected {expected} group losses, got {got}")]
    GroupCount { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
