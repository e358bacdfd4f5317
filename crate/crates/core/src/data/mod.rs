//! Multi-bias datasets: storage, synthetic generation, majority-agreement
//! grouping and group-balanced minibatch sampling.

mod generate;
mod grouping;
mod sampler;

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::tensor::Tensor;

pub use generate::{
    expected_clean_fraction, generate, BiasGenSpec, BiasTypeSpec, CellCount, FeatureModel, SplitDataset,
    TrainCounts, PRESETS,
};
pub use grouping::{assign_groups, GroupIndex, GroupingScheme, MajorityTable, TieBreak};
pub use sampler::{
    batches_per_epoch, group_balanced_batches, shuffled_batches, GroupBalancedBatches, ShuffledBatches,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("bias type {bias} is not guided by its majority attribute in class {class}: expected {expected}, majority {majority:?}")]
    GuidingNotMajority { class: usize, bias: usize, expected: usize, majority: Option<usize> },
    #[error("tie for the majority attribute of bias type {bias} in class {class} (attributes {attributes:?})")]
    MajorityTie { class: usize, bias: usize, attributes: Vec<usize> },
    #[error("class {class} has no training samples, majority attribute undefined")]
    EmptyClass { class: usize },
    #[error("sample {index} is invalid: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("dataset is empty")]
    Empty,
    #[error("batch size {batch_size} is not divisible by {groups} non-empty groups; nearest valid batch size is {suggested}")]
    BatchNotDivisible { batch_size: usize, groups: usize, suggested: usize },
    #[error("no non-empty groups to sample from")]
    NoGroups,
    #[error(transparent)]
    Tensor(#[from] AutodiffError),
}

/// One labelled sample: features, target class and one attribute per bias type.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub target: usize,
    pub bias: Vec<usize>,
}

/// Column-oriented sample storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    num_classes: usize,
    alphabets: Vec<usize>,
    feature_dim: usize,
    features: Vec<f64>,
    targets: Vec<usize>,
    biases: Vec<usize>,
}

impl Dataset {
    pub fn new(num_classes: usize, alphabets: Vec<usize>, feature_dim: usize) -> Self {
        Dataset { num_classes, alphabets, feature_dim, features: Vec::new(), targets: Vec::new(), biases: Vec::new() }
    }

    pub fn from_samples(
        num_classes: usize,
        alphabets: Vec<usize>,
        feature_dim: usize,
        samples: &[Sample],
    ) -> Result<Self, DataError> {
        let mut ds = Dataset::new(num_classes, alphabets, feature_dim);
        for s in samples {
            ds.push(&s.x, s.target, &s.bias)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, x: &[f64], target: usize, bias: &[usize]) -> Result<(), DataError> {
        let index = self.len();
        let invalid = |reason: String| DataError::InvalidSample { index, reason };
        if x.len() != self.feature_dim {
            return Err(invalid(alloc::format!("{} features, expected {}", x.len(), self.feature_dim)));
        }
        if target >= self.num_classes {
            return Err(invalid(alloc::format!("target {target} >= {} classes", self.num_classes)));
        }
        if bias.len() != self.alphabets.len() {
            return Err(invalid(alloc::format!("{} bias attributes, expected {}", bias.len(), self.alphabets.len())));
        }
        for (d, (&b, &a)) in bias.iter().zip(&self.alphabets).enumerate() {
            if b >= a {
                return Err(invalid(alloc::format!("bias type {d} attribute {b} >= alphabet {a}")));
            }
        }
        self.features.extend_from_slice(x);
        self.targets.push(target);
        self.biases.extend_from_slice(bias);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_bias_types(&self) -> usize {
        self.alphabets.len()
    }

    pub fn alphabets(&self) -> &[usize] {
        &self.alphabets
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn target(&self, i: usize) -> usize {
        self.targets[i]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn bias(&self, i: usize) -> &[usize] {
        let d = self.alphabets.len();
        &self.biases[i * d..(i + 1) * d]
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample { x: self.x(i).to_vec(), target: self.target(i), bias: self.bias(i).to_vec() }
    }

    pub fn iter(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Feature matrix and targets for the given rows.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>), DataError> {
        let mut x = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut t = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.x(i));
            t.push(self.targets[i]);
        }
        let tensor = Tensor::new(alloc::vec![indices.len(), self.feature_dim], x)?;
        Ok((tensor, t))
    }

    /// A copy with rows reordered so that row `i` is old row `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.num_classes, self.alphabets.clone(), self.feature_dim);
        for &i in order {
            out.features.extend_from_slice(self.x(i));
            out.targets.push(self.targets[i]);
            out.biases.extend_from_slice(self.bias(i));
        }
        out
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &t in &self.targets {
            counts[t] += 1;
        }
        counts
    }
}
