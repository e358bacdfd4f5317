//! Full training runs of an MLP on a [`SplitDataset`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::objective::{compute_group_losses, GroupEval};
use super::gram::GradMatrix;
use super::scaling::ScalingState;
use super::trainer::{JointStepRecord, Optimizer, OptimizerInfo, OptimizerKind, Trainer, WeightRule};
use super::TrainError;
use crate::baselines::{upweight_group_weights, BaselineKind};
use crate::data::{
    group_balanced_batches, shuffled_batches, Dataset, GroupIndex, GroupingScheme, MajorityTable, SplitDataset,
    TieBreak,
};
use crate::metrics::{evaluate, GroupAccuracyTable};
use crate::model::{Mlp, MlpSpec, Parameters};
use crate::seed::{self, Stream};

/// Training method: ours or one of the baselines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    #[default]
    Ours,
    Erm,
    Upweight,
    Upsample,
    GroupDro,
    FixedAlpha,
    LossOnlyAlpha,
    MgdaOnly,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ours,
        Method::Erm,
        Method::Upweight,
        Method::Upsample,
        Method::GroupDro,
        Method::FixedAlpha,
        Method::LossOnlyAlpha,
        Method::MgdaOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Erm => "erm",
            Method::Upweight => "upweight",
            Method::Upsample => "upsample",
            Method::GroupDro => "group_dro",
            Method::FixedAlpha => "fixed_alpha",
            Method::LossOnlyAlpha => "loss_only_alpha",
            Method::MgdaOnly => "mgda_only",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s || m.name().replace('_', "-") == s)
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Method::Ours => None,
            Method::Erm => Some(BaselineKind::Erm),
            Method::Upweight => Some(BaselineKind::Upweight),
            Method::Upsample => Some(BaselineKind::Upsample),
            Method::GroupDro => Some(BaselineKind::GroupDro),
            Method::FixedAlpha => Some(BaselineKind::FixedAlpha),
            Method::LossOnlyAlpha => Some(BaselineKind::LossOnlyAlpha),
            Method::MgdaOnly => Some(BaselineKind::MgdaOnly),
        }
    }

    /// Grouping used when the config leaves it unset: `(b, t)` cells for the
    /// reweighting baselines, majority agreement otherwise.
    pub fn default_grouping(self) -> GroupingScheme {
        match self {
            Method::GroupDro | Method::Upweight | Method::Upsample => GroupingScheme::BiasTarget,
            _ => GroupingScheme::Majority,
        }
    }

    /// Whether each batch is drawn group-balanced (else a natural shuffled batch).
    pub fn group_balanced(self) -> bool {
        !matches!(self, Method::Erm | Method::Upweight)
    }
}

impl From<BaselineKind> for Method {
    fn from(k: BaselineKind) -> Self {
        match k {
            BaselineKind::Erm => Method::Erm,
            BaselineKind::Upweight => Method::Upweight,
            BaselineKind::Upsample => Method::Upsample,
            BaselineKind::GroupDro => Method::GroupDro,
            BaselineKind::FixedAlpha => Method::FixedAlpha,
            BaselineKind::LossOnlyAlpha => Method::LossOnlyAlpha,
            BaselineKind::MgdaOnly => Method::MgdaOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SelectionMetric {
    #[default]
    Worst,
    Unbiased,
    Indist,
}

impl SelectionMetric {
    pub fn of(self, t: &GroupAccuracyTable) -> f64 {
        match self {
            SelectionMetric::Worst => t.worst,
            SelectionMetric::Unbiased => t.unbiased,
            SelectionMetric::Indist => t.indist,
        }
    }
}

/// Split the checkpoint is selected on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SelectionSplit {
    /// Group-balanced validation split.
    #[default]
    Val,
    /// Validation split drawn from the training distribution.
    ValIndist,
    /// Test split. Reported as test-set selection.
    Test,
    /// No selection: the last iterate is kept.
    Last,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub method: Method,
    pub eta1: f64,
    pub eta2: f64,
    #[cfg_attr(feature = "serde", serde(rename = "U"))]
    pub period: usize,
    pub c: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub selection_metric: SelectionMetric,
    pub selection_split: SelectionSplit,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    /// Exponentiated-gradient step of GroupDRO.
    pub eta_q: f64,
    /// Training grouping; `None` picks [`Method::default_grouping`].
    pub grouping: Option<GroupingScheme>,
    pub tie_break: TieBreak,
    /// Bias types used for training groups; `None` means all.
    pub train_bias_dims: Option<Vec<usize>>,
    /// Bias types used for evaluation groups; `None` means all.
    pub eval_bias_dims: Option<Vec<usize>>,
    /// Evaluate every this many iterations; 0 means once per epoch.
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: Option<usize>,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Ours,
            eta1: 2e-4,
            eta2: 1e-2,
            period: 10,
            c: 1.0,
            batch_size: 512,
            epochs: 50,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            selection_metric: SelectionMetric::Worst,
            selection_split: SelectionSplit::Val,
            seed: 0,
            hidden_dims: vec![64, 64],
            eta_q: 0.01,
            grouping: None,
            tie_break: TieBreak::Error,
            train_bias_dims: None,
            eval_bias_dims: None,
            eval_every: 0,
            patience: None,
            divergence_threshold: 50.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.eta1 >= 0.0 && self.eta1.is_finite()) {
            return bad(format!("eta1 must be finite and >= 0, got {}", self.eta1));
        }
        if !(self.eta2 >= 0.0 && self.eta2.is_finite()) {
            return bad(format!("eta2 must be finite and >= 0, got {}", self.eta2));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("c must be finite and >= 0, got {}", self.c));
        }
        if !(self.eta_q >= 0.0 && self.eta_q.is_finite()) {
            return bad(format!("eta_q must be finite and >= 0, got {}", self.eta_q));
        }
        if self.period == 0 {
            return bad("U must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return bad("divergence_threshold must be positive".into());
        }
        Ok(())
    }

    pub fn grouping(&self) -> GroupingScheme {
        self.grouping.unwrap_or(self.method.default_grouping())
    }

    /// Model spec for a dataset of the given shape.
    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> MlpSpec {
        MlpSpec::new(input_dim, self.hidden_dims.clone(), num_classes, seed::derive(self.seed, Stream::ModelInit, 0))
    }

    pub fn sampler_seed(&self) -> u64 {
        seed::derive(self.seed, Stream::Sampler, 0)
    }
}

/// Aggregate accuracies of one split.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricSummary {
    pub unbiased: f64,
    pub indist: f64,
    pub worst: f64,
}

impl From<&GroupAccuracyTable> for MetricSummary {
    fn from(t: &GroupAccuracyTable) -> Self {
        MetricSummary { unbiased: t.unbiased, indist: t.indist, worst: t.worst }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalRecord {
    pub iter: usize,
    pub epoch: usize,
    pub val: MetricSummary,
    pub test: MetricSummary,
    pub selection_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Selection {
    pub split: SelectionSplit,
    pub metric: SelectionMetric,
    pub iter: usize,
    pub epoch: usize,
    pub value: f64,
}

/// Everything a run logged.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunRecord {
    pub method: Method,
    /// Labels of the training groups, aligned with `sigma_alpha` entries.
    pub group_labels: Vec<String>,
    pub joint_steps: Vec<JointStepRecord>,
    pub evals: Vec<EvalRecord>,
    pub selection: Selection,
    /// True when the checkpoint was picked on the test split.
    pub selected_on_test: bool,
    pub iterations: usize,
    pub optimizer: OptimizerInfo,
    pub val: GroupAccuracyTable,
    pub val_indist: Option<GroupAccuracyTable>,
    pub test: GroupAccuracyTable,
    pub train_group_sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub spec: MlpSpec,
    pub params: Parameters,
    pub record: RunRecord,
}

/// Groupings of a run: the training partition and the evaluation partitions.
#[derive(Clone, Debug)]
pub struct RunGroups {
    pub table: MajorityTable,
    pub train: GroupIndex,
    pub eval_train: GroupIndex,
    pub train_proportions: Vec<f64>,
}

impl RunGroups {
    pub fn build(config: &TrainConfig, data: &SplitDataset) -> Result<Self, TrainError> {
        let d = data.train.num_bias_types();
        let all: Vec<usize> = (0..d).collect();
        let table = MajorityTable::compute(&data.train, config.tie_break)?;
        let train_dims = config.train_bias_dims.clone().unwrap_or_else(|| all.clone());
        let eval_dims = config.eval_bias_dims.clone().unwrap_or(all);
        let train = GroupIndex::build(&data.train, &table, &train_dims, config.grouping())?;
        let eval_train = GroupIndex::build(&data.train, &table, &eval_dims, GroupingScheme::Majority)?;
        let train_proportions = eval_train.proportions();
        Ok(RunGroups { table, train, eval_train, train_proportions })
    }

    /// Majority-grouped index of another split over the evaluation bias types.
    pub fn eval_index(&self, split: &Dataset) -> Result<GroupIndex, TrainError> {
        Ok(GroupIndex::build(split, &self.table, self.eval_train.bias_dims(), GroupingScheme::Majority)?)
    }
}

struct Evaluator<'a> {
    model: &'a Mlp,
    groups: &'a RunGroups,
    val: (&'a Dataset, GroupIndex),
    val_indist: Option<(&'a Dataset, GroupIndex)>,
    test: (&'a Dataset, GroupIndex),
}

impl Evaluator<'_> {
    fn table(&self, params: &[f64], split: &(&Dataset, GroupIndex)) -> Result<GroupAccuracyTable, TrainError> {
        Ok(evaluate(self.model, params, split.0, &split.1, &self.groups.train_proportions)?)
    }
}

fn weight_rule(method: Method, config: &TrainConfig, n: usize) -> WeightRule {
    match method {
        Method::Ours => WeightRule::Adaptive(ScalingState::new(n, config.period, config.eta1, config.eta2, config.c)),
        Method::LossOnlyAlpha => {
            WeightRule::Adaptive(ScalingState::new(n, config.period, config.eta1, config.eta2, 0.0))
        }
        Method::MgdaOnly => WeightRule::Mgda,
        Method::GroupDro => WeightRule::group_dro(n, config.eta_q),
        Method::FixedAlpha | Method::Upsample | Method::Erm | Method::Upweight => WeightRule::Fixed,
    }
}

/// Trains `config.method` on `data` and evaluates the selected checkpoint.
pub fn train(config: &TrainConfig, data: &SplitDataset) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::Data(crate::data::DataError::Empty));
    }
    let groups = RunGroups::build(config, data)?;
    let method = config.method;
    let spec = config.model_spec(data.train.feature_dim(), data.train.num_classes());
    let model = Mlp::new(spec.clone())?;
    let mut params = model.init();

    let non_empty = groups.train.non_empty();
    let (num_groups, group_labels): (usize, Vec<String>) = if method.group_balanced() {
        (non_empty.len(), non_empty.iter().map(|&g| groups.train.label(g)).collect())
    } else {
        (1, vec!["all".to_string()])
    };
    let sample_weights = if method == Method::Upweight { Some(upweight_group_weights(&groups.train)) } else { None };

    let optimizer = Optimizer::new(config.optimizer, config.eta1, config.weight_decay);
    let mut trainer = Trainer::new(num_groups, weight_rule(method, config, num_groups), config.period, optimizer)
        .with_divergence_threshold(config.divergence_threshold);

    let evaluator = Evaluator {
        model: &model,
        groups: &groups,
        val: (&data.val, groups.eval_index(&data.val)?),
        val_indist: if data.val_indist.is_empty() {
            None
        } else {
            Some((&data.val_indist, groups.eval_index(&data.val_indist)?))
        },
        test: (&data.test, groups.eval_index(&data.test)?),
    };
    if config.selection_split == SelectionSplit::ValIndist && evaluator.val_indist.is_none() {
        return Err(TrainError::InvalidConfig("selection on val_indist but that split is empty".into()));
    }

    let sampler_seed = config.sampler_seed();
    let mut evals = Vec::new();
    let mut best: Option<(f64, usize, usize, Vec<f64>)> = None;
    let mut since_best = 0usize;
    let mut stop = false;

    let mut do_eval = |params: &[f64], iter: usize, epoch: usize, evals: &mut Vec<EvalRecord>| -> Result<bool, TrainError> {
        let val = evaluator.table(params, &evaluator.val)?;
        let test = evaluator.table(params, &evaluator.test)?;
        let sel_value = match config.selection_split {
            SelectionSplit::Val | SelectionSplit::Last => config.selection_metric.of(&val),
            SelectionSplit::Test => config.selection_metric.of(&test),
            SelectionSplit::ValIndist => {
                let vi = evaluator.val_indist.as_ref().expect("checked above");
                config.selection_metric.of(&evaluator.table(params, vi)?)
            }
        };
        evals.push(EvalRecord {
            iter,
            epoch,
            val: (&val).into(),
            test: (&test).into(),
            selection_value: sel_value,
        });
        let improved = best.as_ref().is_none_or(|b| sel_value > b.0) || config.selection_split == SelectionSplit::Last;
        if improved {
            best = Some((sel_value, iter, epoch, params.to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        Ok(config.patience.is_some_and(|p| since_best >= p))
    };

    for epoch in 0..config.epochs {
        let mut step = |params: &mut Parameters, eval: GroupEval, evals: &mut Vec<EvalRecord>| -> Result<bool, TrainError> {
            trainer.step(params.flat_mut(), &eval)?;
            if config.eval_every > 0 && trainer.iter().is_multiple_of(config.eval_every) {
                return do_eval(params.flat(), trainer.iter(), epoch, evals);
            }
            Ok(false)
        };
        if method.group_balanced() {
            for batch in group_balanced_batches(&groups.train, config.batch_size, sampler_seed, epoch as u64)? {
                let eval = compute_group_losses(&model, params.flat(), &data.train, &batch)?;
                if step(&mut params, eval, &mut evals)? {
                    stop = true;
                    break;
                }
            }
        } else {
            for batch in shuffled_batches(data.train.len(), config.batch_size, sampler_seed, epoch as u64) {
                let (x, t) = data.train.batch(&batch)?;
                let w: Option<Vec<f64>> =
                    sample_weights.as_ref().map(|sw| batch.iter().map(|&i| sw[groups.train.group_of(i)]).collect());
                let (loss, grad) = model.loss_and_grad(params.flat(), &x, &t, w.as_deref())?;
                let eval = GroupEval { losses: vec![loss], grads: GradMatrix::from_rows(&[grad]) };
                if step(&mut params, eval, &mut evals)? {
                    stop = true;
                    break;
                }
            }
        }
        if stop {
            break;
        }
        if config.eval_every == 0 && do_eval(params.flat(), trainer.iter(), epoch, &mut evals)? {
            break;
        }
    }
    if evals.is_empty() || evals.last().is_some_and(|e| e.iter != trainer.iter()) && config.selection_split == SelectionSplit::Last {
        do_eval(params.flat(), trainer.iter(), config.epochs.saturating_sub(1), &mut evals)?;
    }

    let (value, iter, epoch, flat) = best.expect("at least one evaluation ran");
    let params = Parameters::from_flat(model.layout().clone(), flat)?;
    let val = evaluator.table(params.flat(), &evaluator.val)?;
    let val_indist = match &evaluator.val_indist {
        Some(vi) => Some(evaluator.table(params.flat(), vi)?),
        None => None,
    };
    let test = evaluator.table(params.flat(), &evaluator.test)?;
    let record = RunRecord {
        method,
        group_labels,
        optimizer: trainer.optimizer().clone(),
        iterations: trainer.iter(),
        joint_steps: trainer.into_records(),
        evals,
        selection: Selection { split: config.selection_split, metric: config.selection_metric, iter, epoch, value },
        selected_on_test: config.selection_split == SelectionSplit::Test,
        val,
        val_indist,
        test,
        train_group_sizes: groups.train.sizes(),
    };
    Ok(TrainOutput { spec, params, record })
}
