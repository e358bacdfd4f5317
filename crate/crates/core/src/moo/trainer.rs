//! One iteration of group-weighted training.
//!
//! Every iteration takes a descent step on `sum_n w_n L_n`. Every `period`-th
//! iteration is a joint step: after the parameter update the weights
//! themselves are updated from the same losses and gradients, and a
//! [`JointStepRecord`] is logged. Between joint steps the weights are frozen.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::gram::{pareto_residual, GradMatrix};
use super::mgda::mgda_solve;
use super::objective::{GroupEval, GroupObjectives};
use super::scaling::{alpha_lambda_step, ScalingState};
use super::TrainError;

/// How the group weights evolve.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightRule {
    /// Softmax logits with the Lagrangian update (`c = 0` drops the penalty).
    Adaptive(ScalingState),
    /// Uniform weights, never updated.
    Fixed,
    /// Min-norm weights recomputed at every joint step; no multiplier.
    Mgda,
    /// Exponentiated-gradient weights `q`, updated at every iteration before the step.
    GroupDro { q: Vec<f64>, eta_q: f64 },
}

impl WeightRule {
    pub fn group_dro(num_groups: usize, eta_q: f64) -> Self {
        WeightRule::GroupDro { q: vec![1.0 / num_groups as f64; num_groups], eta_q }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Optimizer configuration and how many updates it has applied.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerInfo {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
}

/// Plain SGD or Adam (bias-corrected first and second moments).
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    info: OptimizerInfo,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            info: OptimizerInfo { kind, lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0 },
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn info(&self) -> &OptimizerInfo {
        &self.info
    }

    /// Applies `grad` plus the L2 term `weight_decay * params`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.info.lr;
        let wd = self.info.weight_decay;
        self.info.steps += 1;
        match self.info.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * (g + wd * *p);
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                }
                let OptimizerInfo { beta1: b1, beta2: b2, eps, steps, .. } = self.info;
                let c1 = 1.0 - libm::pow(b1, steps as f64);
                let c2 = 1.0 - libm::pow(b2, steps as f64);
                for i in 0..params.len() {
                    let g = grad[i] + wd * params[i];
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (libm::sqrt(vh) + eps);
                }
            }
        }
    }
}

/// `theta <- theta - eta1 * sum_n weights[n] * grad L_n`.
pub fn theta_step(params: &mut [f64], grads: &GradMatrix, weights: &[f64], eta1: f64) -> Result<(), TrainError> {
    if let Some(group) = grads.first_non_finite_row() {
        return Err(TrainError::NonFiniteGradient { group });
    }
    let g = grads.combine(weights);
    for (p, d) in params.iter_mut().zip(&g) {
        *p -= eta1 * d;
    }
    Ok(())
}

/// State logged at a joint step.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointStepRecord {
    pub iter: usize,
    /// Group weights after the update.
    pub sigma_alpha: Vec<f64>,
    pub lambda: f64,
    pub group_losses: Vec<f64>,
    /// `w^T K w` at the weights used for this step's parameter update.
    pub pareto_residual: f64,
    /// Per-group change of the weights made by this update.
    pub weight_delta: Vec<f64>,
    /// `c * lambda * residual` before the update (adaptive rule only).
    pub penalty: f64,
    /// Scaling objective before the update (adaptive rule only).
    pub loss_alpha: f64,
}

/// Group-weighted trainer over any [`GroupObjectives`].
#[derive(Clone, Debug)]
pub struct Trainer {
    rule: WeightRule,
    period: usize,
    optimizer: Optimizer,
    divergence_threshold: f64,
    iter: usize,
    weights: Vec<f64>,
    records: Vec<JointStepRecord>,
}

impl Trainer {
    pub fn new(num_groups: usize, rule: WeightRule, period: usize, optimizer: Optimizer) -> Self {
        let weights = match &rule {
            WeightRule::Adaptive(s) => s.weights(),
            WeightRule::GroupDro { q, .. } => q.clone(),
            WeightRule::Fixed | WeightRule::Mgda => vec![1.0 / num_groups as f64; num_groups],
        };
        assert_eq!(weights.len(), num_groups, "weight rule sized for a different group count");
        Trainer {
            rule,
            period: period.max(1),
            optimizer,
            divergence_threshold: 50.0,
            iter: 0,
            weights,
            records: Vec::new(),
        }
    }

    pub fn with_divergence_threshold(mut self, threshold: f64) -> Self {
        self.divergence_threshold = threshold;
        self
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Weights the next parameter update will use (before any GroupDRO update).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        match &self.rule {
            WeightRule::Adaptive(s) => s.lambda,
            _ => 0.0,
        }
    }

    pub fn rule(&self) -> &WeightRule {
        &self.rule
    }

    pub fn optimizer(&self) -> &OptimizerInfo {
        self.optimizer.info()
    }

    pub fn records(&self) -> &[JointStepRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<JointStepRecord> {
        self.records
    }

    fn check(&self, eval: &GroupEval) -> Result<(), TrainError> {
        let iter = self.iter + 1;
        for (group, &loss) in eval.losses.iter().enumerate() {
            if !loss.is_finite() || loss > self.divergence_threshold {
                return Err(TrainError::Diverged(Box::new(super::Divergence {
                    iter,
                    group,
                    loss,
                    trajectory: self.records.clone(),
                })));
            }
        }
        if let Some(group) = eval.grads.first_non_finite_row() {
            return Err(TrainError::NonFiniteGradient { group });
        }
        Ok(())
    }

    /// One iteration at `params` with the losses and gradients `eval`.
    /// Returns the joint-step record when weights were updated.
    pub fn step(&mut self, params: &mut [f64], eval: &GroupEval) -> Result<Option<&JointStepRecord>, TrainError> {
        if eval.num_groups() != self.weights.len() {
            return Err(TrainError::GroupCount { expected: self.weights.len(), got: eval.num_groups() });
        }
        self.check(eval)?;
        self.iter += 1;
        let joint = self.iter.is_multiple_of(self.period);

        if let WeightRule::GroupDro { q, eta_q } = &mut self.rule {
            for (qn, l) in q.iter_mut().zip(&eval.losses) {
                *qn *= libm::exp(*eta_q * l);
            }
            let z: f64 = q.iter().sum();
            for qn in q.iter_mut() {
                *qn /= z;
            }
            self.weights.clone_from(q);
        }

        let used = self.weights.clone();
        let combined = eval.grads.combine(&used);
        self.optimizer.apply(params, &combined);

        if !joint {
            return Ok(None);
        }
        let gram = eval.grads.gram();
        let residual = pareto_residual(&gram, &used);
        let (mut penalty, mut loss_alpha) = (0.0, 0.0);
        match &mut self.rule {
            WeightRule::Adaptive(state) => {
                let info = alpha_lambda_step(state, &eval.losses, &gram);
                penalty = info.penalty;
                loss_alpha = info.loss_alpha;
                self.weights = state.weights();
            }
            WeightRule::Mgda => {
                self.weights = mgda_solve(&gram, used.len()).weights;
            }
            WeightRule::Fixed | WeightRule::GroupDro { .. } => {}
        }
        let weight_delta = self.weights.iter().zip(&used).map(|(a, b)| a - b).collect();
        let lambda = self.lambda();
        self.records.push(JointStepRecord {
            iter: self.iter,
            sigma_alpha: self.weights.clone(),
            lambda,
            group_losses: eval.losses.clone(),
            pareto_residual: residual,
            weight_delta,
            penalty,
            loss_alpha,
        });
        Ok(self.records.last())
    }

    /// Runs `iters` iterations against `objectives`, returning the last evaluation.
    pub fn run<O: GroupObjectives>(
        &mut self,
        objectives: &mut O,
        params: &mut [f64],
        iters: usize,
    ) -> Result<GroupEval, TrainError> {
        let mut eval = objectives.evaluate(params)?;
        for _ in 0..iters {
            self.step(params, &eval)?;
            eval = objectives.evaluate(params)?;
        }
        Ok(eval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moo::objective::QuadraticObjectives;

    fn sgd(lr: f64) -> Optimizer {
        Optimizer::new(OptimizerKind::Sgd, lr, 0.0)
    }

    #[test]
    fn theta_step_cases() {
        let g = GradMatrix::from_rows(&[[1.0, -2.0], [-1.0, 2.0]]);
        let mut p = [0.5, 0.5];
        theta_step(&mut p, &g, &[0.5, 0.5], 0.1).unwrap();
        assert_eq!(p, [0.5, 0.5]);
        theta_step(&mut p, &g, &[1.0, 0.0], 0.0).unwrap();
        assert_eq!(p, [0.5, 0.5]);
        theta_step(&mut p, &g, &[0.0, 1.0], 0.5).unwrap();
        assert_eq!(p, [1.0, -0.5]);
        let bad = GradMatrix::from_rows(&[[1.0, 0.0], [0.0, f64::INFINITY]]);
        assert!(matches!(theta_step(&mut p, &bad, &[0.5, 0.5], 0.1), Err(TrainError::NonFiniteGradient { group: 1 })));
    }

    #[test]
    fn period_one_updates_every_iteration() {
        let mut q = QuadraticObjectives::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![1.0, 1.0]);
        let rule = WeightRule::Adaptive(ScalingState::new(2, 1, 0.1, 0.1, 1.0));
        let mut t = Trainer::new(2, rule, 1, sgd(0.1));
        let mut p = vec![0.3, 0.4];
        t.run(&mut q, &mut p, 7).unwrap();
        assert_eq!(t.records().len(), 7);
        assert_eq!(t.records()[3].iter, 4);
    }

    #[test]
    fn period_u_updates_every_u_th() {
        let mut q = QuadraticObjectives::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![1.0, 1.0]);
        let rule = WeightRule::Adaptive(ScalingState::new(2, 5, 0.1, 0.1, 1.0));
        let mut t = Trainer::new(2, rule, 5, sgd(0.1));
        let mut p = vec![0.3, 0.4];
        t.run(&mut q, &mut p, 23).unwrap();
        let iters: Vec<usize> = t.records().iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![5, 10, 15, 20]);
    }

    #[test]
    fn fixed_rule_is_uniform_forever() {
        let mut q = QuadraticObjectives::new(vec![vec![0.0], vec![1.0], vec![3.0]], vec![1.0, 2.0, 3.0]);
        let mut t = Trainer::new(3, WeightRule::Fixed, 2, sgd(0.05));
        let mut p = vec![5.0];
        t.run(&mut q, &mut p, 10).unwrap();
        for r in t.records() {
            assert!(r.sigma_alpha.iter().all(|&w| w == 1.0 / 3.0));
            assert_eq!(r.lambda, 0.0);
        }
    }

    #[test]
    fn group_dro_moves_toward_high_loss() {
        let eval = GroupEval { losses: vec![0.1, 5.0], grads: GradMatrix::from_rows(&[[0.0], [0.0]]) };
        let mut t = Trainer::new(2, WeightRule::group_dro(2, 0.1), 1, sgd(0.1));
        let mut p = vec![0.0];
        let mut last = 0.5;
        for _ in 0..20 {
            t.step(&mut p, &eval).unwrap();
            let w = t.weights()[1];
            assert!(w > last);
            last = w;
        }
        // equal losses keep q uniform
        let eq = GroupEval { losses: vec![1.0, 1.0], grads: GradMatrix::from_rows(&[[0.0], [0.0]]) };
        let mut t = Trainer::new(2, WeightRule::group_dro(2, 0.1), 1, sgd(0.1));
        t.step(&mut p, &eq).unwrap();
        assert_eq!(t.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn divergence_aborts_with_trajectory() {
        let mut t = Trainer::new(1, WeightRule::Fixed, 1, sgd(0.1));
        let mut p = vec![0.0];
        let ok = GroupEval { losses: vec![1.0], grads: GradMatrix::from_rows(&[[1.0]]) };
        t.step(&mut p, &ok).unwrap();
        let bad = GroupEval { losses: vec![51.0], grads: GradMatrix::from_rows(&[[1.0]]) };
        match t.step(&mut p, &bad) {
            Err(TrainError::Diverged(d)) => {
                assert_eq!(d.iter, 2);
                assert_eq!(d.trajectory.len(), 1);
            }
            other => panic!("{other:?}"),
        }
        let nan = GroupEval { losses: vec![f64::NAN], grads: GradMatrix::from_rows(&[[1.0]]) };
        assert!(matches!(t.step(&mut p, &nan), Err(TrainError::Diverged(_))));
    }

    #[test]
    fn adam_moves_against_gradient_sign() {
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.01, 0.0);
        let mut p = [1.0, 1.0];
        o.apply(&mut p, &[3.0, -0.001]);
        // first Adam step has magnitude ~lr regardless of gradient scale
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] - 1.01).abs() < 1e-4);
        assert_eq!(o.info().steps, 1);
    }
}
