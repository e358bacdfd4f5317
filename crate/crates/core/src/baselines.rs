//! Baseline trainers: ERM, group reweighting/resampling, GroupDRO and the
//! three scaling ablations.
//!
//! All of them run through [`crate::moo::train`] with a different
//! [`Method`]; the functions here are the individual update rules.

use alloc::vec::Vec;

use crate::data::{Dataset, GroupIndex};
use crate::model::Mlp;
use crate::moo::{theta_step, train, GroupEval, Method, TrainConfig, TrainError, TrainOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BaselineKind {
    Erm,
    Upweight,
    Upsample,
    GroupDro,
    FixedAlpha,
    LossOnlyAlpha,
    MgdaOnly,
}

impl BaselineKind {
    pub fn is_ablation(self) -> bool {
        matches!(self, BaselineKind::FixedAlpha | BaselineKind::LossOnlyAlpha | BaselineKind::MgdaOnly)
    }
}

/// One unweighted cross-entropy step on a natural batch. Returns the loss.
pub fn erm_step(model: &Mlp, params: &mut [f64], data: &Dataset, batch: &[usize], eta1: f64) -> Result<f64, TrainError> {
    let (x, t) = data.batch(batch)?;
    let (loss, grad) = model.loss_and_grad(params, &x, &t, None)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { group: 0 });
    }
    for (p, g) in params.iter_mut().zip(&grad) {
        *p -= eta1 * g;
    }
    Ok(loss)
}

/// Per-group weight `M / |group|` (0 for empty groups).
pub fn upweight_group_weights(index: &GroupIndex) -> Vec<f64> {
    let m = index.total() as f64;
    index.sizes().into_iter().map(|s| if s == 0 { 0.0 } else { m / s as f64 }).collect()
}

/// Batch loss with every sample scaled by its group's weight, averaged over
/// the batch, and its gradient. `batch` indexes the split `index` was built on.
pub fn upweight_loss(
    model: &Mlp,
    params: &[f64],
    data: &Dataset,
    batch: &[usize],
    index: &GroupIndex,
) -> Result<(f64, Vec<f64>), TrainError> {
    let gw = upweight_group_weights(index);
    let w: Vec<f64> = batch.iter().map(|&i| gw[index.group_of(i)]).collect();
    let (x, t) = data.batch(batch)?;
    Ok(model.loss_and_grad(params, &x, &t, Some(&w))?)
}

/// Exponentiated-gradient update `q_n <- q_n exp(eta_q L_n) / Z`, then a
/// parameter step on `q^T L`.
pub fn group_dro_step(
    params: &mut [f64],
    eval: &GroupEval,
    q: &mut [f64],
    eta_q: f64,
    eta1: f64,
) -> Result<(), TrainError> {
    for (qn, l) in q.iter_mut().zip(&eval.losses) {
        *qn *= libm::exp(eta_q * l);
    }
    let z: f64 = q.iter().sum();
    for qn in q.iter_mut() {
        *qn /= z;
    }
    theta_step(params, &eval.grads, q, eta1)
}

/// Runs one of the scaling ablations with an otherwise unchanged config.
pub fn ablation_arm(kind: BaselineKind, config: &TrainConfig, data: &crate::data::SplitDataset) -> Result<TrainOutput, TrainError> {
    if !kind.is_ablation() {
        return Err(TrainError::InvalidConfig(alloc::format!("{kind:?} is not an ablation arm")));
    }
    let mut cfg = config.clone();
    cfg.method = Method::from(kind);
    train(&cfg, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MajorityTable, GroupingScheme, TieBreak};
    use crate::model::MlpSpec;
    use crate::moo::GradMatrix;
    use alloc::vec;

    fn toy() -> Dataset {
        let mut d = Dataset::new(2, vec![2], 2);
        for i in 0..1000 {
            let t = i % 2;
            // 50 conflicting samples in class 0
            let b = if t == 0 && i < 100 { 1 } else { t };
            d.push(&[i as f64 / 1000.0, t as f64], t, &[b]).unwrap();
        }
        d
    }

    #[test]
    fn upweight_formula() {
        let d = toy();
        let table = MajorityTable::compute(&d, TieBreak::Error).unwrap();
        let idx = GroupIndex::build(&d, &table, &[0], GroupingScheme::Majority).unwrap();
        assert_eq!(idx.sizes(), vec![50, 950]);
        let w = upweight_group_weights(&idx);
        assert_eq!(w[0], 20.0);
        // single group
        let mut one = Dataset::new(2, vec![1], 1);
        one.push(&[0.0], 0, &[0]).unwrap();
        one.push(&[0.0], 1, &[0]).unwrap();
        let t = MajorityTable::compute(&one, TieBreak::Error).unwrap();
        let i1 = GroupIndex::build(&one, &t, &[0], GroupingScheme::Majority).unwrap();
        assert_eq!(upweight_group_weights(&i1), vec![0.0, 1.0]);
    }

    #[test]
    fn equal_groups_scale_erm_loss() {
        let mut d = Dataset::new(2, vec![2], 2);
        for i in 0..40 {
            let t = i % 2;
            let b = if i % 4 < 2 { t } else { 1 - t };
            d.push(&[i as f64 * 0.1, 1.0], t, &[b]).unwrap();
        }
        let table = MajorityTable::compute(&d, TieBreak::LowestIndex).unwrap();
        let idx = GroupIndex::build(&d, &table, &[0], GroupingScheme::BiasTarget).unwrap();
        assert!(idx.sizes().iter().all(|&s| s == 10));
        let mlp = Mlp::new(MlpSpec::new(2, vec![3], 2, 1)).unwrap();
        let p = mlp.init();
        let batch: Vec<usize> = (0..40).collect();
        let (x, t) = d.batch(&batch).unwrap();
        let (erm, _) = mlp.loss_and_grad(p.flat(), &x, &t, None).unwrap();
        let (uw, _) = upweight_loss(&mlp, p.flat(), &d, &batch, &idx).unwrap();
        assert!((uw - 4.0 * erm).abs() < 1e-12);
    }

    #[test]
    fn erm_zero_lr_is_identity() {
        let d = toy();
        let mlp = Mlp::new(MlpSpec::new(2, vec![4], 2, 3)).unwrap();
        let mut p = mlp.init().into_flat();
        let before = p.clone();
        erm_step(&mlp, &mut p, &d, &[0, 1, 2, 3], 0.0).unwrap();
        assert_eq!(p, before);
        erm_step(&mlp, &mut p, &d, &[0, 1, 2, 3], 0.1).unwrap();
        assert_ne!(p, before);
    }

    #[test]
    fn group_dro_limit_and_symmetry() {
        let mut q = vec![0.25; 4];
        let eval = GroupEval { losses: vec![1.0; 4], grads: GradMatrix::from_rows(&[[0.0], [0.0], [0.0], [0.0]]) };
        let mut p = [0.0];
        group_dro_step(&mut p, &eval, &mut q, 0.5, 0.1).unwrap();
        assert!(q.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let eval = GroupEval { losses: vec![0.1, 0.1, 9.0, 0.1], grads: GradMatrix::from_rows(&[[0.0], [0.0], [0.0], [0.0]]) };
        let mut last = q[2];
        for _ in 0..50 {
            group_dro_step(&mut p, &eval, &mut q, 0.5, 0.1).unwrap();
            assert!(q[2] >= last);
            last = q[2];
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(q[2] > 0.999);
    }
}
