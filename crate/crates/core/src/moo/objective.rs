//! Per-group losses and gradients.

use alloc::vec::Vec;

use super::gram::GradMatrix;
use super::TrainError;
use crate::data::Dataset;
use crate::model::Mlp;

/// Losses `L_n` and gradients `grad L_n` of every group at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupEval {
    pub losses: Vec<f64>,
    pub grads: GradMatrix,
}

impl GroupEval {
    pub fn num_groups(&self) -> usize {
        self.losses.len()
    }
}

/// A vector of objectives over a shared parameter vector.
pub trait GroupObjectives {
    fn num_groups(&self) -> usize;
    fn num_params(&self) -> usize;
    fn evaluate(&mut self, params: &[f64]) -> Result<GroupEval, TrainError>;
}

/// Mean cross-entropy of every group's sub-batch, each on its own tape.
pub fn compute_group_losses(
    model: &Mlp,
    params: &[f64],
    data: &Dataset,
    batches: &[Vec<usize>],
) -> Result<GroupEval, TrainError> {
    let mut losses = Vec::with_capacity(batches.len());
    let mut grads = GradMatrix::new(params.len());
    for (n, idx) in batches.iter().enumerate() {
        if idx.is_empty() {
            return Err(TrainError::EmptyGroupBatch { group: n });
        }
        let (x, t) = data.batch(idx)?;
        let (loss, grad) = model.loss_and_grad(params, &x, &t, None)?;
        losses.push(loss);
        grads.push(&grad);
    }
    Ok(GroupEval { losses, grads })
}

/// `L_i(theta) = (k_i / 2) * |theta - a_i|^2`.
///
/// For isotropic quadratics the Pareto set is the convex hull of the
/// minimisers `a_i`; with two objectives, the segment `[a_1, a_2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticObjectives {
    pub centers: Vec<Vec<f64>>,
    pub curvatures: Vec<f64>,
}

impl QuadraticObjectives {
    pub fn new(centers: Vec<Vec<f64>>, curvatures: Vec<f64>) -> Self {
        assert_eq!(centers.len(), curvatures.len(), "one curvature per center");
        assert!(!centers.is_empty(), "need at least one objective");
        let dim = centers[0].len();
        assert!(centers.iter().all(|c| c.len() == dim), "centers share a dimension");
        QuadraticObjectives { centers, curvatures }
    }

    /// Distance from `theta` to the segment between the first two centers.
    pub fn distance_to_segment(&self, theta: &[f64]) -> f64 {
        let a = &self.centers[0];
        let b = &self.centers[1];
        let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        let len2: f64 = ab.iter().map(|v| v * v).sum();
        let t = if len2 > 0.0 {
            let proj: f64 = theta.iter().zip(a).zip(&ab).map(|((p, x), d)| (p - x) * d).sum();
            (proj / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d2: f64 = theta.iter().zip(a).zip(&ab).map(|((p, x), d)| (p - x - t * d) * (p - x - t * d)).sum();
        libm::sqrt(d2)
    }
}

impl GroupObjectives for QuadraticObjectives {
    fn num_groups(&self) -> usize {
        self.centers.len()
    }

    fn num_params(&self) -> usize {
        self.centers[0].len()
    }

    fn evaluate(&mut self, params: &[f64]) -> Result<GroupEval, TrainError> {
        let mut losses = Vec::with_capacity(self.centers.len());
        let mut grads = GradMatrix::new(params.len());
        for (a, &k) in self.centers.iter().zip(&self.curvatures) {
            let diff: Vec<f64> = params.iter().zip(a).map(|(p, c)| p - c).collect();
            losses.push(0.5 * k * diff.iter().map(|d| d * d).sum::<f64>());
            let g: Vec<f64> = diff.iter().map(|d| k * d).collect();
            grads.push(&g);
        }
        Ok(GroupEval { losses, grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpSpec;
    use alloc::vec;

    #[test]
    fn uniform_logits_give_ln2() {
        let mlp = Mlp::new(MlpSpec::new(3, vec![], 2, 0)).unwrap();
        let params = mlp.zeros();
        let mut d = Dataset::new(2, vec![2], 3);
        for i in 0..6 {
            d.push(&[i as f64, 1.0, -2.0], i % 2, &[i % 2]).unwrap();
        }
        let eval = compute_group_losses(&mlp, params.flat(), &d, &[vec![0, 1], vec![2, 3, 4]]).unwrap();
        for l in &eval.losses {
            assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
        }
        // duplicated group data gives equal losses and gradients
        let eval = compute_group_losses(&mlp, mlp.init().flat(), &d, &[vec![0, 1], vec![0, 1]]).unwrap();
        assert_eq!(eval.losses[0], eval.losses[1]);
        assert_eq!(eval.grads.row(0), eval.grads.row(1));
    }

    #[test]
    fn empty_sub_batch_rejected() {
        let mlp = Mlp::new(MlpSpec::new(1, vec![], 2, 0)).unwrap();
        let d = Dataset::new(2, vec![2], 1);
        let r = compute_group_losses(&mlp, mlp.zeros().flat(), &d, &[vec![]]);
        assert!(matches!(r, Err(TrainError::EmptyGroupBatch { group: 0 })));
    }

    #[test]
    fn quadratic_gradients_and_segment_distance() {
        let mut q = QuadraticObjectives::new(vec![vec![0.0, 0.0], vec![2.0, 0.0]], vec![1.0, 3.0]);
        let e = q.evaluate(&[1.0, 1.0]).unwrap();
        assert_eq!(e.losses, vec![1.0, 3.0]);
        assert_eq!(e.grads.row(0), &[1.0, 1.0]);
        assert_eq!(e.grads.row(1), &[-3.0, 3.0]);
        assert!((q.distance_to_segment(&[1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!((q.distance_to_segment(&[3.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(q.distance_to_segment(&[0.5, 0.0]), 0.0);
    }
}
