//! ReLU multilayer perceptron over a flat parameter vector.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, ParamId, ParamLayout, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpSpec {
    pub input_dim: usize,
    /// Empty for multinomial logistic regression.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize, seed: u64) -> Self {
        MlpSpec { input_dim, hidden_dims, num_classes, seed }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.input_dim == 0 || self.num_classes < 2 || self.hidden_dims.contains(&0) {
            return Err(AutodiffError::ShapeMismatch {
                op: "mlp_spec",
                detail: format!(
                    "input_dim {} hidden {:?} classes {}",
                    self.input_dim, self.hidden_dims, self.num_classes
                ),
            });
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }

    pub fn layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::new();
        for (i, pair) in self.widths().windows(2).enumerate() {
            layout.push(format!("layer{i}.weight"), &[pair[0], pair[1]]);
            layout.push(format!("layer{i}.bias"), &[pair[1]]);
        }
        layout
    }
}

/// Model parameters: one flat vector plus the layout that slices it into
/// per-layer weight and bias tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    layout: ParamLayout,
    flat: Vec<f64>,
}

impl Parameters {
    pub fn from_flat(layout: ParamLayout, flat: Vec<f64>) -> Result<Self, AutodiffError> {
        if flat.len() != layout.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "parameters",
                detail: format!("layout needs {} values, got {}", layout.len(), flat.len()),
            });
        }
        Ok(Parameters { layout, flat })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn view(&self, id: ParamId) -> &[f64] {
        self.layout.view(id, &self.flat)
    }

    pub fn view_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.layout.view_mut(id, &mut self.flat)
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layout: ParamLayout,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self, AutodiffError> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(Mlp { spec, layout })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_layers(&self) -> usize {
        self.spec.hidden_dims.len() + 1
    }

    pub fn weight_id(&self, layer: usize) -> ParamId {
        ParamId(2 * layer)
    }

    pub fn bias_id(&self, layer: usize) -> ParamId {
        ParamId(2 * layer + 1)
    }

    /// He-uniform weights, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, and zero biases.
    pub fn init(&self) -> Parameters {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let mut flat = vec![0.0; self.layout.len()];
        for layer in 0..self.num_layers() {
            let slot = self.layout.slot(self.weight_id(layer));
            let bound = libm::sqrt(6.0 / slot.shape[0] as f64);
            for w in &mut flat[slot.range()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Parameters { layout: self.layout.clone(), flat }
    }

    pub fn zeros(&self) -> Parameters {
        Parameters { layout: self.layout.clone(), flat: vec![0.0; self.layout.len()] }
    }

    /// Records the forward pass for `batch` (`B x input_dim`) and returns the logits node.
    pub fn forward(&self, params: &[f64], batch: &Tensor, tape: &mut Tape) -> Result<Var, AutodiffError> {
        if batch.shape().len() != 2 || batch.shape()[1] != self.spec.input_dim {
            return Err(AutodiffError::ShapeMismatch {
                op: "mlp_forward",
                detail: format!("batch {:?} for input_dim {}", batch.shape(), self.spec.input_dim),
            });
        }
        let mut h = tape.constant(batch.clone())?;
        for layer in 0..self.num_layers() {
            let w = tape.param(&self.layout, self.weight_id(layer), params)?;
            let b = tape.param(&self.layout, self.bias_id(layer), params)?;
            let z = tape.matmul(h, w)?;
            h = tape.add_bias(z, b)?;
            if layer + 1 < self.num_layers() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Logits without keeping the tape.
    pub fn logits(&self, params: &[f64], batch: &Tensor) -> Result<Tensor, AutodiffError> {
        let mut tape = Tape::new(self.layout.len());
        let out = self.forward(params, batch, &mut tape)?;
        Ok(tape.value(out).clone())
    }

    /// Argmax class per row, ties to the lowest class index.
    pub fn predict(&self, params: &[f64], batch: &Tensor) -> Result<Vec<usize>, AutodiffError> {
        let logits = self.logits(params, batch)?;
        Ok((0..logits.rows()).map(|r| logits.argmax_row(r)).collect())
    }

    /// Mean (optionally weighted) cross-entropy of `batch` against `targets`, with its gradient.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        batch: &Tensor,
        targets: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>), AutodiffError> {
        let mut tape = Tape::new(self.layout.len());
        let logits = self.forward(params, batch, &mut tape)?;
        let logp = tape.log_softmax(logits)?;
        let loss = tape.nll_loss(logp, targets, weights)?;
        let value = tape.value(loss).data()[0];
        let grad = tape.backward(loss)?;
        Ok((value, grad.into_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(MlpSpec::new(4, vec![3], 2, 0).layout().len(), 4 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(MlpSpec::new(4, vec![3], 2, 0).layout().len(), 23);
        assert_eq!(MlpSpec::new(2, vec![], 2, 0).layout().len(), 6);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let mlp = Mlp::new(MlpSpec::new(5, vec![7, 4], 3, 42)).unwrap();
        let a = mlp.init();
        let b = mlp.init();
        assert_eq!(a.flat(), b.flat());
        for layer in 0..mlp.num_layers() {
            assert!(a.view(mlp.bias_id(layer)).iter().all(|&v| v == 0.0));
        }
        let other = Mlp::new(MlpSpec::new(5, vec![7, 4], 3, 43)).unwrap().init();
        assert_ne!(a.flat(), other.flat());
    }

    #[test]
    fn flat_and_views_alias() {
        let mlp = Mlp::new(MlpSpec::new(2, vec![2], 2, 1)).unwrap();
        let mut p = mlp.init();
        p.view_mut(mlp.bias_id(1))[1] = 9.0;
        assert_eq!(p.flat()[p.len() - 1], 9.0);
        p.flat_mut()[0] = -3.0;
        assert_eq!(p.view(mlp.weight_id(0))[0], -3.0);
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let mlp = Mlp::new(MlpSpec::new(2, vec![], 2, 0)).unwrap();
        let p = mlp.zeros();
        let x = Tensor::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let logits = mlp.logits(p.flat(), &x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        assert_eq!(mlp.predict(p.flat(), &x).unwrap(), vec![0, 0]);
    }

    #[test]
    fn identity_weights_recover_one_hot_index() {
        let mlp = Mlp::new(MlpSpec::new(3, vec![], 3, 0)).unwrap();
        let mut p = mlp.zeros();
        let w = p.view_mut(mlp.weight_id(0));
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(mlp.predict(p.flat(), &x).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn duplicate_rows_give_duplicate_logits() {
        let mlp = Mlp::new(MlpSpec::new(3, vec![5], 4, 3)).unwrap();
        let p = mlp.init();
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]]).unwrap();
        let l = mlp.logits(p.flat(), &x).unwrap();
        assert_eq!(l.row(0), l.row(1));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mlp = Mlp::new(MlpSpec::new(3, vec![5], 4, 3)).unwrap();
        let p = mlp.init();
        let x = Tensor::zeros(&[2, 4]);
        assert!(mlp.logits(p.flat(), &x).is_err());
    }

    #[test]
    fn invalid_spec() {
        assert!(Mlp::new(MlpSpec::new(3, vec![0], 4, 3)).is_err());
        assert!(Mlp::new(MlpSpec::new(3, vec![], 1, 3)).is_err());
    }
}
