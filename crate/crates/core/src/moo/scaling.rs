//! Softmax group scaling and its Lagrangian update.
//!
//! With `s = softmax(alpha)`, group losses `L` and the Gram matrix `K = G G^T`
//! of per-group gradients (held constant), the scaling objective is
//!
//! ```text
//! L_alpha = s^T L + c * lambda * s^T K s
//! ```
//!
//! `alpha` descends on `L_alpha` through the softmax Jacobian
//! `J = diag(s) - s s^T`; `lambda` ascends by the Pareto residual `s^T K s`.

use alloc::vec;
use alloc::vec::Vec;

use super::gram::quad_form;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&a| libm::exp(a - max)).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `J^T v` for the softmax Jacobian at `s`: `s_i * (v_i - s.v)`.
pub fn softmax_vjp(s: &[f64], v: &[f64]) -> Vec<f64> {
    let sv: f64 = s.iter().zip(v).map(|(a, b)| a * b).sum();
    s.iter().zip(v).map(|(si, vi)| si * (vi - sv)).collect()
}

/// Group-scaling logits, Lagrange multiplier and their step sizes.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalingState {
    pub alpha: Vec<f64>,
    pub lambda: f64,
    /// Update period `U`.
    pub period: usize,
    pub eta1: f64,
    pub eta2: f64,
    /// Weight of the stationarity penalty; 0 drops it.
    pub c: f64,
}

impl ScalingState {
    /// `alpha = 1/N`, so the initial weights are uniform, and `lambda = 0`.
    pub fn new(num_groups: usize, period: usize, eta1: f64, eta2: f64, c: f64) -> Self {
        ScalingState {
            alpha: vec![1.0 / num_groups as f64; num_groups],
            lambda: 0.0,
            period: period.max(1),
            eta1,
            eta2,
            c,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.alpha)
    }
}

/// Value of the scaling objective at logits `alpha`.
pub fn loss_alpha(alpha: &[f64], lambda: f64, c: f64, losses: &[f64], gram: &[f64]) -> f64 {
    let s = softmax(alpha);
    let first: f64 = s.iter().zip(losses).map(|(a, b)| a * b).sum();
    first + c * lambda * quad_form(gram, &s)
}

/// Analytic gradient of [`loss_alpha`] with respect to `alpha`.
pub fn loss_alpha_grad(alpha: &[f64], lambda: f64, c: f64, losses: &[f64], gram: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    let s = softmax(alpha);
    // d/ds = L + 2 c lambda K s
    let mut v = losses.to_vec();
    for i in 0..n {
        let ks: f64 = (0..n).map(|j| gram[i * n + j] * s[j]).sum();
        v[i] += 2.0 * c * lambda * ks;
    }
    softmax_vjp(&s, &v)
}

/// What one scaling update saw and did.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaStep {
    /// Weights before the update.
    pub weights_before: Vec<f64>,
    /// Pareto residual `s^T K s` at the pre-update weights.
    pub residual: f64,
    /// `L_alpha` at the pre-update state.
    pub loss_alpha: f64,
    /// Penalty part `c * lambda * residual` at the pre-update state.
    pub penalty: f64,
    pub grad_alpha: Vec<f64>,
}

/// One joint scaling update: `alpha -= eta2 * dL_alpha/dalpha`, then
/// `lambda += eta2 * residual`, both read at the pre-update `alpha`.
///
/// With a single group the softmax is constant and `alpha` does not move.
pub fn alpha_lambda_step(state: &mut ScalingState, losses: &[f64], gram: &[f64]) -> AlphaStep {
    let weights_before = state.weights();
    let residual = quad_form(gram, &weights_before);
    let la = loss_alpha(&state.alpha, state.lambda, state.c, losses, gram);
    let grad = loss_alpha_grad(&state.alpha, state.lambda, state.c, losses, gram);
    let penalty = state.c * state.lambda * residual;
    for (a, g) in state.alpha.iter_mut().zip(&grad) {
        *a -= state.eta2 * g;
    }
    state.lambda += state.eta2 * residual;
    AlphaStep { weights_before, residual, loss_alpha: la, penalty, grad_alpha: grad }
}
