//! Min-norm point in the convex hull of group gradients.
//!
//! Minimises `w^T K w` over the simplex with Frank-Wolfe on the Gram matrix
//! `K`. Toward-vertex steps use the exact two-point line search
//! `gamma* = clip((v2.v2 - v1.v2) / |v1 - v2|^2, 0, 1)`; away steps (moving
//! mass off the worst support vertex) keep convergence linear when the
//! minimiser sits inside a face.

use alloc::vec;
use alloc::vec::Vec;

use super::gram::{pareto_residual, quad_form};

const MAX_ITERS: usize = 20_000;
const GAP_TOL: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct MgdaSolution {
    pub weights: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Weight on `v1` minimising `|gamma v1 + (1 - gamma) v2|^2`, from the three
/// inner products.
pub fn min_norm_pair(v1v1: f64, v1v2: f64, v2v2: f64) -> f64 {
    let denom = v1v1 + v2v2 - 2.0 * v1v2;
    if denom <= 0.0 {
        return 1.0;
    }
    ((v2v2 - v1v2) / denom).clamp(0.0, 1.0)
}

/// Minimum-norm convex combination for the `n x n` Gram matrix `gram`.
pub fn mgda_solve(gram: &[f64], n: usize) -> MgdaSolution {
    assert_eq!(gram.len(), n * n, "gram must be n x n");
    if n == 0 {
        return MgdaSolution { weights: Vec::new(), residual: 0.0, iterations: 0 };
    }
    if n == 1 {
        return MgdaSolution { weights: vec![1.0], residual: pareto_residual(gram, &[1.0]), iterations: 0 };
    }
    let kk = |i: usize, j: usize| gram[i * n + j];
    if n == 2 {
        let g = min_norm_pair(kk(0, 0), kk(0, 1), kk(1, 1));
        let w = vec![g, 1.0 - g];
        let residual = pareto_residual(gram, &w);
        return MgdaSolution { weights: w, residual, iterations: 1 };
    }

    // Start from the shortest single gradient.
    let start = (0..n).min_by(|&a, &b| kk(a, a).total_cmp(&kk(b, b))).unwrap_or(0);
    let mut w = vec![0.0; n];
    w[start] = 1.0;
    let mut kw = vec![0.0; n];

    let mut iterations = 0;
    for it in 0..MAX_ITERS {
        iterations = it + 1;
        for (i, k) in kw.iter_mut().enumerate() {
            *k = (0..n).map(|j| kk(i, j) * w[j]).sum();
        }
        let wkw: f64 = w.iter().zip(&kw).map(|(a, b)| a * b).sum();
        let toward = (0..n).min_by(|&a, &b| kw[a].total_cmp(&kw[b])).unwrap_or(0);
        let away = (0..n).filter(|&i| w[i] > 0.0).max_by(|&a, &b| kw[a].total_cmp(&kw[b])).unwrap_or(0);

        let fw_gap = wkw - kw[toward];
        let away_gap = kw[away] - wkw;
        if fw_gap.max(away_gap) <= GAP_TOL * wkw.abs().max(1.0) {
            break;
        }

        if fw_gap >= away_gap {
            // w <- gamma * w + (1 - gamma) * e_toward
            let gamma = min_norm_pair(wkw, kw[toward], kk(toward, toward));
            if gamma >= 1.0 {
                break;
            }
            for v in w.iter_mut() {
                *v *= gamma;
            }
            w[toward] += 1.0 - gamma;
        } else {
            // w <- w + step * (w - e_away), step in [0, w_a / (1 - w_a)]
            let wa = w[away];
            let max_step = if wa < 1.0 { wa / (1.0 - wa) } else { f64::INFINITY };
            // d = w - e_a; d^T K w = wkw - kw[a]; d^T K d = wkw - 2 kw[a] + K_aa
            let dkw = wkw - kw[away];
            let dkd = wkw - 2.0 * kw[away] + kk(away, away);
            let step = if dkd > 0.0 { (-dkw / dkd).min(max_step) } else { max_step };
            if step <= 0.0 || !step.is_finite() {
                break;
            }
            for v in w.iter_mut() {
                *v *= 1.0 + step;
            }
            w[away] -= step;
            if step >= max_step {
                w[away] = 0.0;
            }
        }
        // Guard against drift off the simplex.
        for v in w.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= s;
        }
    }
    let residual = quad_form(gram, &w).max(0.0);
    MgdaSolution { weights: w, residual, iterations }
}
