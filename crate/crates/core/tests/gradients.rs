//! Autodiff and scaling-gradient checks against finite differences of
//! independent plain-loop implementations.

use debias_core::model::{Mlp, MlpSpec};
use debias_core::moo::{loss_alpha, loss_alpha_grad, softmax};
use debias_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain forward pass: returns the mean (weighted) cross-entropy and every
/// hidden pre-activation, for kink detection.
fn naive_loss(spec: &MlpSpec, p: &[f64], x: &[Vec<f64>], t: &[usize], w: Option<&[f64]>) -> (f64, Vec<f64>) {
    let widths = spec.widths();
    let mut pre = Vec::new();
    let mut total = 0.0;
    for (r, row) in x.iter().enumerate() {
        let mut h = row.clone();
        let mut off = 0;
        for (l, pair) in widths.windows(2).enumerate() {
            let (fi, fo) = (pair[0], pair[1]);
            let wts = &p[off..off + fi * fo];
            let b = &p[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z = b.to_vec();
            for i in 0..fi {
                for j in 0..fo {
                    z[j] += h[i] * wts[i * fo + j];
                }
            }
            if l + 2 < widths.len() {
                pre.extend_from_slice(&z);
                h = z.iter().map(|v| v.max(0.0)).collect();
            } else {
                h = z;
            }
        }
        let m = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += w.map_or(1.0, |w| w[r]) * (lse - h[t[r]]);
    }
    (total / x.len() as f64, pre)
}

fn same_signs(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (*x > 0.0) == (*y > 0.0))
}

struct Case {
    spec: MlpSpec,
    params: Vec<f64>,
    x: Vec<Vec<f64>>,
    t: Vec<usize>,
    w: Option<Vec<f64>>,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let input = rng.random_range(1..6);
    let hidden: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(1..7)).collect();
    let classes = rng.random_range(2..5);
    let spec = MlpSpec::new(input, hidden, classes, rng.random());
    let mlp = Mlp::new(spec.clone()).unwrap();
    let mut params = mlp.init().into_flat();
    for p in params.iter_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let batch = rng.random_range(1..7);
    let x = (0..batch).map(|_| (0..input).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let t = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let w = rng.random_bool(0.5).then(|| (0..batch).map(|_| rng.random_range(0.0..3.0)).collect());
    Case { spec, params, x, t, w }
}

/// Worst relative error over all coordinates where no ReLU changes sign
/// within the FD stencil; also returns how many coordinates were checked.
fn max_fd_error(case: &Case, h: f64) -> (f64, usize) {
    let mlp = Mlp::new(case.spec.clone()).unwrap();
    let xt = Tensor::from_rows(&case.x).unwrap();
    let (loss, grad) = mlp.loss_and_grad(&case.params, &xt, &case.t, case.w.as_deref()).unwrap();
    let (naive, pre0) = naive_loss(&case.spec, &case.params, &case.x, &case.t, case.w.as_deref());
    assert!((loss - naive).abs() <= 1e-12 * naive.abs().max(1.0), "{loss} vs {naive}");
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 0..case.params.len() {
        let mut p = case.params.clone();
        p[k] += h;
        let (lp, prep) = naive_loss(&case.spec, &p, &case.x, &case.t, case.w.as_deref());
        p[k] -= 2.0 * h;
        let (lm, prem) = naive_loss(&case.spec, &p, &case.x, &case.t, case.w.as_deref());
        if !same_signs(&pre0, &prep) || !same_signs(&pre0, &prem) {
            continue;
        }
        let fd = (lp - lm) / (2.0 * h);
        let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-3);
        worst = worst.max(rel);
        checked += 1;
    }
    (worst, checked)
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut total = 0;
    for i in 0..50 {
        let case = random_case(&mut rng);
        let (err, checked) = max_fd_error(&case, 1e-5);
        assert!(err < 1e-5, "case {i}: rel error {err}");
        total += checked;
    }
    assert!(total > 1000, "only {total} coordinates checked");
}

fn alpha_fd_error(rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
    let g: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = g[i].iter().zip(&g[j]).map(|(a, b)| a * b).sum();
        }
    }
    let lambda = rng.random_range(0.0..5.0);
    let c = rng.random_range(0.0..2.0);
    let grad = loss_alpha_grad(&alpha, lambda, c, &losses, &gram);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let mut a = alpha.clone();
        a[k] += h;
        let lp = loss_alpha(&a, lambda, c, &losses, &gram);
        a[k] -= 2.0 * h;
        let lm = loss_alpha(&a, lambda, c, &losses, &gram);
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-3));
    }
    worst
}

#[test]
fn alpha_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [2, 4, 8] {
        for _ in 0..30 {
            let e = alpha_fd_error(&mut rng, n);
            assert!(e < 1e-6, "N={n}: rel error {e}");
        }
    }
}

#[test]
fn alpha_gradient_sums_to_zero() {
    // softmax is shift invariant, so the gradient is orthogonal to 1
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [2, 4, 8] {
        let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let gram: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.1 }).collect();
        let g = loss_alpha_grad(&alpha, 0.7, 1.0, &losses, &gram);
        assert!(g.iter().sum::<f64>().abs() < 1e-14);
        let s = softmax(&alpha);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Backprop of `sum_i w_i l_i / B` equals the weighted sum of per-sample gradients.
    #[test]
    fn weighted_loss_is_linear_in_sample_weights(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_case(&mut rng);
        let mlp = Mlp::new(case.spec.clone()).unwrap();
        let b = case.x.len();
        let w: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..2.0)).collect();
        let xt = Tensor::from_rows(&case.x).unwrap();
        let (_, g) = mlp.loss_and_grad(&case.params, &xt, &case.t, Some(&w)).unwrap();
        let mut acc = vec![0.0; g.len()];
        for (i, wi) in w.iter().enumerate() {
            let xi = Tensor::from_rows(&case.x[i..=i]).unwrap();
            let (_, gi) = mlp.loss_and_grad(&case.params, &xi, &case.t[i..=i], None).unwrap();
            for (a, v) in acc.iter_mut().zip(gi) {
                *a += wi * v / b as f64;
            }
        }
        for (a, v) in acc.iter().zip(&g) {
            prop_assert!((a - v).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, v);
        }
    }

    /// Reordering the rows of a batch leaves loss and gradient unchanged.
    #[test]
    fn batch_row_permutation_invariance(seed in any::<u64>(), rot in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_case(&mut rng);
        let mlp = Mlp::new(case.spec.clone()).unwrap();
        let b = case.x.len();
        let order: Vec<usize> = (0..b).map(|i| (i + rot) % b).rev().collect();
        let x2: Vec<Vec<f64>> = order.iter().map(|&i| case.x[i].clone()).collect();
        let t2: Vec<usize> = order.iter().map(|&i| case.t[i]).collect();
        let w2 = case.w.as_ref().map(|w| order.iter().map(|&i| w[i]).collect::<Vec<_>>());
        let (l1, g1) = mlp.loss_and_grad(&case.params, &Tensor::from_rows(&case.x).unwrap(), &case.t, case.w.as_deref()).unwrap();
        let (l2, g2) = mlp.loss_and_grad(&case.params, &Tensor::from_rows(&x2).unwrap(), &t2, w2.as_deref()).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        for (a, v) in g1.iter().zip(&g2) {
            prop_assert!((a - v).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
