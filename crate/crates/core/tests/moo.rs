//! Min-norm solver against brute force, trainer invariants, and the convex toy.

use debias_core::moo::{
    loss_alpha_grad, mgda_solve, pareto_residual, quad_form, softmax, GradMatrix, GroupObjectives, Optimizer,
    OptimizerKind, QuadraticObjectives, ScalingState, Trainer, WeightRule,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grads(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> GradMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    GradMatrix::from_rows(&rows)
}

/// Minimum of `w^T K w` over a simplex grid with spacing `1/steps`.
fn grid_min(gram: &[f64], n: usize, steps: usize) -> f64 {
    let h = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    match n {
        2 => {
            for i in 0..=steps {
                let a = i as f64 * h;
                best = best.min(quad_form(gram, &[a, 1.0 - a]));
            }
        }
        3 => {
            let (k00, k01, k02, k11, k12, k22) = (gram[0], gram[1], gram[2], gram[4], gram[5], gram[8]);
            for i in 0..=steps {
                let a = i as f64 * h;
                for j in 0..=(steps - i) {
                    let b = j as f64 * h;
                    let c = 1.0 - a - b;
                    let v = k00 * a * a + k11 * b * b + k22 * c * c + 2.0 * (k01 * a * b + k02 * a * c + k12 * b * c);
                    best = best.min(v);
                }
            }
        }
        _ => unreachable!(),
    }
    best
}

#[test]
fn mgda_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [2, 3] {
        for case in 0..6 {
            let dim = rng.random_range(1..5);
            let g = random_grads(&mut rng, n, dim);
            let gram = g.gram();
            let s = mgda_solve(&gram, n);
            let brute = grid_min(&gram, n, 10_000);
            assert!((s.residual - brute).abs() < 1e-6, "N={n} case {case}: {} vs {brute}", s.residual);
            assert!(s.residual <= brute + 1e-12);
        }
    }
}

#[test]
fn closed_form_two_groups() {
    let g = GradMatrix::from_rows(&[[2.0, 0.0], [0.0, 1.0]]);
    let s = mgda_solve(&g.gram(), 2);
    assert!((s.weights[0] - 0.2).abs() < 1e-12 && (s.weights[1] - 0.8).abs() < 1e-12);
}

#[test]
fn gram_trick_matches_direct_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let n = rng.random_range(1..7);
        let dim = rng.random_range(1..20);
        let g = random_grads(&mut rng, n, dim);
        let w = softmax(&(0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
        let direct: f64 = g.combine(&w).iter().map(|v| v * v).sum();
        let via = pareto_residual(&g.gram(), &w);
        assert!((direct - via).abs() <= 1e-12 * direct.max(1.0));
    }
}

fn sgd(lr: f64) -> Optimizer {
    Optimizer::new(OptimizerKind::Sgd, lr, 0.0)
}

#[test]
fn convex_toy_reaches_pareto_segment() {
    let mut obj = QuadraticObjectives::new(vec![vec![0.0, 0.0], vec![2.0, 1.0]], vec![1.0, 3.0]);
    let rule = WeightRule::Adaptive(ScalingState::new(2, 1, 0.05, 0.05, 1.0));
    let mut tr = Trainer::new(2, rule, 1, sgd(0.05)).with_divergence_threshold(1e6);
    let mut theta = vec![-3.0, 4.0];
    let eval = tr.run(&mut obj, &mut theta, 5000).unwrap();
    let residual = pareto_residual(&eval.grads.gram(), tr.weights());
    assert!(residual < 1e-4, "residual {residual}");
    let d = obj.distance_to_segment(&theta);
    assert!(d < 1e-3, "distance {d}");
    for r in tr.records() {
        let s: f64 = r.sigma_alpha.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mgda_only_reaches_pareto_segment() {
    let mut obj = QuadraticObjectives::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![1.0, 1.0]);
    let mut tr = Trainer::new(2, WeightRule::Mgda, 1, sgd(0.1));
    let mut theta = vec![3.0, 3.0, 3.0];
    tr.run(&mut obj, &mut theta, 2000).unwrap();
    assert!(obj.distance_to_segment(&theta) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// sigma stays on the simplex and lambda never decreases, whatever the inputs.
    #[test]
    fn scaling_updates_keep_invariants(seed in any::<u64>(), n in 2usize..7, period in 1usize..4, eta2 in 1e-4f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let curv: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let mut obj = QuadraticObjectives::new(centers, curv);
        let rule = WeightRule::Adaptive(ScalingState::new(n, period, 0.05, eta2, 1.0));
        let mut tr = Trainer::new(n, rule, period, sgd(0.05));
        let mut theta: Vec<f64> = (0..obj.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        tr.run(&mut obj, &mut theta, 40).unwrap();
        let mut last = 0.0;
        prop_assert_eq!(tr.records().len(), 40 / period);
        for r in tr.records() {
            let s: f64 = r.sigma_alpha.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(r.sigma_alpha.iter().all(|&w| w >= 0.0));
            prop_assert!(r.lambda >= last);
            last = r.lambda;
        }
    }

    /// The min-norm weights beat every vertex and every random simplex point.
    #[test]
    fn mgda_is_minimal(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..8);
        let g = random_grads(&mut rng, n, dim);
        let gram = g.gram();
        let s = mgda_solve(&gram, n);
        prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.weights.iter().all(|&w| w >= 0.0));
        for i in 0..n {
            prop_assert!(s.residual <= gram[i * n + i] + 1e-12);
        }
        for _ in 0..20 {
            let w = softmax(&(0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            prop_assert!(s.residual <= quad_form(&gram, &w) + 1e-9);
        }
    }

    /// Equal losses and no penalty leave alpha where it is.
    #[test]
    fn equal_losses_give_zero_alpha_gradient(n in 2usize..8, l in 0.0f64..5.0) {
        let alpha: Vec<f64> = (0..n).map(|i| i as f64 * 0.3).collect();
        let g = loss_alpha_grad(&alpha, 0.0, 1.0, &vec![l; n], &vec![0.0; n * n]);
        prop_assert!(g.iter().all(|v| v.abs() < 1e-14));
    }
}
