//! Invariants of the numeric kernels and of trajectory optimization.

mod common;

use common::{random_point, random_trajectory, tiny_models};
use latent_walk::autodiff::{kl_to_uniform, softmax, Graph, Tensor};
use latent_walk::plan::{
    evaluate_objective, init_linear, loss_dist, optimize_trajectory, LossWeights, PlanModels, TermScales,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_shift_invariant(xs in prop::collection::vec(-50.0f64..50.0, 1..12), c in -500.0f64..500.0) {
        let a = softmax(&Tensor::vector(xs.clone()));
        let b = softmax(&Tensor::vector(xs.iter().map(|v| v + c).collect()));
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
        prop_assert!(a.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn kl_to_uniform_non_negative(xs in prop::collection::vec(-30.0f64..30.0, 1..20)) {
        let p = softmax(&Tensor::vector(xs));
        prop_assert!(kl_to_uniform(&p) >= 0.0);
    }

    #[test]
    fn kl_to_uniform_zero_on_uniform(n in 1usize..500) {
        let p = Tensor::full(vec![n], 1.0 / n as f64);
        prop_assert_eq!(kl_to_uniform(&p), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn endpoints_pinned(
        seed in any::<u64>(),
        steps in 0usize..15,
        lambda_id in 0.0f64..3.0,
        lambda_class in 0.0f64..3.0,
        lr in 1e-3f64..0.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = tiny_models(3, 2, 3, 3, &mut rng);
        let models = PlanModels { generator: &m.generator, identity: &m.identity, class: &m.class };
        let traj = random_trajectory(5, 3, 0, &mut rng);
        let w = LossWeights { identity: lambda_id, class: lambda_class };
        let (out, trace) = optimize_trajectory(&traj, &models, w, steps, lr).unwrap();
        prop_assert_eq!(out.start(), traj.start());
        prop_assert_eq!(out.end(), traj.end());
        prop_assert_eq!(trace.len(), steps + 1);
    }

    #[test]
    fn pure_distance_trace_non_increasing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = tiny_models(3, 2, 3, 3, &mut rng);
        let models = PlanModels { generator: &m.generator, identity: &m.identity, class: &m.class };
        let traj = random_trajectory(8, 3, 1, &mut rng);
        let (_, trace) = optimize_trajectory(&traj, &models, LossWeights::ZERO, 60, 1e-3).unwrap();
        for w in trace.total.windows(2) {
            prop_assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn default_weights_do_not_end_above_start(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = tiny_models(3, 2, 4, 3, &mut rng);
        let models = PlanModels { generator: &m.generator, identity: &m.identity, class: &m.class };
        let a = random_point(3, 1.0, &mut rng);
        let b = random_point(3, 1.0, &mut rng);
        let traj = init_linear(&a, &b, 10, 1).unwrap();
        let (_, trace) = optimize_trajectory(&traj, &models, LossWeights::default(), 100, 0.1).unwrap();
        prop_assert!(trace.total[100] <= trace.total[0], "{} > {}", trace.total[100], trace.total[0]);
    }

    #[test]
    fn reversal_consistency(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = tiny_models(3, 2, 4, 3, &mut rng);
        let models = PlanModels { generator: &m.generator, identity: &m.identity, class: &m.class };
        let traj = random_trajectory(6, 3, 0, &mut rng);
        let w = LossWeights::default();
        let (fwd, _) = optimize_trajectory(&traj, &models, w, 20, 0.1).unwrap();
        let (bwd, _) = optimize_trajectory(&traj.reversed(), &models, w, 20, 0.1).unwrap();
        let diff = fwd.to_tensor().max_abs_diff(&bwd.reversed().to_tensor());
        prop_assert!(diff < 1e-9, "max difference {}", diff);
    }
}

#[test]
fn pure_distance_fixed_point_is_the_linear_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = tiny_models(4, 2, 3, 3, &mut rng);
    let models = PlanModels { generator: &m.generator, identity: &m.identity, class: &m.class };
    let line = init_linear(&random_point(4, 1.0, &mut rng), &random_point(4, 1.0, &mut rng), 12, 0).unwrap();
    let (out, _) = optimize_trajectory(&line, &models, LossWeights::ZERO, 300, 0.1).unwrap();
    let grad = evaluate_objective(&out, &models, TermScales::from(LossWeights::ZERO))
        .unwrap()
        .interior_grad;
    assert!(grad.norm() < 1e-6, "gradient norm {}", grad.norm());
    let p = out.to_tensor();
    for i in 1..out.len() - 1 {
        for j in 0..4 {
            let lap = 2.0 * p.row(i)[j] - p.row(i - 1)[j] - p.row(i + 1)[j];
            assert!(lap.abs() < 1e-6, "laplace residual {} at ({}, {})", lap, i, j);
        }
    }
    assert!(p.max_abs_diff(&line.to_tensor()) < 1e-6);
}

// Constant-lr Adam orbits the minimum at a radius set by lr instead of
// settling on it, so from a bent start only the gap to the optimum is checked.
#[test]
fn pure_distance_closes_most_of_the_gap_from_a_bent_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = tiny_models(4, 2, 3, 3, &mut rng);
    let models = PlanModels { generator: &m.generator, identity: &m.identity, class: &m.class };
    let traj = random_trajectory(12, 4, 0, &mut rng);
    let optimum = loss_dist(&init_linear(traj.start(), traj.end(), 12, 0).unwrap());
    let (out, _) = optimize_trajectory(&traj, &models, LossWeights::ZERO, 2000, 0.1).unwrap();
    let before = loss_dist(&traj) - optimum;
    let after = loss_dist(&out) - optimum;
    assert!(after >= -1e-9);
    assert!(after < 0.01 * before, "gap {} of initial {}", after, before);
}

#[test]
fn repeated_backward_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::randn(vec![3, 4], 1.0, &mut rng);
    let mut g = Graph::new();
    let p = g.param(x);
    let s = g.softmax(p);
    let k = g.kl_uniform_probs(s);
    let out = g.sum(k);
    g.backward(out).unwrap();
    let first = g.grad(p).unwrap().clone();
    g.backward(out).unwrap();
    assert_eq!(g.grad(p).unwrap(), &first);
}
