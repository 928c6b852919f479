//! Reverse-mode gradients against central finite differences (step 1e-5).

mod common;

use common::{random_trajectory, tiny_models, with_interior};
use latent_walk::autodiff::{numeric_gradient, relative_error, Activation, Graph, Mlp, Tensor};
use latent_walk::models::ImageClassifier;
use latent_walk::plan::{evaluate_objective, loss_class, loss_dist, loss_id, LossWeights, PlanModels, TermScales};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(100)
}

/// Gradient of `f(graph, x)` (a scalar node) with respect to a parameter `x`.
fn graph_grad(x: &Tensor, f: impl Fn(&mut Graph, latent_walk::autodiff::NodeId) -> latent_walk::autodiff::NodeId) -> (f64, Tensor) {
    let mut g = Graph::new();
    let p = g.param(x.clone());
    let out = f(&mut g, p);
    g.backward(out).unwrap();
    (g.value(out).item(), g.grad_or_zeros(p))
}

fn graph_value(x: &Tensor, f: &impl Fn(&mut Graph, latent_walk::autodiff::NodeId) -> latent_walk::autodiff::NodeId) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(x.clone());
    let out = f(&mut g, p);
    g.value(out).item()
}

fn check_op(x: &Tensor, f: impl Fn(&mut Graph, latent_walk::autodiff::NodeId) -> latent_walk::autodiff::NodeId) -> f64 {
    let (_, analytic) = graph_grad(x, &f);
    let numeric = numeric_gradient(x, STEP, |t| graph_value(t, &f));
    relative_error(&analytic, &numeric, FLOOR)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn mlp_input_gradient(seed in any::<u64>(), tanh in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Leaky ReLU kinks are measure-zero; tanh covers the smooth case.
        let act = if tanh { Activation::Tanh } else { Activation::LeakyRelu };
        let net = Mlp::new(&[5, 7, 3], act, &mut rng);
        let x = Tensor::randn(vec![4, 5], 1.0, &mut rng);
        let err = check_op(&x, |g, p| {
            let y = net.forward(g, p, false).unwrap().output;
            g.sum(y)
        });
        prop_assert!(err < TOL, "relative error {}", err);
    }

    #[test]
    fn kl_to_uniform_on_probabilities(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // A random interior point of the simplex.
        let raw = Tensor::randn(vec![1, 5], 1.0, &mut rng).map(f64::exp);
        let s = raw.sum();
        let p = raw.map(|v| v / s);
        let err = check_op(&p, |g, x| {
            let kl = g.kl_uniform_probs(x);
            g.sum(kl)
        });
        prop_assert!(err < TOL, "relative error {}", err);
    }

    #[test]
    fn kl_to_uniform_from_logits(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(vec![3, 6], 2.0, &mut rng);
        let err = check_op(&x, |g, p| {
            let kl = g.kl_uniform_logits(p);
            g.sum(kl)
        });
        prop_assert!(err < TOL, "relative error {}", err);
    }

    #[test]
    fn cross_entropy_gradient(seed in any::<u64>(), t0 in 0usize..4, t1 in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(vec![2, 4], 2.0, &mut rng);
        let err = check_op(&x, |g, p| {
            let ce = g.cross_entropy(p, &[t0, t1]).unwrap();
            g.sum(ce)
        });
        prop_assert!(err < TOL, "relative error {}", err);
    }

    #[test]
    fn softmax_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(vec![2, 4], 2.0, &mut rng);
        let w = Tensor::randn(vec![2, 4], 1.0, &mut rng);
        let err = check_op(&x, |g, p| {
            let s = g.softmax(p);
            let c = g.constant(w.clone());
            let m = g.mul(s, c).unwrap();
            g.sum(m)
        });
        prop_assert!(err < TOL, "relative error {}", err);
    }

    #[test]
    fn plan_losses_match_finite_differences(
        seed in any::<u64>(),
        t in 3usize..7,
        lambda_id in 0.0f64..2.0,
        lambda_class in 0.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, n_classes, n_id) = (3, 2, 4);
        let m = tiny_models(d, n_classes, n_id, 3, &mut rng);
        let y = (seed % n_classes as u64) as usize;
        let traj = random_trajectory(t, d, y, &mut rng);
        let models = PlanModels { generator: &m.generator, identity: &m.identity, class: &m.class };
        let x0 = traj.interior();

        let single = [
            TermScales { dist: 1.0, identity: 0.0, class: 0.0 },
            TermScales { dist: 0.0, identity: 1.0, class: 0.0 },
            TermScales { dist: 0.0, identity: 0.0, class: 1.0 },
            TermScales::from(LossWeights { identity: lambda_id, class: lambda_class }),
        ];
        for scales in single {
            let analytic = evaluate_objective(&traj, &models, scales).unwrap().interior_grad;
            let numeric = numeric_gradient(&x0, STEP, |x| {
                let tr = with_interior(&traj, x);
                scales.dist * loss_dist(&tr)
                    + scales.identity * loss_id(&tr, &m.generator, &m.identity).unwrap()
                    + scales.class * loss_class(&tr, &m.generator, &m.class, y).unwrap()
            });
            let err = relative_error(&analytic, &numeric, FLOOR);
            prop_assert!(err < TOL, "{:?}: relative error {}", scales, err);
        }
    }
}

#[test]
fn objective_value_matches_loss_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = tiny_models(3, 2, 4, 3, &mut rng);
    let traj = random_trajectory(6, 3, 1, &mut rng);
    let models = PlanModels { generator: &m.generator, identity: &m.identity, class: &m.class };
    let w = LossWeights::default();
    let terms = evaluate_objective(&traj, &models, w.into()).unwrap().terms;
    let id = loss_id(&traj, &m.generator, &m.identity).unwrap();
    let class = loss_class(&traj, &m.generator, &m.class, 1).unwrap();
    assert!((terms.dist - loss_dist(&traj)).abs() < 1e-12);
    assert!((terms.identity - id).abs() < 1e-12);
    assert!((terms.class - class).abs() < 1e-12);
    assert!((terms.total - (terms.dist + w.identity * id + w.class * class)).abs() < 1e-12);
    assert_eq!(m.identity.n_outputs(), 4);
}
