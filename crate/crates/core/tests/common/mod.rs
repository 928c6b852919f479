#![allow(dead_code)]

use latent_walk::autodiff::{Activation, Mlp, Tensor};
use latent_walk::models::{Generator, LatentPoint};
use latent_walk::plan::Trajectory;
use rand::Rng;
use rand_distr::StandardNormal;

/// Small smooth models, so finite differences never straddle a kink.
pub struct TinyModels {
    pub generator: Generator,
    pub identity: Mlp,
    pub class: Mlp,
}

pub fn tiny_models<R: Rng>(d: usize, n_classes: usize, n_id: usize, side: usize, rng: &mut R) -> TinyModels {
    let p = side * side;
    TinyModels {
        generator: Generator {
            net: Mlp::new(&[d + n_classes, 8, p], Activation::Tanh, rng),
            latent_dim: d,
            n_classes,
            side,
        },
        identity: Mlp::new(&[p, 6, n_id], Activation::Tanh, rng),
        class: Mlp::new(&[p, 6, n_classes], Activation::Tanh, rng),
    }
}

pub fn random_point<R: Rng>(d: usize, scale: f64, rng: &mut R) -> LatentPoint {
    LatentPoint((0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
}

pub fn random_trajectory<R: Rng>(t: usize, d: usize, class: usize, rng: &mut R) -> Trajectory {
    Trajectory::new((0..t).map(|_| random_point(d, 1.0, rng)).collect(), class).unwrap()
}

/// Trajectory with its interior replaced by the rows of `interior`.
pub fn with_interior(traj: &Trajectory, interior: &Tensor) -> Trajectory {
    let t = traj.len();
    let mut pts = vec![traj.start().clone()];
    pts.extend(interior.row_iter().map(|r| LatentPoint(r.to_vec())));
    pts.push(traj.points()[t - 1].clone());
    Trajectory::new(pts, traj.class_label()).unwrap()
}
