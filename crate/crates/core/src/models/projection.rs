//! Latent projection (GAN inversion) of real images.
//!
//! Each restart optimizes a batch of latents with Adam on the pixel-space
//! squared error. A step that raises an image's error is rejected: that
//! latent is restored and its learning rate halved, so the accepted error
//! trace of every image is non-increasing.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Generator, LatentPoint};
use crate::autodiff::{Graph, Tensor};
use crate::data::{ImageSet, Origin, ToyImage};
use crate::error::{Error, Result};

pub const DEFAULT_PROJECTIONS_PER_IDENTITY: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_PROJECTIONS_PER_IDENTITY,
            steps: 500,
            lr: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartResult {
    pub latent: LatentPoint,
    /// `||G(w) - x||^2`; infinite when the restart was discarded.
    pub error: f64,
    /// Accepted error after each step, starting with the initial latent.
    pub trace: Vec<f64>,
}

impl RestartResult {
    pub fn is_valid(&self) -> bool {
        self.error.is_finite()
    }
}

/// Best latent over all restarts, plus every restart's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub latent: LatentPoint,
    pub error: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartResult>,
}

struct RowAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<i32>,
}

/// Projects every image in `images` (conditioned on its own class).
///
/// Restart `r` draws its initial latents from stream `r` of `seed`, image by
/// image, so the first images of a batch start from the same points as a
/// smaller batch would.
pub fn project_batch(
    images: &[ToyImage],
    gen: &Generator,
    cfg: &ProjectionConfig,
    seed: u64,
) -> Result<Vec<Projection>> {
    if cfg.restarts == 0 {
        return Err(Error::invalid("projection needs at least one restart"));
    }
    let n = images.len();
    let d = gen.latent_dim;
    let p = gen.image_size();
    if let Some(bad) = images.iter().position(|im| im.pixels.len() != p) {
        return Err(Error::shape(
            "project",
            format!("image {} has {} pixels, generator emits {}", bad, images[bad].pixels.len(), p),
        ));
    }
    let classes: Vec<usize> = images.iter().map(|im| im.class_label).collect();
    let target = Tensor::from_rows(&images.iter().map(|im| im.pixels.as_slice()).collect::<Vec<_>>())?;

    let mut per_image: Vec<Vec<RestartResult>> = vec![Vec::with_capacity(cfg.restarts); n];
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let init: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let results = run_restart(gen, &target, &classes, Tensor::matrix(n, d, init)?, cfg)?;
        for (i, res) in results.into_iter().enumerate() {
            per_image[i].push(res);
        }
    }

    per_image
        .into_iter()
        .enumerate()
        .map(|(i, restarts)| {
            let (best_restart, best) = restarts
                .iter()
                .enumerate()
                .filter(|(_, r)| r.is_valid())
                .fold(None::<(usize, &RestartResult)>, |acc, (k, r)| match acc {
                    Some((_, b)) if b.error <= r.error => acc,
                    _ => Some((k, r)),
                })
                .ok_or(Error::ProjectionFailed {
                    restarts: cfg.restarts,
                })?;
            debug!("projection {}: error {:.3e} (restart {})", i, best.error, best_restart);
            Ok(Projection {
                latent: best.latent.clone(),
                error: best.error,
                best_restart,
                restarts,
            })
        })
        .collect()
}

fn row_losses(images: &Tensor, target: &Tensor) -> Vec<f64> {
    images
        .row_iter()
        .zip(target.row_iter())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect()
}

fn run_restart(
    gen: &Generator,
    target: &Tensor,
    classes: &[usize],
    mut w: Tensor,
    cfg: &ProjectionConfig,
) -> Result<Vec<RestartResult>> {
    let (n, d) = w.dims();
    let mut best_w = w.clone();
    let mut best_loss = vec![f64::INFINITY; n];
    let mut best_grad = Tensor::zeros(vec![n, d]);
    let mut lr = vec![cfg.lr; n];
    let mut alive = vec![true; n];
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.steps + 1); n];
    let mut adam = RowAdam {
        m: vec![0.0; n * d],
        v: vec![0.0; n * d],
        t: vec![0; n],
    };
    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);

    for step in 0..=cfg.steps {
        let mut g = Graph::new();
        let wn = g.param(w.clone());
        let gn = gen.forward(&mut g, wn, classes, false)?;
        let t = g.constant(target.clone());
        let diff = g.sub(gn.images, t)?;
        let sq = g.mul(diff, diff)?;
        let total = g.sum(sq);
        let losses = row_losses(g.value(gn.images), target);
        g.backward(total)?;
        let mut grad = g.grad_or_zeros(wn);

        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let li = losses[i];
            let gi_finite = grad.row(i).iter().all(|v| v.is_finite());
            if li.is_finite() && gi_finite && li <= best_loss[i] {
                best_loss[i] = li;
                best_w.row_mut(i).copy_from_slice(w.row(i));
                best_grad.row_mut(i).copy_from_slice(grad.row(i));
            } else if best_loss[i].is_finite() {
                w.row_mut(i).copy_from_slice(best_w.row(i));
                grad.row_mut(i).copy_from_slice(best_grad.row(i));
                lr[i] *= 0.5;
            } else {
                // The starting point itself is unusable: discard this restart.
                alive[i] = false;
                continue;
            }
            traces[i].push(best_loss[i]);
        }
        if step == cfg.steps {
            break;
        }
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            adam.t[i] += 1;
            let bc1 = 1.0 - b1.powi(adam.t[i]);
            let bc2 = 1.0 - b2.powi(adam.t[i]);
            for j in 0..d {
                let k = i * d + j;
                let gk = grad.data()[k];
                adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * gk;
                adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * gk * gk;
                let upd = lr[i] * (adam.m[k] / bc1) / ((adam.v[k] / bc2).sqrt() + eps);
                w.data_mut()[k] -= upd;
            }
        }
    }

    Ok((0..n)
        .map(|i| RestartResult {
            latent: LatentPoint(best_w.row(i).to_vec()),
            error: if alive[i] { best_loss[i] } else { f64::INFINITY },
            trace: std::mem::take(&mut traces[i]),
        })
        .collect())
}

/// Projects a single image; returns the lowest-error latent over `restarts`.
pub fn project_image(
    x: &ToyImage,
    gen: &Generator,
    restarts: usize,
    steps: usize,
    seed: u64,
) -> Result<Projection> {
    let cfg = ProjectionConfig {
        restarts,
        steps,
        ..ProjectionConfig::default()
    };
    Ok(project_batch(std::slice::from_ref(x), gen, &cfg, seed)?.remove(0))
}

/// Appends `G(w)` for every restart latent of each projection, labelled with
/// the identity and class of the projected image.
pub fn augment_with_projections(
    set: &ImageSet,
    gen: &Generator,
    sources: &[ToyImage],
    projections: &[Projection],
) -> Result<ImageSet> {
    if sources.len() != projections.len() {
        return Err(Error::shape(
            "augment_with_projections",
            format!("{} sources but {} projections", sources.len(), projections.len()),
        ));
    }
    let mut out = set.clone();
    for (src, proj) in sources.iter().zip(projections) {
        for r in proj.restarts.iter().filter(|r| r.is_valid()) {
            let px = gen.generate_one(&r.latent, src.class_label)?;
            out.images
                .push(ToyImage::new(px, src.identity, src.class_label, Origin::Projection));
        }
    }
    Ok(out)
}

/// For each identity in `set`, projects its first image `per_identity` times
/// (one latent per restart) and appends the generated images.
///
/// `per_identity = 0` returns the set unchanged.
pub fn augment_identity_with_projections(
    set: &ImageSet,
    gen: &Generator,
    per_identity: usize,
    steps: usize,
    seed: u64,
) -> Result<ImageSet> {
    if per_identity == 0 {
        return Ok(set.clone());
    }
    let sources: Vec<ToyImage> = set
        .identities()
        .into_iter()
        .map(|id| {
            set.images
                .iter()
                .find(|im| im.identity == Some(id))
                .cloned()
                .expect("identity present")
        })
        .collect();
    let cfg = ProjectionConfig {
        restarts: per_identity,
        steps,
        ..ProjectionConfig::default()
    };
    let projections = project_batch(&sources, gen, &cfg, seed)?;
    augment_with_projections(set, gen, &sources, &projections)
}
