use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, Generator};
use crate::autodiff::{adam_step, Activation, AdamState, Graph, Mlp, NodeId, Tensor};
use crate::data::ImageSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    /// Discriminator real-vs-fake accuracy above which the run is flagged.
    pub separation_threshold: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            generator_hidden: vec![64, 128],
            discriminator_hidden: vec![128, 64],
            epochs: 60,
            batch_size: 64,
            lr: 5e-4,
            beta1: 0.5,
            separation_threshold: 0.8,
        }
    }
}

/// Per-epoch training curve plus the final separability check.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanLog {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    /// Discriminator accuracy on a held batch of real and generated images.
    pub final_separation: f64,
    pub separation_threshold: f64,
    pub within_threshold: bool,
}

/// Class-conditional critic: `mlp([x, onehot(y)])` returning one logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub net: Mlp,
    pub n_classes: usize,
}

impl Discriminator {
    fn forward(&self, g: &mut Graph, images: NodeId, classes: &[usize], trainable: bool) -> Result<(NodeId, Vec<NodeId>)> {
        let cond = g.constant(one_hot(classes, self.n_classes)?);
        let input = g.concat_cols(images, cond)?;
        let nodes = self.net.forward(g, input, trainable)?;
        Ok((nodes.output, nodes.params))
    }

    fn logits(&self, images: &Tensor, classes: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let (out, _) = self.forward(&mut g, x, classes, false)?;
        Ok(g.value(out).clone())
    }
}

fn check_finite(v: f64, seed: u64, epoch: usize, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            seed,
            epoch,
            what: what.into(),
        })
    }
}

/// Trains a label-conditioned generator with the non-saturating logistic GAN
/// loss, alternating one discriminator step and one generator step.
pub fn train_tiny_gan(data: &ImageSet, cfg: &GanConfig, seed: u64) -> Result<(Generator, GanLog)> {
    if data.is_empty() {
        return Err(Error::invalid("GAN training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = Generator::new(cfg.latent_dim, data.n_classes, data.side, &cfg.generator_hidden, &mut rng);
    let mut d_sizes = vec![data.pixel_count() + data.n_classes];
    d_sizes.extend_from_slice(&cfg.discriminator_hidden);
    d_sizes.push(1);
    let mut disc = Discriminator {
        net: Mlp::new(&d_sizes, Activation::LeakyRelu, &mut rng),
        n_classes: data.n_classes,
    };

    let x_all = data.pixels();
    let y_all = data.class_labels();
    let mut g_params = gen.net.params();
    let mut d_params = disc.net.params();
    let mut g_adam = AdamState::with_betas(&g_params, cfg.beta1, 0.999, 1e-8);
    let mut d_adam = AdamState::with_betas(&d_params, cfg.beta1, 0.999, 1e-8);
    let mut log = GanLog {
        separation_threshold: cfg.separation_threshold,
        ..GanLog::default()
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut d_sum, mut g_sum, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(batch) {
            let n = chunk.len();
            let classes: Vec<usize> = chunk.iter().map(|&i| y_all[i]).collect();

            // Discriminator: softplus(-D(x)) + softplus(D(G(z))), generator detached.
            let fake = gen.generate(&gen.sample_latents(n, &mut rng), &classes)?;
            let mut g = Graph::new();
            let real = g.constant(x_all.select_rows(chunk));
            let fake = g.constant(fake);
            let both = g.concat_rows(&[real, fake])?;
            let both_classes: Vec<usize> = classes.iter().chain(&classes).copied().collect();
            let (logits, params) = disc.forward(&mut g, both, &both_classes, true)?;
            let real_logits = g.slice_rows(logits, 0, n)?;
            let fake_logits = g.slice_rows(logits, n, 2 * n)?;
            let neg_real = g.scale(real_logits, -1.0);
            let l_real = g.softplus(neg_real);
            let l_fake = g.softplus(fake_logits);
            let l_real = g.sum(l_real);
            let l_fake = g.sum(l_fake);
            let d_loss = g.add(l_real, l_fake)?;
            let d_loss = g.scale(d_loss, 1.0 / n as f64);
            let dv = g.value(d_loss).item();
            check_finite(dv, seed, epoch, "discriminator loss")?;
            g.backward(d_loss)?;
            let grads: Vec<Tensor> = params.iter().map(|&p| g.grad_or_zeros(p)).collect();
            adam_step(&mut d_params, &grads, &mut d_adam, cfg.lr)?;
            disc.net.set_params(d_params.clone())?;

            // Generator: softplus(-D(G(z))), discriminator frozen.
            let mut g = Graph::new();
            let z = g.constant(gen.sample_latents(n, &mut rng));
            let gn = gen.forward(&mut g, z, &classes, true)?;
            let (logits, _) = disc.forward(&mut g, gn.images, &classes, false)?;
            let neg = g.scale(logits, -1.0);
            let sp = g.softplus(neg);
            let g_loss = g.mean(sp);
            let gv = g.value(g_loss).item();
            check_finite(gv, seed, epoch, "generator loss")?;
            g.backward(g_loss)?;
            let grads: Vec<Tensor> = gn.params.iter().map(|&p| g.grad_or_zeros(p)).collect();
            adam_step(&mut g_params, &grads, &mut g_adam, cfg.lr)?;
            gen.net.set_params(g_params.clone())?;

            d_sum += dv;
            g_sum += gv;
            steps += 1;
        }
        log.d_loss.push(d_sum / steps as f64);
        log.g_loss.push(g_sum / steps as f64);
        if epoch % 10 == 0 || epoch + 1 == cfg.epochs {
            info!(
                "gan epoch {}: d_loss {:.4} g_loss {:.4}",
                epoch,
                d_sum / steps as f64,
                g_sum / steps as f64
            );
        }
    }

    // Separability on a held batch: fraction of real scored > 0 and fake < 0.
    let m = data.len().min(256);
    let idx: Vec<usize> = (0..m).collect();
    let classes: Vec<usize> = idx.iter().map(|&i| y_all[i]).collect();
    let real_logits = disc.logits(&x_all.select_rows(&idx), &classes)?;
    let fake = gen.generate(&gen.sample_latents(m, &mut rng), &classes)?;
    let fake_logits = disc.logits(&fake, &classes)?;
    let correct = real_logits.data().iter().filter(|&&v| v > 0.0).count()
        + fake_logits.data().iter().filter(|&&v| v <= 0.0).count();
    log.final_separation = correct as f64 / (2 * m) as f64;
    log.within_threshold = log.final_separation <= cfg.separation_threshold;
    if log.within_threshold {
        info!(
            "discriminator separation {:.3} (threshold {:.3})",
            log.final_separation, cfg.separation_threshold
        );
    } else {
        warn!(
            "discriminator separation {:.3} exceeds threshold {:.3}",
            log.final_separation, cfg.separation_threshold
        );
    }
    Ok((gen, log))
}
