//! Loss-based membership inference against a trained classifier.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cross_entropy, softmax, Tensor};
use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::models::{fit_classifier, predict_classes, ClassifierConfig, ImageClassifier};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiaConfig {
    pub attacker: ClassifierConfig,
    /// Fractions of each side used to train, select and evaluate the attacker.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self {
            attacker: ClassifierConfig {
                hidden: vec![16, 16],
                epochs: 60,
                batch_size: 32,
                lr: 1e-3,
                input_noise: 0.0,
            },
            train_fraction: 0.3,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    /// Attacker accuracy on the balanced evaluation slice.
    pub accuracy: f64,
    /// Per-side sample counts for the train, validation and evaluation slices.
    pub slice_sizes: [usize; 3],
    pub best_epoch: usize,
}

/// Attack features per image: the softmax vector sorted in descending order
/// followed by the cross-entropy of the true class.
pub fn attack_features<C: ImageClassifier + ?Sized>(target: &C, set: &ImageSet) -> Result<Tensor> {
    let logits = target.logits(&set.pixels())?;
    if logits.cols() < set.n_classes {
        return Err(Error::invalid(format!(
            "target model has {} outputs for {} classes",
            logits.cols(),
            set.n_classes
        )));
    }
    let probs = softmax(&logits);
    let mut rows = Vec::with_capacity(set.len());
    for (i, im) in set.images.iter().enumerate() {
        let mut f = probs.row(i).to_vec();
        f.sort_by(|a, b| b.total_cmp(a));
        f.push(cross_entropy(&logits.slice_rows(i, i + 1), im.class_label)?);
        rows.push(f);
    }
    Tensor::from_rows(&rows)
}

fn slices(n: usize, cfg: &MiaConfig) -> [usize; 3] {
    let tr = (cfg.train_fraction * n as f64).floor() as usize;
    let va = (cfg.val_fraction * n as f64).floor() as usize;
    [tr, va, n.saturating_sub(tr + va)]
}

/// Trains a binary attacker to tell `members` (the target's training data)
/// from `non_members` and reports its accuracy on a held-out balanced slice.
///
/// Both sides are shuffled and cut into train/val/eval slices; each slice
/// is truncated to the smaller side so every slice is balanced.
pub fn mia_attack<C: ImageClassifier + ?Sized>(
    target: &C,
    members: &ImageSet,
    non_members: &ImageSet,
    cfg: &MiaConfig,
    seed: u64,
) -> Result<MiaReport> {
    let frac_ok = |f: f64| f.is_finite() && f > 0.0;
    if !frac_ok(cfg.train_fraction) || !frac_ok(cfg.val_fraction) || cfg.train_fraction + cfg.val_fraction >= 1.0 {
        return Err(Error::invalid("MIA slice fractions must be positive and leave room for evaluation"));
    }
    let fm = attack_features(target, members)?;
    let fn_ = attack_features(target, non_members)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut im: Vec<usize> = (0..fm.rows()).collect();
    let mut inn: Vec<usize> = (0..fn_.rows()).collect();
    im.shuffle(&mut rng);
    inn.shuffle(&mut rng);

    let sm = slices(im.len(), cfg);
    let sn = slices(inn.len(), cfg);
    let sizes = [sm[0].min(sn[0]), sm[1].min(sn[1]), sm[2].min(sn[2])];
    if sizes.iter().any(|&s| s < 2) {
        return Err(Error::invalid(format!(
            "insufficient samples for membership inference ({} members, {} non-members)",
            im.len(),
            inn.len()
        )));
    }

    let mut om = 0;
    let mut on = 0;
    let mut parts = Vec::new();
    for (s, &size) in sizes.iter().enumerate() {
        let mut idx_rows = Vec::with_capacity(2 * size);
        let mut labels = Vec::with_capacity(2 * size);
        for &i in &im[om..om + size] {
            idx_rows.push(fm.row(i).to_vec());
            labels.push(1);
        }
        for &i in &inn[on..on + size] {
            idx_rows.push(fn_.row(i).to_vec());
            labels.push(0);
        }
        om += sm[s];
        on += sn[s];
        parts.push((Tensor::from_rows(&idx_rows)?, labels));
    }
    let (net, log) = fit_classifier(&parts[0].0, &parts[0].1, &parts[1].0, &parts[1].1, 2, &cfg.attacker, seed)?;
    let pred = predict_classes(&net.predict(&parts[2].0)?);
    let correct = pred.iter().zip(&parts[2].1).filter(|(p, y)| p == y).count();
    let accuracy = correct as f64 / pred.len() as f64;
    debug!("MIA accuracy {:.4} on {} balanced samples", accuracy, pred.len());
    Ok(MiaReport {
        accuracy,
        slice_sizes: sizes,
        best_epoch: log.best_epoch,
    })
}
