use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImageClassifier;
use crate::autodiff::{adam_step, Activation, AdamState, Graph, Mlp, NodeId, Tensor};
use crate::data::ImageSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Std of Gaussian pixel noise added to each training batch.
    pub input_noise: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            input_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Identity,
    Class,
}

/// A network plus the label each of its outputs stands for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub net: Mlp,
    pub target: Target,
    /// `labels[k]` is the identity or class id of output `k`.
    pub labels: Vec<usize>,
    pub log: TrainLog,
}

impl ImageClassifier for TrainedClassifier {
    fn n_outputs(&self) -> usize {
        self.net.output_dim()
    }

    fn forward_logits(&self, g: &mut Graph, images: NodeId) -> Result<NodeId> {
        self.net.forward_logits(g, images)
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.net.predict(images)
    }
}

/// Argmax per row; ties go to the lowest index.
pub fn predict_classes(logits: &Tensor) -> Vec<usize> {
    logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy<C: ImageClassifier + ?Sized>(clf: &C, x: &Tensor, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let pred = predict_classes(&clf.logits(x)?);
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
}

/// Minibatch Adam on mean cross-entropy, keeping the parameters from the
/// epoch with the best validation accuracy (earliest on ties).
pub fn fit_classifier(
    x_train: &Tensor,
    y_train: &[usize],
    x_val: &Tensor,
    y_val: &[usize],
    n_outputs: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(Mlp, TrainLog)> {
    if x_train.rows() != y_train.len() || x_val.rows() != y_val.len() {
        return Err(Error::shape(
            "fit_classifier",
            format!(
                "{} train rows / {} labels, {} val rows / {} labels",
                x_train.rows(),
                y_train.len(),
                x_val.rows(),
                y_val.len()
            ),
        ));
    }
    if x_train.rows() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if let Some(&bad) = y_train.iter().chain(y_val).find(|&&y| y >= n_outputs) {
        return Err(Error::invalid(format!("label {} out of range for {} outputs", bad, n_outputs)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![x_train.cols()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(n_outputs);
    let mut net = Mlp::new(&sizes, Activation::Relu, &mut rng);
    let mut params = net.params();
    let mut adam = AdamState::new(&params);
    let noise = Normal::new(0.0, cfg.input_noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;

    let mut log = TrainLog {
        best_val_acc: f64::NEG_INFINITY,
        ..TrainLog::default()
    };
    let mut best = params.clone();
    let mut order: Vec<usize> = (0..x_train.rows()).collect();
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let mut xb = x_train.select_rows(chunk);
            if cfg.input_noise > 0.0 {
                for v in xb.data_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let mut g = Graph::new();
            let x = g.constant(xb);
            let nodes = net.forward(&mut g, x, true)?;
            let ce = g.cross_entropy(nodes.output, &yb)?;
            let loss = g.mean(ce);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    seed,
                    epoch,
                    what: "classifier loss".into(),
                });
            }
            loss_sum += lv * chunk.len() as f64;
            g.backward(loss)?;
            let grads: Vec<Tensor> = nodes.params.iter().map(|&p| g.grad_or_zeros(p)).collect();
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
            net.set_params(params.clone())?;
        }
        let train_acc = accuracy(&net, x_train, y_train)?;
        let val_acc = if y_val.is_empty() { train_acc } else { accuracy(&net, x_val, y_val)? };
        log.train_loss.push(loss_sum / x_train.rows() as f64);
        log.train_acc.push(train_acc);
        log.val_acc.push(val_acc);
        if val_acc > log.best_val_acc {
            log.best_val_acc = val_acc;
            log.best_epoch = epoch;
            best = params.clone();
        }
        debug!(
            "epoch {}: loss {:.4} train acc {:.3} val acc {:.3}",
            epoch,
            loss_sum / x_train.rows() as f64,
            train_acc,
            val_acc
        );
    }
    if cfg.epochs == 0 {
        log.best_val_acc = if y_val.is_empty() { 0.0 } else { accuracy(&net, x_val, y_val)? };
    }
    net.set_params(best)?;
    Ok((net, log))
}

/// Trains an identity or class classifier on `train`, selecting on `val`.
///
/// For [`Target::Identity`] the outputs are the distinct identities of
/// `train` in ascending order; every identity in `val` must appear in `train`.
pub fn train_classifier(
    train: &ImageSet,
    val: &ImageSet,
    target: Target,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<TrainedClassifier> {
    let label_of = |set: &ImageSet| -> Result<Vec<usize>> {
        match target {
            Target::Class => Ok(set.class_labels()),
            Target::Identity => set
                .images
                .iter()
                .map(|im| im.identity.ok_or_else(|| Error::invalid("identity target needs identity labels")))
                .collect(),
        }
    };
    let raw_train = label_of(train)?;
    let raw_val = label_of(val)?;
    let labels: Vec<usize> = match target {
        Target::Class => (0..train.n_classes).collect(),
        Target::Identity => train.identities(),
    };
    let mut distinct = raw_train.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::invalid(format!(
            "{:?} classifier needs at least 2 distinct labels, training set has {}",
            target,
            distinct.len()
        )));
    }
    let index: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(k, &l)| (l, k)).collect();
    let map = |raw: &[usize]| -> Result<Vec<usize>> {
        raw.iter()
            .map(|l| {
                index
                    .get(l)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("label {} not present in the training set", l)))
            })
            .collect()
    };
    let y_train = map(&raw_train)?;
    let y_val = map(&raw_val)?;
    let (net, log) = fit_classifier(
        &train.pixels(),
        &y_train,
        &val.pixels(),
        &y_val,
        labels.len(),
        cfg,
        seed,
    )?;
    info!(
        "{:?} classifier: best val acc {:.3} at epoch {}, final train acc {:.3}",
        target,
        log.best_val_acc,
        log.best_epoch,
        log.train_acc.last().copied().unwrap_or(0.0)
    );
    Ok(TrainedClassifier {
        net,
        target,
        labels,
        log,
    })
}
