//! Downstream utility: class classifiers trained on synthetic data only.

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{ImageSet, Origin};
use crate::error::{Error, Result};
use crate::models::{accuracy, train_classifier, ClassifierConfig, Target, TrainedClassifier};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub classifier: ClassifierConfig,
    pub runs: usize,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig {
                hidden: vec![64, 32],
                epochs: 40,
                batch_size: 32,
                lr: 1e-3,
                input_noise: 0.2,
            },
            runs: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub seeds: Vec<u64>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_coverage(train: &ImageSet) -> Result<()> {
    let labels = train.class_labels();
    for c in 0..train.n_classes {
        if !labels.contains(&c) {
            return Err(Error::invalid(format!("class {} is absent from the downstream training set", c)));
        }
    }
    Ok(())
}

/// Trains `runs` class classifiers on `synthetic` (seeds `seed`, `seed + 1`,
/// ...) and reports their accuracy on the real `test` split.
///
/// The training set must not contain real images.
pub fn downstream_eval(
    synthetic: &ImageSet,
    val: &ImageSet,
    test: &ImageSet,
    cfg: &DownstreamConfig,
    seed: u64,
) -> Result<(DownstreamReport, Vec<TrainedClassifier>)> {
    let real = synthetic.count_origin(Origin::Real);
    if real > 0 {
        return Err(Error::invalid(format!(
            "downstream training set contains {} real images",
            real
        )));
    }
    train_and_score(synthetic, val, test, cfg, seed)
}

/// Same protocol trained on real data; the reference point for utility.
pub fn downstream_eval_real(
    train: &ImageSet,
    val: &ImageSet,
    test: &ImageSet,
    cfg: &DownstreamConfig,
    seed: u64,
) -> Result<(DownstreamReport, Vec<TrainedClassifier>)> {
    train_and_score(train, val, test, cfg, seed)
}

fn train_and_score(
    train: &ImageSet,
    val: &ImageSet,
    test: &ImageSet,
    cfg: &DownstreamConfig,
    seed: u64,
) -> Result<(DownstreamReport, Vec<TrainedClassifier>)> {
    if cfg.runs == 0 {
        return Err(Error::invalid("downstream evaluation needs at least one run"));
    }
    check_coverage(train)?;
    let x_test = test.pixels();
    let y_test = test.class_labels();
    let mut accuracies = Vec::with_capacity(cfg.runs);
    let mut seeds = Vec::with_capacity(cfg.runs);
    let mut models = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let s = seed.wrapping_add(r as u64);
        let clf = train_classifier(train, val, Target::Class, &cfg.classifier, s)?;
        let acc = accuracy(&clf, &x_test, &y_test)?;
        info!("downstream run {}: test accuracy {:.4}", r, acc);
        accuracies.push(acc);
        seeds.push(s);
        models.push(clf);
    }
    let (mean, std) = mean_std(&accuracies);
    Ok((
        DownstreamReport {
            accuracies,
            mean,
            std,
            seeds,
        },
        models,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
