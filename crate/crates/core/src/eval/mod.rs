//! Privacy and fidelity metrics for synthetic image sets.

mod downstream;
mod frechet;
mod mia;
mod perceptual;

pub use downstream::{downstream_eval, downstream_eval_real, mean_std, DownstreamConfig, DownstreamReport};
pub use frechet::{frechet_distance, COVARIANCE_RIDGE};
pub use mia::{attack_features, mia_attack, MiaConfig, MiaReport};
pub use perceptual::{min_feature_distances, min_perceptual_distances, unit_rows, FeatureExtractor, PerceptualReport};

use serde::{Deserialize, Serialize};

/// Everything the evaluation stage reports for one training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub unit: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_train: usize,
    /// `None` when the set has no more samples than feature dimensions.
    pub frechet: Option<f64>,
    pub mml: f64,
    pub per_sample_min: Vec<f64>,
    pub downstream: DownstreamReport,
    pub mia: Vec<MiaReport>,
    pub mia_seeds: Vec<u64>,
    pub mia_mean: f64,
    pub mia_std: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "unit,n_train,frechet,mml,acc_mean,acc_std,mia_mean,mia_std";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.unit,
            self.n_train,
            self.frechet.map_or_else(String::new, |v| v.to_string()),
            self.mml,
            self.downstream.mean,
            self.downstream.std,
            self.mia_mean,
            self.mia_std
        )
    }
}
