use serde::{Deserialize, Serialize};

use crate::autodiff::{Mlp, Tensor};
use crate::error::{Error, Result};
use crate::models::TrainedClassifier;

/// Maps images to feature vectors for distance computations.
pub trait FeatureExtractor: Sync {
    fn features(&self, images: &Tensor) -> Result<Tensor>;
}

impl FeatureExtractor for Mlp {
    fn features(&self, images: &Tensor) -> Result<Tensor> {
        self.penultimate(images)
    }
}

impl FeatureExtractor for TrainedClassifier {
    fn features(&self, images: &Tensor) -> Result<Tensor> {
        self.net.penultimate(images)
    }
}

/// Rows scaled to unit L2 norm; all-zero rows are left at zero.
pub fn unit_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let c = out.cols();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Per-sample distance to the closest reference image and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptualReport {
    pub per_sample: Vec<f64>,
    pub mean_min: f64,
}

/// Nearest-neighbour distances between unit-normalized features.
pub fn min_feature_distances(synthetic: &Tensor, real: &Tensor) -> Result<PerceptualReport> {
    if synthetic.rows() == 0 || real.rows() == 0 {
        return Err(Error::invalid("perceptual distance needs non-empty sets"));
    }
    if synthetic.cols() != real.cols() {
        return Err(Error::shape(
            "min_feature_distances",
            format!("feature dims {} and {}", synthetic.cols(), real.cols()),
        ));
    }
    let s = unit_rows(synthetic);
    let r = unit_rows(real);
    let per_sample: Vec<f64> = s
        .row_iter()
        .map(|a| {
            r.row_iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    let mean_min = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(PerceptualReport { per_sample, mean_min })
}

/// For every synthetic image, the feature distance to its closest real image.
pub fn min_perceptual_distances<E: FeatureExtractor + ?Sized>(
    synthetic: &Tensor,
    real: &Tensor,
    extractor: &E,
) -> Result<PerceptualReport> {
    min_feature_distances(&extractor.features(synthetic)?, &extractor.features(real)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_copy_has_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[9, 6, 2], Activation::Relu, &mut rng);
        let real = Tensor::randn(vec![10, 9], 1.0, &mut rng);
        let mut syn_rows: Vec<Vec<f64>> = Tensor::randn(vec![4, 9], 1.0, &mut rng)
            .row_iter()
            .map(|r| r.to_vec())
            .collect();
        syn_rows.push(real.row(3).to_vec());
        let syn = Tensor::from_rows(&syn_rows).unwrap();
        let rep = min_perceptual_distances(&syn, &real, &net).unwrap();
        assert_eq!(rep.per_sample[4], 0.0);
        let mean = rep.per_sample.iter().sum::<f64>() / 5.0;
        assert_eq!(rep.mean_min, mean);
    }

    #[test]
    fn unit_rows_handles_zero() {
        let t = Tensor::matrix(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(unit_rows(&t).data(), &[0.6, 0.8, 0.0, 0.0]);
    }
}
