//! Toy-scale generator and classifiers, their training loops, latent
//! projection of real images, and checkpoint I/O.

mod checkpoint;
mod classifier;
mod gan;
mod projection;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use classifier::{
    accuracy, fit_classifier, predict_classes, train_classifier, ClassifierConfig, Target,
    TrainLog, TrainedClassifier,
};
pub use gan::{train_tiny_gan, Discriminator, GanConfig, GanLog};
pub use projection::{
    augment_identity_with_projections, augment_with_projections, project_batch, project_image,
    Projection, ProjectionConfig, RestartResult, DEFAULT_PROJECTIONS_PER_IDENTITY,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Mlp, NodeId, Tensor};
use crate::error::{Error, Result};

/// A point in the generator's latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint(pub Vec<f64>);

impl LatentPoint {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &LatentPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `[n, d]` matrix with one point per row.
    pub fn stack(points: &[LatentPoint]) -> Result<Tensor> {
        Tensor::from_rows(&points.iter().map(|p| p.0.as_slice()).collect::<Vec<_>>())
    }
}

/// Anything that maps a batch of flattened images to logits.
///
/// Weights are frozen: `forward_logits` records constants only, so
/// gradients flow to the images but never to the model.
pub trait ImageClassifier: Send + Sync {
    fn n_outputs(&self) -> usize;

    fn forward_logits(&self, g: &mut Graph, images: NodeId) -> Result<NodeId>;

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let y = self.forward_logits(&mut g, x)?;
        Ok(g.value(y).clone())
    }
}

impl ImageClassifier for Mlp {
    fn n_outputs(&self) -> usize {
        self.output_dim()
    }

    fn forward_logits(&self, g: &mut Graph, images: NodeId) -> Result<NodeId> {
        Ok(self.forward(g, images, false)?.output)
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.predict(images)
    }
}

pub(crate) fn one_hot(classes: &[usize], n: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(vec![classes.len(), n]);
    for (i, &c) in classes.iter().enumerate() {
        if c >= n {
            return Err(Error::invalid(format!("class {} out of range for {} classes", c, n)));
        }
        t.data_mut()[i * n + c] = 1.0;
    }
    Ok(t)
}

/// Class-conditional MLP generator: `tanh(mlp([w, onehot(y)]))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub net: Mlp,
    pub latent_dim: usize,
    pub n_classes: usize,
    pub side: usize,
}

/// Nodes of a recorded generator pass.
pub struct GeneratorNodes {
    pub images: NodeId,
    pub params: Vec<NodeId>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        n_classes: usize,
        side: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![latent_dim + n_classes];
        sizes.extend_from_slice(hidden);
        sizes.push(side * side);
        Self {
            net: Mlp::new(&sizes, Activation::LeakyRelu, rng),
            latent_dim,
            n_classes,
            side,
        }
    }

    pub fn image_size(&self) -> usize {
        self.side * self.side
    }

    fn check_latents(&self, cols: usize, rows: usize, classes: usize) -> Result<()> {
        if cols != self.latent_dim {
            return Err(Error::shape(
                "generator",
                format!("latent dimension {} but generator expects {}", cols, self.latent_dim),
            ));
        }
        if rows != classes {
            return Err(Error::shape(
                "generator",
                format!("{} latents but {} class labels", rows, classes),
            ));
        }
        Ok(())
    }

    /// Records `G(latents | classes)`; with `trainable` the weights become leaves.
    pub fn forward(
        &self,
        g: &mut Graph,
        latents: NodeId,
        classes: &[usize],
        trainable: bool,
    ) -> Result<GeneratorNodes> {
        let (rows, cols) = g.value(latents).dims();
        self.check_latents(cols, rows, classes.len())?;
        let cond = g.constant(one_hot(classes, self.n_classes)?);
        let input = g.concat_cols(latents, cond)?;
        let nodes = self.net.forward(g, input, trainable)?;
        let images = g.tanh(nodes.output);
        Ok(GeneratorNodes {
            images,
            params: nodes.params,
        })
    }

    /// `[n, side*side]` images for `[n, d]` latents.
    pub fn generate(&self, latents: &Tensor, classes: &[usize]) -> Result<Tensor> {
        let (rows, cols) = latents.dims();
        self.check_latents(cols, rows, classes.len())?;
        let cond = one_hot(classes, self.n_classes)?;
        let mut input = Vec::with_capacity(rows * (cols + self.n_classes));
        for i in 0..rows {
            input.extend_from_slice(latents.row(i));
            input.extend_from_slice(cond.row(i));
        }
        let input = Tensor::matrix(rows, cols + self.n_classes, input)?;
        Ok(self.net.predict(&input)?.map(f64::tanh))
    }

    pub fn generate_one(&self, w: &LatentPoint, class: usize) -> Result<Vec<f64>> {
        let t = Tensor::matrix(1, w.dim(), w.0.clone())?;
        Ok(self.generate(&t, &[class])?.into_data())
    }

    pub fn sample_latents<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        let data = (0..n * self.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::matrix(n, self.latent_dim, data).expect("sized")
    }
}

/// The trained networks of one pipeline run.
///
/// Borrowed immutably wherever latents are optimized, so nothing downstream
/// can update G, the identity classifier, or the class classifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelBundle {
    pub generator: Generator,
    pub identity: TrainedClassifier,
    pub class: TrainedClassifier,
    pub downstream: Option<Mlp>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn untrained_generator_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::new(16, 2, 8, &[32], &mut rng);
        let z = Tensor::randn(vec![50, 16], 10.0, &mut rng);
        let classes: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let x = g.generate(&z, &classes).unwrap();
        assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn generate_matches_recorded_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen = Generator::new(4, 3, 4, &[8], &mut rng);
        let z = Tensor::randn(vec![3, 4], 1.0, &mut rng);
        let classes = [0, 2, 1];
        let mut g = Graph::new();
        let zn = g.constant(z.clone());
        let nodes = gen.forward(&mut g, zn, &classes, false).unwrap();
        assert_eq!(g.value(nodes.images).data(), gen.generate(&z, &classes).unwrap().data());
    }

    #[test]
    fn wrong_latent_dim_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = Generator::new(4, 2, 4, &[8], &mut rng);
        assert!(gen.generate(&Tensor::zeros(vec![1, 5]), &[0]).is_err());
        assert!(gen.generate(&Tensor::zeros(vec![1, 4]), &[2]).is_err());
    }
}
