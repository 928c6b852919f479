//! Image containers and the synthetic "identicon" dataset.
//!
//! Each identity owns a private structural pattern (a few signed Gaussian
//! blobs); each class owns a global oriented grating whose per-identity
//! strength varies. The two signals come from disjoint parameter groups, so
//! an identity classifier and a class classifier are both learnable.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Where an image came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    /// Generator output for a latent projected from a real image.
    Projection,
    /// Generator output for a latent that was never fitted to a real image.
    Synthetic,
}

/// Square grayscale image with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyImage {
    pub pixels: Vec<f64>,
    /// Identity label; `None` for synthetic samples, which belong to nobody.
    pub identity: Option<usize>,
    pub class_label: usize,
    pub origin: Origin,
}

impl ToyImage {
    pub fn new(pixels: Vec<f64>, identity: Option<usize>, class_label: usize, origin: Origin) -> Self {
        let pixels = pixels.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Self {
            pixels,
            identity,
            class_label,
            origin,
        }
    }
}

/// A flat collection of images sharing a resolution and label space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSet {
    pub side: usize,
    pub n_classes: usize,
    pub images: Vec<ToyImage>,
}

impl ImageSet {
    pub fn new(side: usize, n_classes: usize, images: Vec<ToyImage>) -> Result<Self> {
        for (i, im) in images.iter().enumerate() {
            if im.pixels.len() != side * side {
                return Err(Error::shape(
                    "image_set",
                    format!("image {} has {} pixels, expected {}x{}", i, im.pixels.len(), side, side),
                ));
            }
            if im.class_label >= n_classes {
                return Err(Error::invalid(format!(
                    "image {} has class {} but only {} classes exist",
                    i, im.class_label, n_classes
                )));
            }
            if im.pixels.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("image {} has pixels outside [-1, 1]", i)));
            }
        }
        Ok(Self {
            side,
            n_classes,
            images,
        })
    }

    pub fn empty(side: usize, n_classes: usize) -> Self {
        Self {
            side,
            n_classes,
            images: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.side * self.side
    }

    /// `[n, side*side]` matrix of pixels.
    pub fn pixels(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * self.pixel_count());
        for im in &self.images {
            data.extend_from_slice(&im.pixels);
        }
        Tensor::new(vec![self.len(), self.pixel_count()], data).expect("validated sizes")
    }

    pub fn class_labels(&self) -> Vec<usize> {
        self.images.iter().map(|im| im.class_label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> ImageSet {
        ImageSet {
            side: self.side,
            n_classes: self.n_classes,
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    pub fn extend(&mut self, other: ImageSet) {
        self.images.extend(other.images);
    }

    /// Distinct identity labels present, ascending.
    pub fn identities(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.images.iter().filter_map(|im| im.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn count_origin(&self, origin: Origin) -> usize {
        self.images.iter().filter(|im| im.origin == origin).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Fractions of identities assigned to train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitProportions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitProportions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitProportions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || self.train <= 0.0 {
            return Err(Error::invalid(format!("invalid split proportions {:?}", parts)));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split proportions {:?} do not sum to 1",
                parts
            )));
        }
        Ok(())
    }

    /// Identity counts per split; the test split absorbs rounding.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = (self.train * n as f64).round() as usize;
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Images plus identity-disjoint train/val/test index lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub images: ImageSet,
    pub n_identities: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabeledDataset {
    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split(&self, split: Split) -> ImageSet {
        self.images.subset(self.indices(split))
    }

    /// Checks that splits are disjoint, cover every image, and never share an identity.
    pub fn validate_splits(&self) -> Result<()> {
        let n = self.images.len();
        let mut owner = vec![None; n];
        for (s, idx) in [(0, &self.train), (1, &self.val), (2, &self.test)] {
            for &i in idx.iter() {
                if i >= n || owner[i].is_some() {
                    return Err(Error::invalid(format!("image index {} repeated or out of range", i)));
                }
                owner[i] = Some(s);
            }
        }
        if owner.iter().any(|o| o.is_none()) {
            return Err(Error::invalid("some images belong to no split"));
        }
        let mut id_split = vec![None; self.n_identities];
        for (i, im) in self.images.images.iter().enumerate() {
            if let Some(id) = im.identity {
                match id_split[id] {
                    None => id_split[id] = owner[i],
                    Some(s) if Some(s) != owner[i] => {
                        return Err(Error::invalid(format!("identity {} spans two splits", id)))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the identicon generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdenticonSpec {
    pub side: usize,
    pub views_per_identity: usize,
    /// Number of signed Gaussian blobs making up an identity's pattern.
    pub blobs_per_identity: usize,
    pub identity_amplitude: f64,
    /// Amplitude of the class grating at unit strength.
    pub class_amplitude: f64,
    /// Standard deviation of the per-identity class strength around 1.
    pub class_strength_spread: f64,
    /// Per-view pixel noise standard deviation.
    pub noise: f64,
    pub background: f64,
}

impl Default for IdenticonSpec {
    fn default() -> Self {
        Self {
            side: 16,
            views_per_identity: 8,
            blobs_per_identity: 10,
            identity_amplitude: 0.6,
            class_amplitude: 0.06,
            class_strength_spread: 0.2,
            noise: 0.3,
            background: -0.2,
        }
    }
}

struct IdentityParams {
    blobs: Vec<(f64, f64, f64, f64)>,
    class_strength: f64,
}

fn class_template(side: usize, class: usize, n_classes: usize) -> Vec<f64> {
    let theta = PI * class as f64 / n_classes as f64;
    let (s, c) = theta.sin_cos();
    let scale = 2.0 * PI / side as f64;
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5) * c + (y as f64 + 0.5) * s;
            out.push((u * scale).cos());
        }
    }
    out
}

/// Gram-Schmidt over the class templates.
fn orthonormal_basis(templates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for t in templates {
        let mut v = t.clone();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Renders one identity. The blob pattern has its components along the
/// class templates removed, so identity carries no class evidence and
/// every identity of a class is equally easy up to its class strength.
fn render(spec: &IdenticonSpec, p: &IdentityParams, template: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let side = spec.side;
    let mut ident = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            for &(cx, cy, sigma, amp) in &p.blobs {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                ident[y * side + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for b in basis {
        let dot: f64 = ident.iter().zip(b).map(|(x, y)| x * y).sum();
        ident.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
    ident
        .iter()
        .zip(template)
        .map(|(v, t)| spec.background + spec.identity_amplitude * v + spec.class_amplitude * p.class_strength * t)
        .collect()
}

/// Generates `n_id` identities with `views_per_identity` noisy views each and
/// splits them by identity.
///
/// Identity `j` has class `j mod n_classes`; its pattern and views come from
/// a random stream keyed by `(seed, j)`.
pub fn generate_identicon_dataset(
    spec: &IdenticonSpec,
    n_id: usize,
    n_classes: usize,
    proportions: SplitProportions,
    seed: u64,
) -> Result<LabeledDataset> {
    proportions.validate()?;
    if n_classes < 2 {
        return Err(Error::invalid("identicon dataset needs at least 2 classes"));
    }
    if n_id < 2 * n_classes {
        return Err(Error::invalid(format!(
            "{} identities cannot cover {} classes (need at least {})",
            n_id,
            n_classes,
            2 * n_classes
        )));
    }
    if spec.side < 4 || spec.views_per_identity == 0 {
        return Err(Error::invalid("identicon side must be >= 4 and views >= 1"));
    }

    let side = spec.side;
    let templates: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| class_template(side, c, n_classes))
        .collect();
    let basis = orthonormal_basis(&templates);
    let strength = Normal::new(1.0, spec.class_strength_spread.max(0.0))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;

    let mut images = Vec::with_capacity(n_id * spec.views_per_identity);
    for j in 0..n_id {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64 + 1);
        let class = j % n_classes;
        let lo = 0.15 * side as f64;
        let hi = 0.85 * side as f64;
        let blobs = (0..spec.blobs_per_identity)
            .map(|_| {
                let cx = rng.gen_range(lo..hi);
                let cy = rng.gen_range(lo..hi);
                let sigma = rng.gen_range(0.08..0.16) * side as f64;
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let amp = sign * rng.gen_range(0.6..1.0);
                (cx, cy, sigma, amp)
            })
            .collect();
        let params = IdentityParams {
            blobs,
            class_strength: strength.sample(&mut rng),
        };
        let clean = render(spec, &params, &templates[class], &basis);
        for _ in 0..spec.views_per_identity {
            let pixels = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
            images.push(ToyImage::new(pixels, Some(j), class, Origin::Real));
        }
    }

    let mut order: Vec<usize> = (0..n_id).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5711));
    let (n_train, n_val, _) = proportions.counts(n_id);
    let mut which = vec![Split::Test; n_id];
    for (pos, &id) in order.iter().enumerate() {
        which[id] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, im) in images.iter().enumerate() {
        match which[im.identity.expect("real image")] {
            Split::Train => train.push(i),
            Split::Val => val.push(i),
            Split::Test => test.push(i),
        }
    }

    let ds = LabeledDataset {
        images: ImageSet::new(side, n_classes, images)?,
        n_identities: n_id,
        train,
        val,
        test,
    };
    ds.validate_splits()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> IdenticonSpec {
        IdenticonSpec {
            views_per_identity: 2,
            ..IdenticonSpec::default()
        }
    }

    #[test]
    fn splits_by_identity_70_10_20() {
        let ds = generate_identicon_dataset(&small_spec(), 100, 2, SplitProportions::default(), 7).unwrap();
        assert_eq!(ds.split(Split::Train).identities().len(), 70);
        assert_eq!(ds.split(Split::Val).identities().len(), 10);
        assert_eq!(ds.split(Split::Test).identities().len(), 20);
        assert_eq!(ds.train.len(), 140);
        ds.validate_splits().unwrap();
    }

    #[test]
    fn zero_noise_is_reproducible() {
        let spec = IdenticonSpec {
            noise: 0.0,
            ..small_spec()
        };
        let a = generate_identicon_dataset(&spec, 20, 2, SplitProportions::default(), 11).unwrap();
        let b = generate_identicon_dataset(&spec, 20, 2, SplitProportions::default(), 11).unwrap();
        assert_eq!(a, b);
        // Without noise the views of one identity coincide.
        assert_eq!(a.images.images[0].pixels, a.images.images[1].pixels);
    }

    #[test]
    fn relabeling_identities_preserves_image_multiset() {
        let ds = generate_identicon_dataset(&small_spec(), 12, 2, SplitProportions::default(), 5).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let mut relabeled = ds.images.clone();
        for im in &mut relabeled.images {
            im.identity = im.identity.map(|i| perm[i]);
        }
        let key = |s: &ImageSet| {
            let mut v: Vec<Vec<u64>> = s
                .images
                .iter()
                .map(|im| im.pixels.iter().map(|p| p.to_bits()).collect())
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&ds.images), key(&relabeled));
        assert_ne!(ds.images, relabeled);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad = SplitProportions {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(generate_identicon_dataset(&small_spec(), 100, 2, bad, 1).is_err());
        assert!(generate_identicon_dataset(&small_spec(), 3, 2, SplitProportions::default(), 1).is_err());
        assert!(generate_identicon_dataset(&small_spec(), 10, 1, SplitProportions::default(), 1).is_err());
    }

    #[test]
    fn identity_pattern_is_orthogonal_to_class_templates() {
        let spec = IdenticonSpec {
            noise: 0.0,
            class_amplitude: 0.0,
            background: 0.0,
            identity_amplitude: 0.2,
            ..small_spec()
        };
        let ds = generate_identicon_dataset(&spec, 8, 4, SplitProportions::default(), 3).unwrap();
        for c in 0..4 {
            let t = class_template(spec.side, c, 4);
            for im in &ds.images.images {
                let dot: f64 = im.pixels.iter().zip(&t).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-9, "{}", dot);
            }
        }
    }

    #[test]
    fn pixels_stay_in_range() {
        let spec = IdenticonSpec {
            noise: 0.8,
            ..small_spec()
        };
        let ds = generate_identicon_dataset(&spec, 10, 2, SplitProportions::default(), 2).unwrap();
        assert!(ds
            .images
            .images
            .iter()
            .all(|im| im.pixels.iter().all(|v| (-1.0..=1.0).contains(v))));
    }
}
