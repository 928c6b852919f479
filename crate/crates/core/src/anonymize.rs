//! k-same aggregation in latent space and same-class endpoint pairing.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::LatentPoint;

/// A projected real sample: its latent, identity and class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedLatent {
    pub latent: LatentPoint,
    pub identity: usize,
    pub class_label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub latent: LatentPoint,
    pub class_label: usize,
    /// Identities averaged into this centroid. Audit only.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnonymizedSet {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Centroid>,
}

/// Centroid without its member list, safe to export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedCentroid {
    pub latent: LatentPoint,
    pub class_label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedAnonymizedSet {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<SharedCentroid>,
}

impl AnonymizedSet {
    pub fn shareable(&self) -> SharedAnonymizedSet {
        SharedAnonymizedSet {
            k: self.k,
            seed: self.seed,
            centroids: self
                .centroids
                .iter()
                .map(|c| SharedCentroid {
                    latent: c.latent.clone(),
                    class_label: c.class_label,
                })
                .collect(),
        }
    }

    pub fn count_in_class(&self, class_label: usize) -> usize {
        self.centroids.iter().filter(|c| c.class_label == class_label).count()
    }
}

fn sq_dist(a: &LatentPoint, b: &LatentPoint) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Groups identities of each class into sets of `k` by greedy
/// nearest-neighbour chaining and replaces every group by its mean latent.
///
/// Within a class the chain starts at a seeded random member and repeatedly
/// takes the closest unassigned member to the one added last; every `k`
/// members close a group. Fewer than `k` leftovers are dropped, so class `c`
/// yields exactly `floor(N_c / k)` centroids.
pub fn ksame_centroids(projected: &[ProjectedLatent], k: usize, seed: u64) -> Result<AnonymizedSet> {
    if k < 2 {
        return Err(Error::invalid(format!("k-same needs k >= 2, got {}", k)));
    }
    let mut seen = BTreeSet::new();
    for p in projected {
        if !seen.insert(p.identity) {
            return Err(Error::invalid(format!("identity {} appears more than once", p.identity)));
        }
    }
    if let Some(d) = projected.first().map(|p| p.latent.dim()) {
        if projected.iter().any(|p| p.latent.dim() != d) {
            return Err(Error::shape("ksame_centroids", "latents of different dimensions"));
        }
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in projected.iter().enumerate() {
        by_class.entry(p.class_label).or_default().push(i);
    }
    for (&c, members) in &by_class {
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {} has {} members, fewer than k = {}",
                c,
                members.len(),
                k
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::new();
    for (&class_label, members) in &by_class {
        let mut pool = members.clone();
        let groups = pool.len() / k;
        let mut current = pool.swap_remove(rng.gen_range(0..pool.len()));
        let mut chain = vec![current];
        while chain.len() < groups * k {
            let (pos, _) = pool
                .iter()
                .enumerate()
                .map(|(pos, &j)| (pos, sq_dist(&projected[current].latent, &projected[j].latent)))
                .fold(None::<(usize, f64)>, |best, (pos, d)| match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((pos, d)),
                })
                .expect("pool not empty");
            current = pool.remove(pos);
            chain.push(current);
        }
        for group in chain.chunks(k) {
            let d = projected[group[0]].latent.dim();
            let mut mean = vec![0.0; d];
            for &j in group {
                for (m, v) in mean.iter_mut().zip(&projected[j].latent.0) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= k as f64;
            }
            centroids.push(Centroid {
                latent: LatentPoint(mean),
                class_label,
                members: group.iter().map(|&j| projected[j].identity).collect(),
            });
        }
    }
    Ok(AnonymizedSet { k, seed, centroids })
}

/// Same-class endpoints for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointPair {
    pub a: LatentPoint,
    pub b: LatentPoint,
    pub class_label: usize,
}

/// Randomly partitions each class's centroids into disjoint pairs.
///
/// An odd centroid out is dropped; a class with a single centroid is
/// skipped with a warning.
pub fn sample_pairs(set: &AnonymizedSet, seed: u64) -> Vec<EndpointPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<&Centroid>> = BTreeMap::new();
    for c in &set.centroids {
        by_class.entry(c.class_label).or_default().push(c);
    }
    let mut pairs = Vec::new();
    for (class_label, mut members) in by_class {
        if members.len() < 2 {
            warn!("class {} has a single centroid; no pairs sampled", class_label);
            continue;
        }
        members.shuffle(&mut rng);
        for p in members.chunks_exact(2) {
            pairs.push(EndpointPair {
                a: p[0].latent.clone(),
                b: p[1].latent.clone(),
                class_label,
            });
        }
    }
    pairs
}
