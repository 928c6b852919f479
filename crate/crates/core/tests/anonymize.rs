//! k-same grouping and endpoint pairing invariants.

use std::collections::{BTreeMap, BTreeSet};

use latent_walk::anonymize::{ksame_centroids, sample_pairs, ProjectedLatent};
use latent_walk::models::LatentPoint;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn population(class_sizes: &[usize], seed: u64, d: usize) -> Vec<ProjectedLatent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut id = 0;
    for (c, &n) in class_sizes.iter().enumerate() {
        for _ in 0..n {
            let latent = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            out.push(ProjectedLatent {
                latent: LatentPoint(latent),
                identity: 1000 + id,
                class_label: c,
            });
            id += 1;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn groups_partition_identities_and_average_exactly(
        k in 2usize..7,
        extra in prop::collection::vec(0usize..20, 1..5),
        data_seed in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let sizes: Vec<usize> = extra.iter().map(|e| k + e).collect();
        let pop = population(&sizes, data_seed, 3);
        let set = ksame_centroids(&pop, k, seed).unwrap();
        let lookup: BTreeMap<usize, &ProjectedLatent> = pop.iter().map(|p| (p.identity, p)).collect();

        for (c, &n) in sizes.iter().enumerate() {
            prop_assert_eq!(set.count_in_class(c), n / k);
        }
        let mut used = BTreeSet::new();
        for cen in &set.centroids {
            prop_assert_eq!(cen.members.len(), k);
            for m in &cen.members {
                prop_assert!(used.insert(*m), "identity {} in two groups", m);
                prop_assert_eq!(lookup[m].class_label, cen.class_label);
            }
            for j in 0..3 {
                let mean = cen.members.iter().map(|m| lookup[m].latent.0[j]).sum::<f64>() / k as f64;
                prop_assert!((mean - cen.latent.0[j]).abs() < 1e-12);
            }
            // Members are distinct Gaussian draws, so no centroid can equal an input latent.
            prop_assert!(pop.iter().all(|p| p.latent != cen.latent));
        }
    }

    #[test]
    fn pairs_are_disjoint_and_same_class(
        per_class in prop::collection::vec(2usize..12, 1..5),
        data_seed in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let pop = population(&per_class.iter().map(|n| 2 * n).collect::<Vec<_>>(), data_seed, 2);
        let set = ksame_centroids(&pop, 2, 1).unwrap();
        let pairs = sample_pairs(&set, seed);
        prop_assert_eq!(&pairs, &sample_pairs(&set, seed));
        for (c, &n) in per_class.iter().enumerate() {
            prop_assert_eq!(pairs.iter().filter(|p| p.class_label == c).count(), n / 2);
        }
        let mut seen = BTreeSet::new();
        for p in &pairs {
            for w in [&p.a, &p.b] {
                let owner = set.centroids.iter().find(|c| &c.latent == w).unwrap();
                prop_assert_eq!(owner.class_label, p.class_label);
                let key = format!("{:?}", w.0);
                prop_assert!(seen.insert(key));
            }
        }
    }
}

#[test]
fn ten_members_with_k_five_give_two_centroids() {
    let pop = population(&[10], 1, 2);
    let set = ksame_centroids(&pop, 5, 3).unwrap();
    assert_eq!(set.centroids.len(), 2);
}

#[test]
fn two_points_average_to_their_midpoint() {
    let pop = vec![
        ProjectedLatent { latent: LatentPoint(vec![0.0, 0.0]), identity: 0, class_label: 0 },
        ProjectedLatent { latent: LatentPoint(vec![2.0, 2.0]), identity: 1, class_label: 0 },
    ];
    let set = ksame_centroids(&pop, 2, 0).unwrap();
    assert_eq!(set.centroids[0].latent, LatentPoint(vec![1.0, 1.0]));
}

#[test]
fn undersized_class_is_rejected_by_id() {
    let pop = population(&[6, 3], 2, 2);
    let err = ksame_centroids(&pop, 5, 0).unwrap_err().to_string();
    assert!(err.contains("class 1"), "{}", err);
}

#[test]
fn lone_centroid_class_is_skipped() {
    let pop = population(&[4, 2], 3, 2);
    let set = ksame_centroids(&pop, 2, 0).unwrap();
    let pairs = sample_pairs(&set, 9);
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].class_label, 0);
}

#[test]
fn shareable_export_drops_members() {
    let pop = population(&[4], 3, 2);
    let set = ksame_centroids(&pop, 2, 0).unwrap();
    let json = serde_json::to_string(&set.shareable()).unwrap();
    assert!(!json.contains("members"));
    assert!(!json.contains("1000"));
}
