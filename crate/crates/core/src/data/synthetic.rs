//! Planted-cluster synthetic dataset: users and items share cluster labels,
//! in-cluster interactions are rated high (4-5) and cross-cluster low (1-2).
//! Review text comes from the deterministic template backend, and item
//! categories carry the cluster label, so the whole attack pipeline can run
//! on it without external data.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dataset, Index, ItemAttributes, RatingScale, SparseMatrix};
use crate::error::Result;
use crate::review_gen;
use crate::rng;

pub fn generate_synthetic_dataset(
    users: usize,
    items: usize,
    clusters: usize,
    density: f64,
    seed: u64,
) -> Result<Dataset> {
    assert!(users > 0 && items > 0 && clusters > 0, "parameters positive");
    assert!((0.0..=1.0).contains(&density), "density in [0, 1]");
    let scale = RatingScale::new(1, 5)?;
    let clusters = clusters.min(users).min(items);
    let mut r = rng::stream(seed, "synthetic");

    let item_cluster: Vec<usize> = (0..items).map(|i| i % clusters).collect();
    let user_cluster: Vec<usize> = (0..users).map(|u| u % clusters).collect();

    let per_user = ((density * items as f64).round() as usize).clamp(1, items);
    let in_share = 0.8_f64;

    // preregister every id so indices match the numeric suffix even when an
    // item happens to go unrated at low density
    let mut user_index = Index::default();
    for u in 0..users {
        user_index.insert(&format!("user-{u}"));
    }
    let mut item_index = Index::default();
    for i in 0..items {
        item_index.insert(&format!("item-{i}"));
    }

    let mut ratings = SparseMatrix::zeros(users, items);
    let mut reviews = BTreeMap::new();
    for u in 0..users {
        let own: Vec<usize> = (0..items).filter(|&i| item_cluster[i] == user_cluster[u]).collect();
        let other: Vec<usize> = (0..items).filter(|&i| item_cluster[i] != user_cluster[u]).collect();
        let mut own = own;
        let mut other = other;
        own.shuffle(&mut r);
        other.shuffle(&mut r);
        let want_in = ((per_user as f64) * in_share).round() as usize;
        let k_in = want_in.min(own.len());
        let k_out = (per_user - k_in).min(other.len());
        let k_in = (per_user - k_out).min(own.len()); // backfill if the other pool ran short
        let mut picks: Vec<(usize, bool)> = own[..k_in].iter().map(|&i| (i, true)).collect();
        picks.extend(other[..k_out].iter().map(|&i| (i, false)));
        picks.sort_unstable();
        for (i, in_cluster) in picks {
            let rating = if in_cluster {
                r.gen_range(4..=5) as f64
            } else {
                r.gen_range(1..=2) as f64
            };
            let label = review_gen::sentiment_label(rating as i64, scale)?;
            ratings.set(u, i, rating);
            reviews.insert((u, i), review_gen::deterministic_review_text(label, &format!("item-{i}")));
        }
    }

    let attributes: Vec<ItemAttributes> = (0..items)
        .map(|i| ItemAttributes {
            item_external_id: format!("item-{i}"),
            name: format!("item-{i}"),
            categories: vec![format!("cluster-{}", item_cluster[i])],
        })
        .collect();
    Ok(Dataset {
        users: user_index,
        items: item_index,
        ratings,
        reviews,
        attributes,
        scale,
        timestamps: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_density_rates_everything() {
        let ds = generate_synthetic_dataset(6, 8, 2, 1.0, 3).unwrap();
        assert_eq!(ds.interaction_count(), 6 * 8);
    }

    #[test]
    fn cluster_signal_present() {
        let ds = generate_synthetic_dataset(40, 30, 3, 0.3, 5).unwrap();
        let mut in_sum = 0.0;
        let mut in_n = 0usize;
        let mut out_sum = 0.0;
        let mut out_n = 0usize;
        for (u, i, v) in ds.ratings.iter() {
            let u_cluster = ds.users.id(u).trim_start_matches("user-").parse::<usize>().unwrap() % 3;
            let i_cluster = ds.attributes[i].categories[0]
                .trim_start_matches("cluster-")
                .parse::<usize>()
                .unwrap();
            if u_cluster == i_cluster {
                in_sum += v;
                in_n += 1;
            } else {
                out_sum += v;
                out_n += 1;
            }
        }
        assert!(in_n > 0 && out_n > 0);
        assert!(in_sum / in_n as f64 > out_sum / out_n as f64);
    }

    #[test]
    fn same_seed_identical() {
        let a = generate_synthetic_dataset(10, 12, 2, 0.4, 11).unwrap();
        let b = generate_synthetic_dataset(10, 12, 2, 0.4, 11).unwrap();
        assert_eq!(a.interaction_count(), b.interaction_count());
        let va: Vec<_> = a.ratings.iter().collect();
        let vb: Vec<_> = b.ratings.iter().collect();
        assert_eq!(va, vb);
        assert_eq!(a.reviews, b.reviews);
    }

    #[test]
    fn reviews_accompany_every_interaction() {
        let ds = generate_synthetic_dataset(5, 6, 2, 0.5, 2).unwrap();
        for (u, i, _) in ds.ratings.iter() {
            assert!(ds.review(u, i).map(|t| !t.is_empty()).unwrap_or(false));
        }
    }
}
