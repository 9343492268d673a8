//! Dataset construction: indexed users/items, sparse explicit ratings,
//! per-interaction review text and per-item attributes.

pub mod embeddings;
pub mod ingest;
pub mod sparse;
pub mod split;
pub mod synthetic;
pub mod tokenize;

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
pub use sparse::{binarize, SparseMatrix};

/// One user-item interaction as read from a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user_external_id: String,
    pub item_external_id: String,
    pub rating: f64,
    pub review_text: String,
    pub timestamp: Option<i64>,
}

/// Item-side metadata used for prompt construction and template ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemAttributes {
    pub item_external_id: String,
    pub name: String,
    pub categories: Vec<String>,
}

/// Inclusive integer rating bounds, e.g. (1, 5) for a 5-point Likert scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingScale {
    pub min: i64,
    pub max: i64,
}

impl RatingScale {
    pub fn new(min: i64, max: i64) -> Result<Self> {
        if min >= max {
            return Err(Error::invalid(format!(
                "rating scale must satisfy min < max, got ({min}, {max})"
            )));
        }
        Ok(RatingScale { min, max })
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min as f64 && r <= self.max as f64
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) as f64
    }
}

/// Bijection between external string ids and dense 0-based indices,
/// assigned in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct Index {
    to_id: Vec<String>,
    to_idx: HashMap<String, usize>,
}

impl Index {
    pub fn insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.to_idx.get(id) {
            return i;
        }
        let i = self.to_id.len();
        self.to_id.push(id.to_string());
        self.to_idx.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.to_idx.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.to_id[idx]
    }

    pub fn len(&self) -> usize {
        self.to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_id.is_empty()
    }
}

/// Immutable indexed dataset. Reviews carry one entry per stored interaction
/// (possibly the empty string), so `reviews` keys coincide with rating
/// nonzeros.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub users: Index,
    pub items: Index,
    pub ratings: SparseMatrix,
    pub reviews: BTreeMap<(usize, usize), String>,
    pub attributes: Vec<ItemAttributes>,
    pub scale: RatingScale,
    pub timestamps: BTreeMap<(usize, usize), i64>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn interaction_count(&self) -> usize {
        self.ratings.nnz()
    }

    pub fn review(&self, u: usize, i: usize) -> Option<&str> {
        self.reviews.get(&(u, i)).map(String::as_str)
    }

    /// Items interacted with by `u`, ascending.
    pub fn user_items(&self, u: usize) -> Vec<usize> {
        self.ratings.row(u).iter().map(|&(i, _)| i).collect()
    }

    /// Mean nonzero count per user, the default filler-size source.
    pub fn mean_profile_len(&self) -> f64 {
        if self.n_users() == 0 {
            return 0.0;
        }
        self.interaction_count() as f64 / self.n_users() as f64
    }

    /// Copy of this dataset restricted to the given interactions. Indices are
    /// preserved, so user/item counts do not change.
    pub fn restricted_to(&self, keep: &HashSet<(usize, usize)>) -> Dataset {
        let mut ratings = SparseMatrix::zeros(self.n_users(), self.n_items());
        let mut reviews = BTreeMap::new();
        let mut timestamps = BTreeMap::new();
        for (u, i, v) in self.ratings.iter() {
            if keep.contains(&(u, i)) {
                ratings.set(u, i, v);
                if let Some(t) = self.reviews.get(&(u, i)) {
                    reviews.insert((u, i), t.clone());
                }
                if let Some(&t) = self.timestamps.get(&(u, i)) {
                    timestamps.insert((u, i), t);
                }
            }
        }
        Dataset {
            users: self.users.clone(),
            items: self.items.clone(),
            ratings,
            reviews,
            attributes: self.attributes.clone(),
            scale: self.scale,
            timestamps,
        }
    }
}

/// Build an indexed dataset from raw interactions and item attributes.
///
/// Duplicate (user, item) pairs keep the last occurrence. A rating outside
/// the scale is fatal. Items with interactions but no attributes get
/// defaulted attributes (name = external id, no categories); a count of such
/// items is returned alongside.
pub fn build_dataset(
    raw: &[RawInteraction],
    attrs: &[ItemAttributes],
    scale: RatingScale,
) -> Result<Dataset> {
    let mut users = Index::default();
    let mut items = Index::default();
    for r in raw {
        if !scale.contains(r.rating) {
            return Err(Error::RatingOutOfScale {
                rating: r.rating,
                min: scale.min,
                max: scale.max,
                user: r.user_external_id.clone(),
                item: r.item_external_id.clone(),
            });
        }
        users.insert(&r.user_external_id);
        items.insert(&r.item_external_id);
    }
    if users.is_empty() || items.is_empty() {
        return Err(Error::invalid("dataset must contain at least one user and one item"));
    }

    let mut ratings = SparseMatrix::zeros(users.len(), items.len());
    let mut reviews = BTreeMap::new();
    let mut timestamps = BTreeMap::new();
    for r in raw {
        let u = users.get(&r.user_external_id).unwrap();
        let i = items.get(&r.item_external_id).unwrap();
        // keep-last rule for re-reviews
        ratings.set(u, i, r.rating);
        reviews.insert((u, i), r.review_text.clone());
        match r.timestamp {
            Some(t) => {
                timestamps.insert((u, i), t);
            }
            None => {
                timestamps.remove(&(u, i));
            }
        }
    }

    let by_id: HashMap<&str, &ItemAttributes> = attrs
        .iter()
        .map(|a| (a.item_external_id.as_str(), a))
        .collect();
    let mut defaulted = 0usize;
    let attributes = (0..items.len())
        .map(|i| {
            let id = items.id(i);
            match by_id.get(id) {
                Some(a) => ItemAttributes {
                    item_external_id: id.to_string(),
                    name: if a.name.is_empty() { id.to_string() } else { a.name.clone() },
                    categories: a.categories.clone(),
                },
                None => {
                    defaulted += 1;
                    ItemAttributes {
                        item_external_id: id.to_string(),
                        name: id.to_string(),
                        categories: Vec::new(),
                    }
                }
            }
        })
        .collect();
    if defaulted > 0 {
        eprintln!("warning: {defaulted} item(s) had no attributes; defaulted to external id");
    }

    Ok(Dataset {
        users,
        items,
        ratings,
        reviews,
        attributes,
        scale,
        timestamps,
    })
}

/// Basic dataset statistics: (users, items, interactions, sparsity).
/// Sparsity = 1 - count / (m * n), reported to 4 decimals.
pub fn dataset_stats(ds: &Dataset) -> (usize, usize, usize, f64) {
    stats_from_counts(ds.n_users(), ds.n_items(), ds.interaction_count())
}

pub fn stats_from_counts(m: usize, n: usize, count: usize) -> (usize, usize, usize, f64) {
    let sparsity = 1.0 - count as f64 / (m as f64 * n as f64);
    (m, n, count, (sparsity * 10_000.0).round() / 10_000.0)
}
