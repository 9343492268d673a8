//! Template selection: pick the A real users most aligned with the target
//! item's category neighborhood and copy their rating rows as generator
//! inputs. Source users never rated the target.

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TemplateMatrix {
    pub rows: Array2<f64>, // (A, n), zeros where the source user has no rating
    pub source_users: Vec<usize>,
    pub target_item: usize,
}

impl TemplateMatrix {
    pub fn attack_size(&self) -> usize {
        self.rows.nrows()
    }
}

/// Users with no rating on t, ascending.
pub fn eligible_users(ds: &Dataset, t: usize) -> Result<Vec<usize>> {
    if t >= ds.n_items() {
        return Err(Error::IndexOutOfRange { what: "item", index: t, limit: ds.n_items() });
    }
    Ok((0..ds.n_users()).filter(|&u| ds.ratings.get(u, t) == 0.0).collect())
}

/// Items sharing at least one category with t, including t itself. A target
/// without categories degenerates to {t} with a warning.
pub fn similar_item_set(ds: &Dataset, t: usize) -> Result<BTreeSet<usize>> {
    if t >= ds.n_items() {
        return Err(Error::IndexOutOfRange { what: "item", index: t, limit: ds.n_items() });
    }
    let target_cats: BTreeSet<&String> = ds.attributes[t].categories.iter().collect();
    if target_cats.is_empty() {
        eprintln!(
            "warning: target item {} has no categories; similar item set degenerates to the target itself",
            ds.items.id(t)
        );
        return Ok(BTreeSet::from([t]));
    }
    let mut set: BTreeSet<usize> = (0..ds.n_items())
        .filter(|&i| ds.attributes[i].categories.iter().any(|c| target_cats.contains(c)))
        .collect();
    set.insert(t);
    Ok(set)
}

/// Rank eligible users by (|I_u ∩ I_s| desc, |I_u| desc, index asc) and copy
/// the first A rows, cycling the ranked list when fewer than A users exist.
pub fn rank_templates(ds: &Dataset, t: usize, attack_size: usize) -> Result<TemplateMatrix> {
    assert!(attack_size >= 1);
    let eligible = eligible_users(ds, t)?;
    if eligible.is_empty() {
        return Err(Error::NoEligibleUsers);
    }
    let similar = similar_item_set(ds, t)?;
    let mut ranked: Vec<(usize, usize, usize)> = eligible
        .iter()
        .map(|&u| {
            let items = ds.user_items(u);
            let overlap = items.iter().filter(|i| similar.contains(i)).count();
            (overlap, items.len(), u)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));

    let n = ds.n_items();
    let mut rows = Array2::zeros((attack_size, n));
    let mut source_users = Vec::with_capacity(attack_size);
    for k in 0..attack_size {
        let (_, _, u) = ranked[k % ranked.len()];
        source_users.push(u);
        for &(i, v) in ds.ratings.row(u) {
            rows[(k, i)] = v;
        }
    }
    debug_assert!(source_users.iter().all(|&u| ds.ratings.get(u, t) == 0.0));
    Ok(TemplateMatrix { rows, source_users, target_item: t })
}
