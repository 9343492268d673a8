//! Top-K metrics and the end-to-end attack evaluation: a victim is trained
//! twice under identical seeds, once clean and once with the fake profiles
//! stacked underneath, and the promotion of the target item across the two
//! runs is the attack's measured effect.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::attack::{poisoned_interactions, FakeProfileBatch};
use crate::data::embeddings::EmbeddingTable;
use crate::data::split::SplitDataset;
use crate::detector::{Detector, Profiles};
use crate::error::{Error, Result};
use crate::victims::{fit_victim, victim_topk, VictimConfig, VictimInput, VictimKind};

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub victim: String,
    pub dataset: String,
    pub attack: String,
    pub attack_size: usize,
    pub filler_size: usize,
    pub k: usize,
    pub hr_before: f64,
    pub hr_after: f64,
    pub ndcg_before: f64,
    pub ndcg_after: f64,
    pub seed: u64,
    pub runtime_seconds: f64,
}

/// Fraction of target users whose list contains t.
pub fn hit_ratio(
    topk_lists: &BTreeMap<usize, Vec<usize>>,
    t: usize,
    target_users: &[usize],
) -> Result<f64> {
    if target_users.is_empty() {
        return Err(Error::invalid("no target users: every user already rated the target item"));
    }
    let mut hits = 0usize;
    for u in target_users {
        let list = topk_lists
            .get(u)
            .ok_or_else(|| Error::invalid(format!("user {u} has no recommendation list")))?;
        if list.contains(&t) {
            hits += 1;
        }
    }
    Ok(hits as f64 / target_users.len() as f64)
}

/// Single-relevant-item NDCG: gain 1/log2(rank+1) at t's 1-based rank, 0
/// when absent; the ideal list scores 1.
pub fn ndcg(
    topk_lists: &BTreeMap<usize, Vec<usize>>,
    t: usize,
    target_users: &[usize],
) -> Result<f64> {
    if target_users.is_empty() {
        return Err(Error::invalid("no target users: every user already rated the target item"));
    }
    let mut total = 0.0;
    for u in target_users {
        let list = topk_lists
            .get(u)
            .ok_or_else(|| Error::invalid(format!("user {u} has no recommendation list")))?;
        if let Some(pos) = list.iter().position(|&i| i == t) {
            total += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    Ok(total / target_users.len() as f64)
}

/// Real users with no training interaction on t; fake rows never qualify
/// because only indices below the real user count are considered.
pub fn target_users(split: &SplitDataset, t: usize) -> Vec<usize> {
    let ds = &split.train;
    (0..ds.n_users()).filter(|&u| ds.ratings.get(u, t) == 0.0).collect()
}

fn topk_over(
    model: &mut dyn crate::victims::VictimModel,
    split: &SplitDataset,
    users: &[usize],
    k: usize,
) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut lists = BTreeMap::new();
    for &u in users {
        let rated: Vec<usize> =
            split.train.ratings.row(u).iter().map(|&(i, _)| i).collect();
        lists.insert(u, victim_topk(model, u, k, &rated)?);
    }
    Ok(lists)
}

/// Labels carried into the report; the evaluation itself never reads them.
#[derive(Debug, Clone, Copy)]
pub struct EvalLabels<'a> {
    pub dataset: &'a str,
    pub attack: &'a str,
}

pub fn evaluate_attack(
    split: &SplitDataset,
    fakes: &FakeProfileBatch,
    kind: VictimKind,
    victim_cfg: &VictimConfig,
    table: &EmbeddingTable,
    k: usize,
    labels: EvalLabels,
    seed: u64,
) -> Result<EvaluationReport> {
    let started = std::time::Instant::now();
    let ds = &split.train;
    let t = fakes.ratings.target_item;
    let users = target_users(split, t);
    if users.is_empty() {
        return Err(Error::invalid("no target users: every user already rated the target item"));
    }

    let clean_input =
        VictimInput { interactions: &ds.ratings, ds, fake_reviews: None, table };
    let mut clean = fit_victim(kind, &clean_input, victim_cfg, seed)?;
    let before = topk_over(clean.as_mut(), split, &users, k)?;

    let poisoned = poisoned_interactions(&ds.ratings, &fakes.ratings);
    let poisoned_input = VictimInput {
        interactions: &poisoned,
        ds,
        fake_reviews: Some(&fakes.reviews),
        table,
    };
    let mut dirty = fit_victim(kind, &poisoned_input, victim_cfg, seed)?;
    let after = topk_over(dirty.as_mut(), split, &users, k)?;

    let filler_size = fakes
        .ratings
        .filler_masks
        .first()
        .map(|m| m.iter().filter(|&&b| b).count() + 1)
        .unwrap_or(0);
    Ok(EvaluationReport {
        victim: kind.name().to_string(),
        dataset: labels.dataset.to_string(),
        attack: labels.attack.to_string(),
        attack_size: fakes.attack_size(),
        filler_size,
        k,
        hr_before: hit_ratio(&before, t, &users)?,
        hr_after: hit_ratio(&after, t, &users)?,
        ndcg_before: ndcg(&before, t, &users)?,
        ndcg_after: ndcg(&after, t, &users)?,
        seed,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Writes every profile representation the detector computes, one labelled
/// row per profile, for external 2-D projection.
pub fn export_representations(
    detector: &mut Detector,
    real: &Profiles,
    fakes: &Profiles,
    path: &Path,
) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let mut out = Vec::new();
    let width = detector.repr_width();
    write!(out, "profile_id,is_fake").map_err(io_err)?;
    for c in 0..width {
        write!(out, ",f{c}").map_err(io_err)?;
    }
    writeln!(out).map_err(io_err)?;
    let mut dump = |profiles: &Profiles, offset: usize, flag: u8| -> Result<()> {
        for r in 0..profiles.len() {
            let ratings = profiles.ratings.row(r).insert_axis(ndarray::Axis(0)).to_owned();
            let repr = detector.profile_repr(&ratings, &profiles.docs[r]);
            write!(out, "{},{flag}", offset + r).map_err(io_err)?;
            for v in repr.iter() {
                write!(out, ",{v}").map_err(io_err)?;
            }
            writeln!(out).map_err(io_err)?;
        }
        Ok(())
    };
    dump(real, 0, 0)?;
    dump(fakes, real.len(), 1)?;
    std::fs::write(path, out).map_err(io_err)
}
