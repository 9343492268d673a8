//! Bi-level attack training. The lower level fits the surrogate recommender
//! and the detector on real plus fake data; the upper level takes one Adam
//! step on the rating generator against lambda * L_trans + (1 - lambda) *
//! L_imper. The surrogate and detector are frozen during the generator step,
//! so the only live gradient path is imperceptibility -> detector rating
//! encoder -> straight-through pruning -> autoencoder. L_trans still moves
//! across iterations because the surrogate retrains on the new fakes.

use std::collections::{BTreeMap, HashSet};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::embeddings::EmbeddingTable;
use crate::data::split::SplitDataset;
use crate::data::{Dataset, SparseMatrix};
use crate::detector::{Detector, DetectorConfig, Profiles};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Adam};
use crate::rating_gen::{
    prune, pretrain_reconstruction, relaxed_fake, Autoencoder, FakeRatingMatrix, PRETRAIN_LR,
};
use crate::ranking::topk_by_score;
use crate::review_gen::{build_prompt, generate_reviews, TextBackend};
use crate::rng;
use crate::surrogate::{build_review_documents, DocCorpus, Surrogate, SurrogateConfig, DEFAULT_DOC_LEN};
use crate::templates::{eligible_users, rank_templates, TemplateMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub target_item: usize,
    /// None resolves to ceil(3% of the user population).
    pub attack_size: Option<usize>,
    /// None resolves to the rounded mean profile length.
    pub filler_size: Option<usize>,
    pub lambda: f64,
    pub k: usize,
    /// Returned by l_trans when the target is already in every list.
    pub c: f64,
    pub outer_iterations: usize,
    pub lower_epochs: usize,
    pub detector_steps: usize,
    pub generator_lr: f64,
    /// Reconstruction epochs anchoring the autoencoder to the templates
    /// before the adversarial loop.
    pub pretrain_epochs: usize,
    /// Per-step cap on the number of target users l_trans looks at.
    pub trans_subsample: usize,
    /// Reinitialize the surrogate each outer iteration instead of warm
    /// starting it.
    pub cold_start: bool,
    /// Regenerate fake reviews every outer iteration instead of caching them
    /// per (row, item, rating).
    pub regenerate_reviews: bool,
    pub seed: u64,
    pub surrogate: SurrogateConfig,
    pub detector: DetectorConfig,
    pub doc_len: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            target_item: 0,
            attack_size: None,
            filler_size: None,
            lambda: 0.5,
            k: 10,
            c: 0.01,
            outer_iterations: 8,
            lower_epochs: 2,
            detector_steps: 5,
            generator_lr: 1e-3,
            pretrain_epochs: 200,
            trans_subsample: 128,
            cold_start: false,
            regenerate_reviews: false,
            seed: 0,
            surrogate: SurrogateConfig::default(),
            detector: DetectorConfig::default(),
            doc_len: DEFAULT_DOC_LEN,
        }
    }
}

impl AttackConfig {
    pub fn resolved_attack_size(&self, n_users: usize) -> usize {
        self.attack_size
            .unwrap_or_else(|| (0.03 * n_users as f64).ceil() as usize)
            .max(1)
    }

    pub fn resolved_filler_size(&self, ds: &Dataset) -> usize {
        self.filler_size
            .unwrap_or_else(|| mean_profile_length(ds))
            .clamp(1, ds.n_items())
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.target_item >= ds.n_items() {
            return Err(Error::IndexOutOfRange {
                what: "target item",
                index: self.target_item,
                limit: ds.n_items(),
            });
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0,1], got {}", self.lambda)));
        }
        if self.attack_size == Some(0) {
            return Err(Error::invalid("attack_size must be at least 1"));
        }
        if let Some(f) = self.filler_size {
            if f < 1 || f > ds.n_items() {
                return Err(Error::invalid(format!(
                    "filler_size {f} outside 1..={}",
                    ds.n_items()
                )));
            }
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.lower_epochs == 0 || self.detector_steps == 0 {
            return Err(Error::invalid("lower_epochs and detector_steps must be at least 1"));
        }
        Ok(())
    }
}

pub fn mean_profile_length(ds: &Dataset) -> usize {
    let m = ds.n_users().max(1);
    ((ds.interaction_count() as f64 / m as f64).round() as usize).max(1)
}

/// Fake ratings plus one review per nonzero rating, keyed (fake row, item).
#[derive(Debug, Clone)]
pub struct FakeProfileBatch {
    pub ratings: FakeRatingMatrix,
    pub reviews: BTreeMap<(usize, usize), String>,
}

impl FakeProfileBatch {
    pub fn attack_size(&self) -> usize {
        self.ratings.ratings.n_rows()
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LossPoint {
    pub combined: f64,
    pub l_trans: f64,
    pub l_imper: f64,
    pub l_rs: f64,
    pub l_de: f64,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub fakes: FakeProfileBatch,
    pub loss_trace: Vec<LossPoint>,
    pub generator_checkpoint: Vec<Array2<f64>>,
}

/// Rank-shift loss over target users: per user whose top-K misses the
/// target, sum exp(score of each listed item) - exp(score of target), then
/// log-damp the total. Every list containing the target collapses to `c`.
pub fn l_trans(per_user: &[(Vec<f64>, Vec<usize>)], t: usize, c: f64) -> Result<f64> {
    if per_user.is_empty() {
        return Err(Error::invalid("l_trans needs at least one target user"));
    }
    let mut total = 0.0;
    let mut all_listed = true;
    for (scores, topk) in per_user {
        if topk.contains(&t) {
            continue;
        }
        all_listed = false;
        let et = scores[t].exp();
        for &i in topk {
            total += scores[i].exp() - et;
        }
    }
    if all_listed {
        return Ok(c);
    }
    Ok((total + 1.0).ln())
}

/// Mean log(1 - P(real)) over the fake profiles; lower means the detector is
/// more convinced the fakes are real.
pub fn l_imper(detector: &mut Detector, fakes: &Profiles) -> f64 {
    let ps = detector.classify_batch(fakes);
    ps.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / ps.len().max(1) as f64
}

/// Real train rows stacked over the fake rows.
pub fn poisoned_interactions(train: &SparseMatrix, fakes: &FakeRatingMatrix) -> SparseMatrix {
    let m = train.n_rows();
    let mut out = SparseMatrix::zeros(m + fakes.ratings.n_rows(), train.n_cols());
    for (u, i, v) in train.iter() {
        out.set(u, i, v);
    }
    for (r, i, v) in fakes.ratings.iter() {
        out.set(m + r, i, v);
    }
    out
}

/// Detector view of the real users: dense rating rows plus their embedded
/// review documents.
pub fn real_profiles(train: &SparseMatrix, docs: &DocCorpus) -> Profiles {
    let m = docs.n_real_users;
    let n = train.n_cols();
    let mut ratings = Array2::zeros((m, n));
    for u in 0..m {
        ratings
            .row_mut(u)
            .assign(&ndarray::ArrayView1::from(&train.row_dense(u)));
    }
    let dv = (0..m).map(|u| docs.user_matrix(u)).collect();
    Profiles::new(ratings, dv)
}

/// Detector view of the fake users. Their documents live after the real
/// users in the corpus.
pub fn fake_profiles(fakes: &FakeRatingMatrix, docs: &DocCorpus) -> Profiles {
    let a = fakes.ratings.n_rows();
    let m = docs.n_real_users;
    let n = fakes.ratings.n_cols();
    let mut ratings = Array2::zeros((a, n));
    for r in 0..a {
        ratings
            .row_mut(r)
            .assign(&ndarray::ArrayView1::from(&fakes.ratings.row_dense(r)));
    }
    let dv = (0..a).map(|r| docs.user_matrix(m + r)).collect();
    Profiles::new(ratings, dv)
}

/// Reviews for every nonzero fake rating, generated once per
/// (row, item, rating) and reused while that rating persists. `salt`
/// perturbs the per-review seed when regeneration is requested.
fn cached_fake_reviews(
    cache: &mut BTreeMap<(usize, usize, i64), String>,
    backend: &dyn TextBackend,
    fakes: &FakeRatingMatrix,
    ds: &Dataset,
    seed: u64,
    salt: u64,
) -> Result<BTreeMap<(usize, usize), String>> {
    let mut out = BTreeMap::new();
    for (u, i, v) in fakes.ratings.iter() {
        let r = v.round() as i64;
        let text = match cache.get(&(u, i, r)) {
            Some(t) => t.clone(),
            None => {
                let prompt = build_prompt(r, &ds.attributes[i], ds.scale)?;
                let review_seed = seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add((u as u64) << 32 | i as u64)
                    .wrapping_add(salt);
                let t = backend.generate(&prompt, review_seed);
                cache.insert((u, i, r), t.clone());
                t
            }
        };
        out.insert((u, i), text);
    }
    Ok(out)
}

/// Fit the lower-level models on the poisoned data: rebuild the document
/// corpus with the fake reviews, retrain the surrogate on real plus fake
/// interactions, then run the discriminator steps. Returns the corpus and
/// both loss traces; the detector trace is empty when there are no fakes.
pub fn lower_level(
    ds: &Dataset,
    fakes: Option<(&FakeRatingMatrix, &BTreeMap<(usize, usize), String>)>,
    surrogate: &mut Surrogate,
    detector: &mut Detector,
    table: &EmbeddingTable,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<(DocCorpus, Vec<f64>, Vec<f64>)> {
    let docs = build_review_documents(ds, fakes.map(|(_, rv)| rv), table, cfg.doc_len);
    let interactions = match fakes {
        Some((fm, _)) => poisoned_interactions(&ds.ratings, fm),
        None => ds.ratings.clone(),
    };
    let rs_trace = surrogate.train(&interactions, &docs, cfg.lower_epochs, seed)?;
    let de_trace = match fakes {
        Some((fm, _)) if fm.ratings.n_rows() > 0 => {
            let real = real_profiles(&ds.ratings, &docs);
            let fake = fake_profiles(fm, &docs);
            detector.train(&real, &fake, cfg.detector_steps, seed)?
        }
        _ => Vec::new(),
    };
    Ok((docs, rs_trace, de_trace))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + (-x.abs()).exp()).ln()
}

/// L_trans on the frozen surrogate over a seeded subsample of the target
/// users, with each user's rated items excluded from the candidate list.
fn l_trans_on_surrogate<R: Rng>(
    surrogate: &mut Surrogate,
    docs: &DocCorpus,
    target_users: &[usize],
    rated: &SparseMatrix,
    t: usize,
    cfg: &AttackConfig,
    sample_rng: &mut R,
) -> Result<f64> {
    if target_users.is_empty() {
        return Err(Error::invalid("no target users: every user already rated the target"));
    }
    let subset: Vec<usize> = if cfg.trans_subsample > 0 && target_users.len() > cfg.trans_subsample {
        target_users
            .choose_multiple(sample_rng, cfg.trans_subsample)
            .copied()
            .collect()
    } else {
        target_users.to_vec()
    };
    let item_latents = surrogate.all_item_latents(docs)?;
    let mut per_user = Vec::with_capacity(subset.len());
    for &u in &subset {
        let scores = surrogate.scores_for_user(u, docs, &item_latents)?;
        let excluded: HashSet<usize> = rated.row(u).iter().map(|&(i, _)| i).collect();
        let topk = topk_by_score(&scores, cfg.k, |i| !excluded.contains(&i));
        per_user.push((scores, topk));
    }
    l_trans(&per_user, t, cfg.c)
}

#[derive(Debug, Clone, Copy)]
pub struct UpperStepOutcome {
    pub combined: f64,
    pub l_trans: f64,
    pub l_imper: f64,
}

/// One generator step against the combined loss. The surrogate and detector
/// parameters stay frozen; their accumulated gradients are discarded. The
/// detector is evaluated at the relaxed fakes (filler mask applied, target
/// pinned at r_max, rounding dropped) so the step is the exact gradient of a
/// differentiable relaxation, which is also what the finite-difference
/// acceptance check probes.
#[allow(clippy::too_many_arguments)]
pub fn upper_level_step<R: Rng>(
    gen: &mut Autoencoder,
    gen_opt: &mut Adam,
    surrogate: &mut Surrogate,
    detector: &mut Detector,
    docs: &DocCorpus,
    templates: &TemplateMatrix,
    target_users: &[usize],
    rated: &SparseMatrix,
    f_size: usize,
    cfg: &AttackConfig,
    masks: &[Array2<f64>],
    sample_rng: &mut R,
) -> Result<UpperStepOutcome> {
    let t = templates.target_item;
    let d = gen.forward(&templates.rows, true, Some(masks))?;
    let fakes = prune(&d, templates, f_size, gen.scale);
    let stm = fakes.straight_through_mask();
    let relaxed = relaxed_fake(&d, &stm, t, gen.scale.max as f64);

    let a = d.nrows();
    let w_imper = (1.0 - cfg.lambda) / a as f64;
    let mut li = 0.0;
    let mut drelaxed = Array2::zeros(d.raw_dim());
    detector.zero_grads();
    for r in 0..a {
        let row = relaxed.row(r).to_owned().insert_axis(Axis(0));
        let doc = docs.user_matrix(docs.n_real_users + r);
        let logit = detector.forward_logit(&row, &doc);
        // log(1 - sigmoid(x)) = -softplus(x): stable at any logit
        li -= softplus(logit);
        let dlogit = -sigmoid(logit) * w_imper;
        let dr = detector.backward_ratings(dlogit);
        drelaxed.row_mut(r).assign(&dr.row(0));
    }
    li /= a as f64;
    detector.zero_grads();

    let lt = l_trans_on_surrogate(surrogate, docs, target_users, rated, t, cfg, sample_rng)?;
    let combined = cfg.lambda * lt + (1.0 - cfg.lambda) * li;
    if !combined.is_finite() {
        return Err(Error::NonFinite { stage: "generator step" });
    }

    // straight-through into the autoencoder: the target column is pinned and
    // carries no gradient, non-fillers are masked out
    let dd = drelaxed * &stm;
    gen.zero_grads();
    gen.backward(&dd);
    gen_opt.step(&mut gen.params_mut());
    Ok(UpperStepOutcome { combined, l_trans: lt, l_imper: li })
}

/// Full adversarial loop: alternate lower_level and upper_level_step for
/// outer_iterations, then produce the final fakes with a clean inference
/// pass and one review generation sweep.
pub fn run_attack(
    split: &SplitDataset,
    cfg: &AttackConfig,
    table: &EmbeddingTable,
    backend: &dyn TextBackend,
) -> Result<AttackResult> {
    let ds = &split.train;
    cfg.validate(ds)?;
    let t = cfg.target_item;
    let a_size = cfg.resolved_attack_size(ds.n_users());
    let f_size = cfg.resolved_filler_size(ds);
    let templates = rank_templates(ds, t, a_size)?;
    let target_users = eligible_users(ds, t)?;

    let mut gen_rng = rng::stream(cfg.seed, "generator-init");
    let mut gen = Autoencoder::new(&mut gen_rng, ds.n_items(), ds.scale);
    pretrain_reconstruction(&mut gen, &templates, cfg.pretrain_epochs, PRETRAIN_LR)?;
    let mut gen_opt = Adam::new(cfg.generator_lr);
    let mut mask_rng = rng::stream(cfg.seed, "generator-dropout");
    let mut sample_rng = rng::stream(cfg.seed, "trans-sample");
    let mut seeder = rng::stream(cfg.seed, "attack-iter-seeds");

    let mut sur_rng = rng::stream(cfg.seed, "surrogate-init");
    let mut surrogate = Surrogate::new(
        &mut sur_rng,
        ds.n_users() + a_size,
        ds.n_items(),
        table.dimension,
        cfg.surrogate,
    );
    let mut detector = Detector::new(ds.n_items(), table.dimension, cfg.detector.clone(), cfg.seed);

    let mut cache: BTreeMap<(usize, usize, i64), String> = BTreeMap::new();
    let mut trace = Vec::with_capacity(cfg.outer_iterations);

    for it in 0..cfg.outer_iterations {
        let it_seed: u64 = seeder.gen();
        if cfg.cold_start {
            let mut r = rng::stream(cfg.seed, "surrogate-init");
            surrogate = Surrogate::new(
                &mut r,
                ds.n_users() + a_size,
                ds.n_items(),
                table.dimension,
                cfg.surrogate,
            );
        }
        let d = gen.forward(&templates.rows, false, None)?;
        let fakes = prune(&d, &templates, f_size, ds.scale);
        if cfg.regenerate_reviews {
            cache.clear();
        }
        let salt = if cfg.regenerate_reviews { it as u64 + 1 } else { 0 };
        let reviews = cached_fake_reviews(&mut cache, backend, &fakes, ds, cfg.seed, salt)?;
        let (docs, rs_trace, de_trace) = lower_level(
            ds,
            Some((&fakes, &reviews)),
            &mut surrogate,
            &mut detector,
            table,
            cfg,
            it_seed,
        )?;
        let masks = gen.sample_masks(&mut mask_rng, templates.rows.nrows());
        let out = upper_level_step(
            &mut gen,
            &mut gen_opt,
            &mut surrogate,
            &mut detector,
            &docs,
            &templates,
            &target_users,
            &ds.ratings,
            f_size,
            cfg,
            &masks,
            &mut sample_rng,
        )?;
        trace.push(LossPoint {
            combined: out.combined,
            l_trans: out.l_trans,
            l_imper: out.l_imper,
            l_rs: *rs_trace.last().expect("lower_epochs >= 1"),
            l_de: *de_trace.last().expect("detector_steps >= 1"),
        });
    }

    let d = gen.forward(&templates.rows, false, None)?;
    let fakes = prune(&d, &templates, f_size, ds.scale);
    let reviews = generate_reviews(backend, &fakes, ds, cfg.seed)?;
    Ok(AttackResult {
        fakes: FakeProfileBatch { ratings: fakes, reviews },
        loss_trace: trace,
        generator_checkpoint: gen.tensors(),
    })
}
