//! Black-box victim recommenders for transferability evaluation, plus the
//! heuristic baseline attacks. Victims consume a (possibly poisoned)
//! interaction matrix and never expose gradients; the review-based kinds
//! additionally read the review documents.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::attack::{AttackConfig, FakeProfileBatch};
use crate::data::embeddings::EmbeddingTable;
use crate::data::{Dataset, SparseMatrix};
use crate::detector::PROB_EPS;
use crate::error::{Error, Result};
use crate::nn::{normal, sigmoid, Adam, Dense, Param, Relu};
use crate::ranking::topk_by_score;
use crate::rating_gen::{round_off, FakeRatingMatrix};
use crate::review_gen::{generate_reviews, TextBackend};
use crate::rng;
use crate::surrogate::{build_review_documents, epoch_examples, DocCorpus, Surrogate, SurrogateConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VictimKind {
    Wrmf,
    Ncf,
    LightGcn,
    DeepConn,
    DeepConnPlusPlus,
}

impl VictimKind {
    pub fn name(&self) -> &'static str {
        match self {
            VictimKind::Wrmf => "wrmf",
            VictimKind::Ncf => "ncf",
            VictimKind::LightGcn => "lightgcn",
            VictimKind::DeepConn => "deepconn",
            VictimKind::DeepConnPlusPlus => "deepconn++",
        }
    }

    pub const ALL: [VictimKind; 5] = [
        VictimKind::Wrmf,
        VictimKind::Ncf,
        VictimKind::LightGcn,
        VictimKind::DeepConn,
        VictimKind::DeepConnPlusPlus,
    ];
}

impl std::str::FromStr for VictimKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wrmf" => Ok(VictimKind::Wrmf),
            "ncf" => Ok(VictimKind::Ncf),
            "lightgcn" => Ok(VictimKind::LightGcn),
            "deepconn" => Ok(VictimKind::DeepConn),
            "deepconn++" => Ok(VictimKind::DeepConnPlusPlus),
            other => Err(Error::UnknownName {
                kind: "victim",
                name: other.to_string(),
                known: "wrmf, ncf, lightgcn, deepconn, deepconn++".to_string(),
            }),
        }
    }
}

/// Desk-scale defaults; every knob stays overridable through the experiment
/// config.
#[derive(Debug, Clone, PartialEq)]
pub struct VictimConfig {
    pub factors: usize,
    pub wrmf_reg: f64,
    pub wrmf_alpha: f64,
    pub wrmf_sweeps: usize,
    pub ncf_layers: Vec<usize>,
    pub ncf_epochs: usize,
    pub ncf_lr: f64,
    pub lightgcn_layers: usize,
    pub lightgcn_epochs: usize,
    pub lightgcn_lr: f64,
    pub lightgcn_reg: f64,
    pub neg_ratio: usize,
    pub batch: usize,
    pub deepconn: SurrogateConfig,
    pub doc_len: usize,
}

impl Default for VictimConfig {
    fn default() -> Self {
        VictimConfig {
            factors: 32,
            wrmf_reg: 0.01,
            wrmf_alpha: 40.0,
            wrmf_sweeps: 15,
            ncf_layers: vec![64, 32, 16],
            ncf_epochs: 10,
            ncf_lr: 1e-3,
            lightgcn_layers: 3,
            lightgcn_epochs: 15,
            lightgcn_lr: 1e-2,
            lightgcn_reg: 1e-4,
            neg_ratio: 4,
            batch: 256,
            deepconn: SurrogateConfig::default(),
            doc_len: crate::surrogate::DEFAULT_DOC_LEN,
        }
    }
}

/// Everything a victim may consume. Rating-only victims ignore the reviews.
pub struct VictimInput<'a> {
    pub interactions: &'a SparseMatrix,
    pub ds: &'a Dataset,
    pub fake_reviews: Option<&'a BTreeMap<(usize, usize), String>>,
    pub table: &'a EmbeddingTable,
}

pub trait VictimModel {
    fn name(&self) -> &'static str;
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Preference score for user u against every item.
    fn scores(&mut self, u: usize) -> Result<Vec<f64>>;
}

/// Shared top-K rule: score descending, index ascending, exclusions dropped.
pub fn victim_topk(model: &mut dyn VictimModel, u: usize, k: usize, exclude: &[usize]) -> Result<Vec<usize>> {
    let scores = model.scores(u)?;
    let excluded: std::collections::HashSet<usize> = exclude.iter().copied().collect();
    Ok(topk_by_score(&scores, k, |i| !excluded.contains(&i)))
}

pub fn fit_victim(
    kind: VictimKind,
    input: &VictimInput,
    cfg: &VictimConfig,
    seed: u64,
) -> Result<Box<dyn VictimModel>> {
    match kind {
        VictimKind::Wrmf => Ok(Box::new(Wrmf::fit(input.interactions, cfg, seed)?)),
        VictimKind::Ncf => Ok(Box::new(Ncf::fit(input.interactions, cfg, seed)?)),
        VictimKind::LightGcn => Ok(Box::new(LightGcn::fit(input.interactions, cfg, seed)?)),
        VictimKind::DeepConn => Ok(Box::new(DeepConnVictim::fit(input, cfg, false, seed)?)),
        VictimKind::DeepConnPlusPlus => Ok(Box::new(DeepConnVictim::fit(input, cfg, true, seed)?)),
    }
}

/// Solve a x = b for a symmetric positive definite matrix via Cholesky.
pub fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::invalid("matrix is not positive definite"));
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

/// Implicit-feedback weighted matrix factorization, alternating least
/// squares with confidence 1 + alpha on observed entries.
pub struct Wrmf {
    pub user_f: Array2<f64>,
    pub item_f: Array2<f64>,
}

impl Wrmf {
    pub fn fit(interactions: &SparseMatrix, cfg: &VictimConfig, seed: u64) -> Result<Self> {
        let bin = interactions.binarized();
        let (m, n) = (bin.n_rows(), bin.n_cols());
        let f = cfg.factors;
        let mut r = rng::stream(seed, "wrmf-init");
        let mut x = Array2::from_shape_fn((m, f), |_| normal(&mut r) * 0.1);
        let mut y = Array2::from_shape_fn((n, f), |_| normal(&mut r) * 0.1);

        let mut item_users: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, i, _) in bin.iter() {
            item_users[i].push(u);
        }
        let user_items: Vec<Vec<usize>> =
            (0..m).map(|u| bin.row(u).iter().map(|&(i, _)| i).collect()).collect();

        for _ in 0..cfg.wrmf_sweeps {
            Self::solve_side(&mut x, &y, &user_items, cfg.wrmf_reg, cfg.wrmf_alpha)?;
            Self::solve_side(&mut y, &x, &item_users, cfg.wrmf_reg, cfg.wrmf_alpha)?;
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "wrmf training" });
        }
        Ok(Wrmf { user_f: x, item_f: y })
    }

    /// One ALS half-sweep: for every row of `target`, solve
    /// (G + alpha * sum_o y_o y_o^T) x = (1 + alpha) * sum_o y_o
    /// where G = Y^T Y + reg I and o ranges over that row's observations.
    fn solve_side(
        target: &mut Array2<f64>,
        other: &Array2<f64>,
        observed: &[Vec<usize>],
        reg: f64,
        alpha: f64,
    ) -> Result<()> {
        let f = other.ncols();
        let mut gram = other.t().dot(other);
        for k in 0..f {
            gram[(k, k)] += reg;
        }
        for (row, obs) in observed.iter().enumerate() {
            let mut a = gram.clone();
            let mut b = Array1::zeros(f);
            for &o in obs {
                let yo = other.row(o);
                for p in 0..f {
                    b[p] += (1.0 + alpha) * yo[p];
                    for q in 0..f {
                        a[(p, q)] += alpha * yo[p] * yo[q];
                    }
                }
            }
            let x = cholesky_solve(&a, &b)?;
            target.row_mut(row).assign(&x);
        }
        Ok(())
    }
}

impl VictimModel for Wrmf {
    fn name(&self) -> &'static str {
        "wrmf"
    }
    fn n_users(&self) -> usize {
        self.user_f.nrows()
    }
    fn n_items(&self) -> usize {
        self.item_f.nrows()
    }
    fn scores(&mut self, u: usize) -> Result<Vec<f64>> {
        if u >= self.n_users() {
            return Err(Error::IndexOutOfRange { what: "user", index: u, limit: self.n_users() });
        }
        Ok(self.item_f.dot(&self.user_f.row(u)).to_vec())
    }
}

/// Neural collaborative filtering, MLP flavor: id embeddings concatenated
/// into a ReLU tower, BCE over sampled negatives.
pub struct Ncf {
    user_emb: Param,
    item_emb: Param,
    layers: Vec<Dense>,
    relus: Vec<Relu>,
    out: Dense,
    opt: Adam,
    pub trace: Vec<f64>,
}

impl Ncf {
    pub fn fit(interactions: &SparseMatrix, cfg: &VictimConfig, seed: u64) -> Result<Self> {
        let (m, n) = (interactions.n_rows(), interactions.n_cols());
        let mut r = rng::stream(seed, "ncf-init");
        let f = cfg.factors;
        let mut prev = 2 * f;
        let mut layers = Vec::with_capacity(cfg.ncf_layers.len());
        let mut relus = Vec::with_capacity(cfg.ncf_layers.len());
        for &w in &cfg.ncf_layers {
            layers.push(Dense::new(&mut r, prev, w));
            relus.push(Relu::default());
            prev = w;
        }
        let out = Dense::new(&mut r, prev, 1);
        let mut model = Ncf {
            user_emb: Param::new(Array2::from_shape_fn((m, f), |_| normal(&mut r) * 0.01)),
            item_emb: Param::new(Array2::from_shape_fn((n, f), |_| normal(&mut r) * 0.01)),
            layers,
            relus,
            out,
            opt: Adam::new(cfg.ncf_lr),
            trace: Vec::new(),
        };
        model.train(interactions, cfg, seed)?;
        Ok(model)
    }

    fn logit(&mut self, u: usize, i: usize) -> f64 {
        let f = self.user_emb.w.ncols();
        let mut z = Array2::zeros((1, 2 * f));
        z.slice_mut(ndarray::s![0, ..f]).assign(&self.user_emb.w.row(u));
        z.slice_mut(ndarray::s![0, f..]).assign(&self.item_emb.w.row(i));
        let mut h = z;
        for (d, relu) in self.layers.iter_mut().zip(self.relus.iter_mut()) {
            h = relu.forward(&d.forward(&h));
        }
        self.out.forward(&h)[(0, 0)]
    }

    fn example_step(&mut self, u: usize, i: usize, label: f64, weight: f64) -> f64 {
        let logit = self.logit(u, i);
        let loss = logit.max(0.0) - logit * label + (1.0 + (-logit.abs()).exp()).ln();
        let dlogit = (sigmoid(logit) - label) * weight;
        let mut d = self.out.backward(&Array2::from_elem((1, 1), dlogit));
        for (dense, relu) in self.layers.iter_mut().zip(self.relus.iter()).rev() {
            d = dense.backward(&relu.backward(&d));
        }
        let f = self.user_emb.w.ncols();
        let mut gu = self.user_emb.g.row_mut(u);
        gu += &d.slice(ndarray::s![0, ..f]);
        let mut gi = self.item_emb.g.row_mut(i);
        gi += &d.slice(ndarray::s![0, f..]);
        loss
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.user_emb, &mut self.item_emb];
        for d in &mut self.layers {
            ps.extend(d.params_mut());
        }
        ps.extend(self.out.params_mut());
        ps
    }

    fn train(&mut self, interactions: &SparseMatrix, cfg: &VictimConfig, seed: u64) -> Result<()> {
        let positives: Vec<(usize, usize)> = interactions.iter().map(|(u, i, _)| (u, i)).collect();
        if positives.is_empty() {
            return Err(Error::invalid("ncf needs at least one interaction"));
        }
        let mut order_rng = rng::stream(seed, "ncf-order");
        let mut neg_rng = rng::stream(seed, "ncf-neg");
        for _ in 0..cfg.ncf_epochs {
            let examples =
                epoch_examples(&positives, interactions, cfg.neg_ratio, &mut order_rng, &mut neg_rng);
            let mut total = 0.0;
            for chunk in examples.chunks(cfg.batch) {
                for p in self.params_mut() {
                    p.zero_grad();
                }
                let w = 1.0 / chunk.len() as f64;
                for &(u, i, label) in chunk {
                    total += self.example_step(u, i, label, w);
                }
                let mut opt = self.opt.clone();
                opt.step(&mut self.params_mut());
                self.opt = opt;
            }
            let mean = total / examples.len() as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite { stage: "ncf training" });
            }
            self.trace.push(mean);
        }
        Ok(())
    }
}

impl VictimModel for Ncf {
    fn name(&self) -> &'static str {
        "ncf"
    }
    fn n_users(&self) -> usize {
        self.user_emb.w.nrows()
    }
    fn n_items(&self) -> usize {
        self.item_emb.w.nrows()
    }
    fn scores(&mut self, u: usize) -> Result<Vec<f64>> {
        if u >= self.n_users() {
            return Err(Error::IndexOutOfRange { what: "user", index: u, limit: self.n_users() });
        }
        let n = self.n_items();
        (0..n)
            .map(|i| Ok(sigmoid(self.logit(u, i)).clamp(PROB_EPS, 1.0 - PROB_EPS)))
            .collect()
    }
}

/// Layer-wise neighborhood propagation over the normalized user-item graph;
/// final embeddings are the layer mean, trained with BPR.
pub struct LightGcn {
    emb: Param, // (m + n, f)
    final_emb: Array2<f64>,
    edges: Vec<(usize, usize, f64)>, // (user row, item row offset by m, weight)
    m: usize,
    n: usize,
    layers: usize,
    pub trace: Vec<f64>,
}

impl LightGcn {
    pub fn fit(interactions: &SparseMatrix, cfg: &VictimConfig, seed: u64) -> Result<Self> {
        let bin = interactions.binarized();
        let (m, n) = (bin.n_rows(), bin.n_cols());
        let mut deg_u = vec![0usize; m];
        let mut deg_i = vec![0usize; n];
        for (u, i, _) in bin.iter() {
            deg_u[u] += 1;
            deg_i[i] += 1;
        }
        let edges: Vec<(usize, usize, f64)> = bin
            .iter()
            .map(|(u, i, _)| (u, m + i, 1.0 / ((deg_u[u] * deg_i[i]) as f64).sqrt()))
            .collect();
        let mut r = rng::stream(seed, "lightgcn-init");
        let f = cfg.factors;
        let emb = Param::new(Array2::from_shape_fn((m + n, f), |_| normal(&mut r) * 0.1));
        let mut model = LightGcn {
            final_emb: Array2::zeros((m + n, f)),
            emb,
            edges,
            m,
            n,
            layers: cfg.lightgcn_layers,
            trace: Vec::new(),
        };
        model.train(&bin, cfg, seed)?;
        Ok(model)
    }

    /// Mean of A^l x over l = 0..=layers; A is symmetric, so the same pass
    /// propagates gradients back to the base embeddings.
    fn propagate(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut acc = x.clone();
        let mut cur = x.clone();
        for _ in 0..self.layers {
            let mut next = Array2::zeros(x.raw_dim());
            for &(a, b, w) in &self.edges {
                let rb = cur.row(b).to_owned();
                next.row_mut(a).scaled_add(w, &rb);
                let ra = cur.row(a).to_owned();
                next.row_mut(b).scaled_add(w, &ra);
            }
            acc += &next;
            cur = next;
        }
        acc / (self.layers + 1) as f64
    }

    fn train(&mut self, bin: &SparseMatrix, cfg: &VictimConfig, seed: u64) -> Result<()> {
        let positives: Vec<(usize, usize)> = bin.iter().map(|(u, i, _)| (u, i)).collect();
        if positives.is_empty() {
            return Err(Error::invalid("lightgcn needs at least one interaction"));
        }
        let n = self.n;
        let m = self.m;
        let mut order_rng = rng::stream(seed, "lightgcn-order");
        let mut neg_rng = rng::stream(seed, "lightgcn-neg");
        let mut opt = Adam::new(cfg.lightgcn_lr);
        for _ in 0..cfg.lightgcn_epochs {
            let mut shuffled = positives.clone();
            shuffled.shuffle(&mut order_rng);
            let mut triples = Vec::with_capacity(shuffled.len() * cfg.neg_ratio);
            for &(u, i) in &shuffled {
                let mut drawn = 0;
                let mut guard = 0;
                while drawn < cfg.neg_ratio {
                    let j = neg_rng.gen_range(0..n);
                    guard += 1;
                    if bin.get(u, j) == 0.0 || guard > 50 * cfg.neg_ratio {
                        triples.push((u, i, j));
                        drawn += 1;
                    }
                }
            }
            let mut total = 0.0;
            for chunk in triples.chunks(cfg.batch) {
                let fin = self.propagate(&self.emb.w);
                let w = 1.0 / chunk.len() as f64;
                let mut g_final = Array2::zeros(fin.raw_dim());
                for &(u, pi, ni) in chunk {
                    let fu = fin.row(u);
                    let diff = &fin.row(m + pi) - &fin.row(m + ni);
                    let x = fu.dot(&diff);
                    total += x.max(0.0) - x + (1.0 + (-x.abs()).exp()).ln(); // -ln sigmoid(x)
                    let g = -sigmoid(-x) * w;
                    g_final.row_mut(u).scaled_add(g, &diff);
                    let fu = fu.to_owned();
                    g_final.row_mut(m + pi).scaled_add(g, &fu);
                    g_final.row_mut(m + ni).scaled_add(-g, &fu);
                }
                self.emb.zero_grad();
                self.emb.g = self.propagate(&g_final);
                if cfg.lightgcn_reg > 0.0 {
                    self.emb.g.scaled_add(cfg.lightgcn_reg, &self.emb.w);
                }
                opt.step(&mut [&mut self.emb]);
            }
            let mean = total / triples.len() as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite { stage: "lightgcn training" });
            }
            self.trace.push(mean);
        }
        self.final_emb = self.propagate(&self.emb.w);
        Ok(())
    }
}

impl VictimModel for LightGcn {
    fn name(&self) -> &'static str {
        "lightgcn"
    }
    fn n_users(&self) -> usize {
        self.m
    }
    fn n_items(&self) -> usize {
        self.n
    }
    fn scores(&mut self, u: usize) -> Result<Vec<f64>> {
        if u >= self.m {
            return Err(Error::IndexOutOfRange { what: "user", index: u, limit: self.m });
        }
        let fu = self.final_emb.row(u);
        Ok((0..self.n).map(|i| self.final_emb.row(self.m + i).dot(&fu)).collect())
    }
}

/// The review-based victims reuse the surrogate architecture; the plain
/// variant drops the id embeddings, the ++ variant keeps them.
pub struct DeepConnVictim {
    plus_plus: bool,
    surrogate: Surrogate,
    docs: DocCorpus,
    item_latents: Option<Array2<f64>>,
}

impl DeepConnVictim {
    pub fn fit(input: &VictimInput, cfg: &VictimConfig, plus_plus: bool, seed: u64) -> Result<Self> {
        let docs = build_review_documents(input.ds, input.fake_reviews, input.table, cfg.doc_len);
        if docs.n_users() != input.interactions.n_rows() {
            return Err(Error::ShapeMismatch {
                msg: format!(
                    "document corpus covers {} users, interactions have {}",
                    docs.n_users(),
                    input.interactions.n_rows()
                ),
            });
        }
        let mut sur_cfg = cfg.deepconn;
        sur_cfg.use_id_embeddings = plus_plus;
        let mut r = rng::stream(seed, "deepconn-init");
        let mut surrogate = Surrogate::new(
            &mut r,
            input.interactions.n_rows(),
            input.interactions.n_cols(),
            input.table.dimension,
            sur_cfg,
        );
        surrogate.train(input.interactions, &docs, sur_cfg.epochs, seed)?;
        Ok(DeepConnVictim { plus_plus, surrogate, docs, item_latents: None })
    }
}

impl VictimModel for DeepConnVictim {
    fn name(&self) -> &'static str {
        if self.plus_plus {
            "deepconn++"
        } else {
            "deepconn"
        }
    }
    fn n_users(&self) -> usize {
        self.surrogate.n_users()
    }
    fn n_items(&self) -> usize {
        self.surrogate.n_items()
    }
    fn scores(&mut self, u: usize) -> Result<Vec<f64>> {
        if self.item_latents.is_none() {
            self.item_latents = Some(self.surrogate.all_item_latents(&self.docs)?);
        }
        let latents = self.item_latents.clone().expect("cached above");
        self.surrogate.scores_for_user(u, &self.docs, &latents)
    }
}

fn rating_mean_std(ds: &Dataset) -> (f64, f64) {
    let vals: Vec<f64> = ds.ratings.iter().map(|(_, _, v)| v).collect();
    if vals.is_empty() {
        let mid = (ds.scale.min + ds.scale.max) as f64 / 2.0;
        return (mid, 0.0);
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    (mean, var.sqrt())
}

/// Top decile of items by rating count (ties to the lower index).
pub fn bandwagon_items(ds: &Dataset) -> Vec<usize> {
    let n = ds.n_items();
    let mut counts = vec![0usize; n];
    for (_, i, _) in ds.ratings.iter() {
        counts[i] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), i));
    let take = ((n as f64) * 0.1).ceil() as usize;
    order.truncate(take.max(1));
    order
}

/// Shared core of the heuristic attacks: `popular_share` of the fillers come
/// from the bandwagon set at r_max, the rest are uniform items rated from a
/// normal around the global mean.
fn heuristic_attack(
    ds: &Dataset,
    cfg: &AttackConfig,
    popular_share: f64,
    backend: &dyn TextBackend,
    seed: u64,
) -> Result<FakeProfileBatch> {
    cfg.validate(ds)?;
    let t = cfg.target_item;
    let a_size = cfg.resolved_attack_size(ds.n_users());
    let f_size = cfg.resolved_filler_size(ds);
    let n = ds.n_items();
    let (mean, std) = rating_mean_std(ds);
    let popular: Vec<usize> = bandwagon_items(ds).into_iter().filter(|&i| i != t).collect();

    let mut r = rng::stream(seed, "baseline-attack");
    let mut ratings = SparseMatrix::zeros(a_size, n);
    let mut filler_masks = Vec::with_capacity(a_size);
    for row in 0..a_size {
        let n_fillers = (f_size - 1).min(n - 1);
        let n_popular = ((popular_share * n_fillers as f64).round() as usize).min(popular.len());
        let chosen_popular: Vec<usize> =
            popular.choose_multiple(&mut r, n_popular).copied().collect();
        let rest_pool: Vec<usize> = (0..n)
            .filter(|&i| i != t && !chosen_popular.contains(&i))
            .collect();
        let chosen_rest: Vec<usize> = rest_pool
            .choose_multiple(&mut r, n_fillers - chosen_popular.len())
            .copied()
            .collect();

        let mut mask = vec![false; n];
        for &i in &chosen_popular {
            mask[i] = true;
            ratings.set(row, i, ds.scale.max as f64);
        }
        for &i in &chosen_rest {
            mask[i] = true;
            let v = round_off(mean + std * normal(&mut r), ds.scale.min, ds.scale.max);
            ratings.set(row, i, v as f64);
        }
        ratings.set(row, t, ds.scale.max as f64);
        filler_masks.push(mask);
    }
    let fakes = FakeRatingMatrix { ratings, filler_masks, target_item: t };
    let reviews = generate_reviews(backend, &fakes, ds, seed)?;
    Ok(FakeProfileBatch { ratings: fakes, reviews })
}

/// Conventional random attack: uniform fillers, ratings from a normal around
/// the global mean, target at r_max.
pub fn random_attack(
    ds: &Dataset,
    cfg: &AttackConfig,
    backend: &dyn TextBackend,
    seed: u64,
) -> Result<FakeProfileBatch> {
    heuristic_attack(ds, cfg, 0.0, backend, seed)
}

pub const DEFAULT_BANDWAGON_SHARE: f64 = 0.5;

/// Bandwagon attack: half the fillers (by default) come from the most-rated
/// decile at r_max, the rest follow the random attack's distribution.
pub fn bandwagon_attack(
    ds: &Dataset,
    cfg: &AttackConfig,
    popular_share: f64,
    backend: &dyn TextBackend,
    seed: u64,
) -> Result<FakeProfileBatch> {
    heuristic_attack(ds, cfg, popular_share, backend, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_dataset;
    use crate::data::synthetic::generate_synthetic_dataset;
    use crate::data::{RatingScale, RawInteraction};
    use crate::review_gen::DeterministicBackend;
    use crate::rng::stream;
    use ndarray::array;

    fn small_cfg() -> VictimConfig {
        VictimConfig {
            factors: 4,
            wrmf_sweeps: 8,
            ncf_layers: vec![8, 4],
            ncf_epochs: 4,
            lightgcn_epochs: 6,
            deepconn: SurrogateConfig {
                d2: 4,
                filter_width: 2,
                n_filters: 3,
                epochs: 2,
                neg_ratio: 2,
                ..SurrogateConfig::default()
            },
            doc_len: 40,
            ..VictimConfig::default()
        }
    }

    fn table(dim: usize) -> EmbeddingTable {
        crate::data::embeddings::load_word_embeddings(
            "random",
            dim,
            &std::collections::BTreeSet::new(),
            7,
        )
        .unwrap()
    }

    #[test]
    fn cholesky_matches_direct_solve() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let b = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(&a, &b).unwrap();
        let back = a.dot(&x);
        for k in 0..3 {
            assert!((back[k] - b[k]).abs() < 1e-10);
        }
        let not_spd = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_solve(&not_spd, &array![1.0, 1.0]).is_err());
    }

    /// Planted rank-1 preferences: interactions exactly where a_u * b_i
    /// clears the median product.
    fn rank_one_fixture(m: usize, n: usize, seed: u64) -> (SparseMatrix, Array2<f64>) {
        let mut r = stream(seed, "rank1");
        let a: Vec<f64> = (0..m).map(|_| r.gen_range(0.2..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.gen_range(0.2..1.0)).collect();
        let truth = Array2::from_shape_fn((m, n), |(u, i)| a[u] * b[i]);
        let mut all: Vec<f64> = truth.iter().copied().collect();
        all.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let median = all[all.len() / 2];
        let mut mat = SparseMatrix::zeros(m, n);
        for u in 0..m {
            for i in 0..n {
                if truth[(u, i)] >= median {
                    mat.set(u, i, 1.0);
                }
            }
        }
        (mat, truth)
    }

    #[test]
    fn wrmf_recovers_rank_one_structure() {
        let (mat, _) = rank_one_fixture(30, 20, 5);
        // Hold out every 7th positive; the factorization must still rank it
        // above the true negatives if it learned the planted structure.
        let positives: Vec<(usize, usize)> = mat.iter().map(|(u, i, _)| (u, i)).collect();
        let mut train = SparseMatrix::zeros(30, 20);
        let mut held = Vec::new();
        for (k, &(u, i)) in positives.iter().enumerate() {
            if k % 7 == 3 {
                held.push((u, i));
            } else {
                train.set(u, i, 1.0);
            }
        }
        let mut model = Wrmf::fit(&train, &small_cfg(), 3).unwrap();
        // Pairwise ranking accuracy: every trained positive should outscore
        // every same-user true negative.
        let mut correct = 0usize;
        let mut pairs = 0usize;
        let mut held_mean = 0.0;
        let mut neg_mean = 0.0;
        let mut neg_count = 0usize;
        for u in 0..30 {
            let s = model.scores(u).unwrap();
            let pos: Vec<usize> = (0..20).filter(|&i| train.get(u, i) > 0.0).collect();
            let neg: Vec<usize> = (0..20).filter(|&i| mat.get(u, i) == 0.0).collect();
            for &p in &pos {
                for &q in &neg {
                    pairs += 1;
                    if s[p] > s[q] {
                        correct += 1;
                    }
                }
            }
            for &q in &neg {
                neg_mean += s[q];
                neg_count += 1;
            }
        }
        for &(u, i) in &held {
            held_mean += model.scores(u).unwrap()[i];
        }
        held_mean /= held.len() as f64;
        neg_mean /= neg_count as f64;
        let auc = correct as f64 / pairs as f64;
        assert!(auc > 0.9, "ranking accuracy {auc}");
        assert!(
            held_mean > neg_mean,
            "held-out positives score {held_mean}, negatives {neg_mean}"
        );
    }

    #[test]
    fn same_seed_same_topk_across_victims() {
        let ds = generate_synthetic_dataset(15, 10, 2, 0.4, 3).unwrap();
        let tbl = table(5);
        let input = VictimInput {
            interactions: &ds.ratings,
            ds: &ds,
            fake_reviews: None,
            table: &tbl,
        };
        for kind in VictimKind::ALL {
            let mut a = fit_victim(kind, &input, &small_cfg(), 11).unwrap();
            let mut b = fit_victim(kind, &input, &small_cfg(), 11).unwrap();
            for u in 0..5 {
                assert_eq!(
                    victim_topk(a.as_mut(), u, 5, &[]).unwrap(),
                    victim_topk(b.as_mut(), u, 5, &[]).unwrap(),
                    "{} unstable under fixed seed",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn ncf_bce_decreases() {
        let ds = generate_synthetic_dataset(15, 10, 2, 0.4, 4).unwrap();
        let model = Ncf::fit(&ds.ratings, &small_cfg(), 9).unwrap();
        assert!(model.trace.last().unwrap() < model.trace.first().unwrap(), "{:?}", model.trace);
    }

    #[test]
    fn lightgcn_propagation_matches_hand_math() {
        let mut mat = SparseMatrix::zeros(1, 2);
        mat.set(0, 0, 1.0);
        mat.set(0, 1, 1.0);
        let cfg = VictimConfig { factors: 2, lightgcn_layers: 1, lightgcn_epochs: 1, ..small_cfg() };
        let model = LightGcn::fit(&mat, &cfg, 1).unwrap();
        // weights: deg_u=2, deg_i=1 each -> w = 1/sqrt(2)
        let e = &model.emb.w;
        let w = 1.0 / 2.0f64.sqrt();
        let fin = model.propagate(e);
        for c in 0..2 {
            let exp_user = (e[(0, c)] + w * e[(1, c)] + w * e[(2, c)]) / 2.0;
            assert!((fin[(0, c)] - exp_user).abs() < 1e-12);
            let exp_item0 = (e[(1, c)] + w * e[(0, c)]) / 2.0;
            assert!((fin[(1, c)] - exp_item0).abs() < 1e-12);
        }
    }

    #[test]
    fn lightgcn_bpr_decreases() {
        let ds = generate_synthetic_dataset(15, 10, 2, 0.4, 6).unwrap();
        let model = LightGcn::fit(&ds.ratings, &small_cfg(), 2).unwrap();
        assert!(model.trace.last().unwrap() < model.trace.first().unwrap(), "{:?}", model.trace);
    }

    #[test]
    fn deepconn_variants_differ_by_id_embeddings() {
        let ds = generate_synthetic_dataset(10, 8, 2, 0.5, 7).unwrap();
        let tbl = table(5);
        let input = VictimInput {
            interactions: &ds.ratings,
            ds: &ds,
            fake_reviews: None,
            table: &tbl,
        };
        let mut plain = DeepConnVictim::fit(&input, &small_cfg(), false, 5).unwrap();
        let mut plus = DeepConnVictim::fit(&input, &small_cfg(), true, 5).unwrap();
        assert_eq!(plain.name(), "deepconn");
        assert_eq!(plus.name(), "deepconn++");
        let s0 = plain.scores(0).unwrap();
        let s1 = plus.scores(0).unwrap();
        assert_eq!(s0.len(), 8);
        assert!(s0.iter().zip(&s1).any(|(a, b)| a != b));
    }

    #[test]
    fn victim_registry_roundtrip() {
        for kind in VictimKind::ALL {
            let parsed: VictimKind = kind.name().parse().unwrap();
            assert_eq!(parsed, kind);
        }
        assert!("svd++".parse::<VictimKind>().is_err());
    }

    #[test]
    fn victim_topk_excludes_and_matches_sort() {
        let (mat, _) = rank_one_fixture(10, 12, 9);
        let mut model = Wrmf::fit(&mat, &small_cfg(), 4).unwrap();
        let scores = model.scores(3).unwrap();
        let top = victim_topk(&mut model, 3, 4, &[0, 1]).unwrap();
        assert_eq!(top.len(), 4);
        assert!(!top.contains(&0) && !top.contains(&1));
        let mut order: Vec<usize> = (2..12).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(top, order[..4].to_vec());
    }

    /// Balanced fixture: ratings symmetric around 3 so rounding and clamping
    /// do not bias the filler mean.
    fn balanced_dataset() -> Dataset {
        let mut raw = Vec::new();
        for u in 0..20 {
            for (k, r) in [1.0, 2.0, 3.0, 4.0, 5.0].iter().enumerate() {
                raw.push(RawInteraction {
                    user_external_id: format!("u{u}"),
                    item_external_id: format!("i{}", (u + k) % 30),
                    rating: *r,
                    review_text: "fine".into(),
                    timestamp: None,
                });
            }
        }
        build_dataset(&raw, &[], RatingScale::new(1, 5).unwrap()).unwrap()
    }

    #[test]
    fn random_attack_structure_and_statistics() {
        let ds = balanced_dataset();
        let cfg = AttackConfig {
            target_item: 2,
            attack_size: Some(1000),
            filler_size: Some(4),
            ..AttackConfig::default()
        };
        let batch = random_attack(&ds, &cfg, &DeterministicBackend, 13).unwrap();
        assert_eq!(batch.attack_size(), 1000);
        let mut filler_sum = 0.0;
        let mut filler_count = 0usize;
        for row in 0..1000 {
            let entries = batch.ratings.ratings.row(row);
            assert!(entries.len() <= 4);
            assert_eq!(batch.ratings.ratings.get(row, 2), 5.0);
            for &(i, v) in entries {
                assert!(ds.scale.contains(v));
                assert_eq!(v, v.round());
                assert!(batch.reviews.contains_key(&(row, i)));
                if i != 2 {
                    filler_sum += v;
                    filler_count += 1;
                }
            }
        }
        let (mean, _) = rating_mean_std(&ds);
        let filler_mean = filler_sum / filler_count as f64;
        assert!(
            (filler_mean - mean).abs() < 0.1,
            "filler mean {filler_mean} vs global mean {mean}"
        );
    }

    #[test]
    fn random_attack_f1_rates_only_target() {
        let ds = balanced_dataset();
        let cfg = AttackConfig {
            target_item: 0,
            attack_size: Some(5),
            filler_size: Some(1),
            ..AttackConfig::default()
        };
        let batch = random_attack(&ds, &cfg, &DeterministicBackend, 1).unwrap();
        for row in 0..5 {
            assert_eq!(batch.ratings.ratings.row(row), &[(0, 5.0)]);
        }
    }

    #[test]
    fn bandwagon_fillers_come_from_top_decile_at_max() {
        let ds = generate_synthetic_dataset(30, 20, 3, 0.3, 8).unwrap();
        let cfg = AttackConfig {
            target_item: 4,
            attack_size: Some(20),
            filler_size: Some(6),
            ..AttackConfig::default()
        };
        let popular: std::collections::HashSet<usize> =
            bandwagon_items(&ds).into_iter().collect();
        let batch = bandwagon_attack(&ds, &cfg, DEFAULT_BANDWAGON_SHARE, &DeterministicBackend, 3).unwrap();
        let mut saw_popular = 0;
        for row in 0..20 {
            for &(i, v) in batch.ratings.ratings.row(row) {
                if i != 4 && popular.contains(&i) && v == 5.0 {
                    saw_popular += 1;
                }
            }
        }
        // share 0.5 of 5 fillers rounds to 2-3 popular picks per profile
        assert!(saw_popular >= 20, "bandwagon picks too rare: {saw_popular}");
    }

    #[test]
    fn zero_share_bandwagon_equals_random() {
        let ds = balanced_dataset();
        let cfg = AttackConfig {
            target_item: 1,
            attack_size: Some(10),
            filler_size: Some(4),
            ..AttackConfig::default()
        };
        let a = random_attack(&ds, &cfg, &DeterministicBackend, 21).unwrap();
        let b = bandwagon_attack(&ds, &cfg, 0.0, &DeterministicBackend, 21).unwrap();
        let ra: Vec<_> = a.ratings.ratings.iter().collect();
        let rb: Vec<_> = b.ratings.ratings.iter().collect();
        assert_eq!(ra, rb);
        assert_eq!(a.reviews, b.reviews);
    }

    #[test]
    fn baselines_deterministic_under_seed() {
        let ds = balanced_dataset();
        let cfg = AttackConfig {
            target_item: 3,
            attack_size: Some(7),
            filler_size: Some(3),
            ..AttackConfig::default()
        };
        let a = bandwagon_attack(&ds, &cfg, 0.5, &DeterministicBackend, 2).unwrap();
        let b = bandwagon_attack(&ds, &cfg, 0.5, &DeterministicBackend, 2).unwrap();
        let ra: Vec<_> = a.ratings.ratings.iter().collect();
        let rb: Vec<_> = b.ratings.ratings.iter().collect();
        assert_eq!(ra, rb);
    }
}
