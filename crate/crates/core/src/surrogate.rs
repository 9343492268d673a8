//! Review-aware recommender with two text towers and id embeddings: each
//! entity is TextCNN(review document) + id embedding, and an MLP on the
//! concatenated pair scores the interaction. Serves as the locally trained
//! surrogate and, with fresh seeds, as a white-box victim.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::embeddings::EmbeddingTable;
use crate::data::tokenize::{tokenize, DEFAULT_REVIEW_TOKEN_CAP};
use crate::data::{Dataset, SparseMatrix};
use crate::error::{Error, Result};
use crate::nn::textcnn::TextCnn;
use crate::nn::{normal, sigmoid, Adam, Dense, Param, Relu};
use crate::ranking::topk_by_score;
use crate::rng;

pub const DEFAULT_DOC_LEN: usize = 300;

/// Per-entity review documents over a shared embedded vocabulary. Fake
/// users extend the user side and their reviews extend the item documents.
#[derive(Debug, Clone)]
pub struct DocCorpus {
    pub emb: Array2<f64>, // (vocab, d1)
    pub user_docs: Vec<Vec<usize>>,
    pub item_docs: Vec<Vec<usize>>,
    pub n_real_users: usize,
    pub doc_len: usize,
}

impl DocCorpus {
    pub fn n_users(&self) -> usize {
        self.user_docs.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_docs.len()
    }

    pub fn dim(&self) -> usize {
        self.emb.ncols()
    }

    fn matrix(&self, tokens: &[usize]) -> Array2<f64> {
        let mut m = Array2::zeros((tokens.len(), self.dim()));
        for (r, &t) in tokens.iter().enumerate() {
            m.row_mut(r).assign(&self.emb.row(t));
        }
        m
    }

    pub fn user_matrix(&self, u: usize) -> Array2<f64> {
        self.matrix(&self.user_docs[u])
    }

    pub fn item_matrix(&self, i: usize) -> Array2<f64> {
        self.matrix(&self.item_docs[i])
    }
}

/// Concatenate reviews into per-user and per-item documents. Real reviews
/// come first (users by ascending item, items by ascending user), then fake
/// reviews by ascending fake row. Documents truncate at `doc_len`.
pub fn build_review_documents(
    ds: &Dataset,
    fake_reviews: Option<&BTreeMap<(usize, usize), String>>,
    table: &EmbeddingTable,
    doc_len: usize,
) -> DocCorpus {
    let m = ds.n_users();
    let n = ds.n_items();
    let n_fake = fake_reviews
        .map(|f| f.keys().map(|&(a, _)| a + 1).max().unwrap_or(0))
        .unwrap_or(0);
    let mut user_tokens: Vec<Vec<String>> = vec![Vec::new(); m + n_fake];
    let mut item_tokens: Vec<Vec<String>> = vec![Vec::new(); n];
    for (u, i, _) in ds.ratings.iter() {
        if let Some(text) = ds.review(u, i) {
            let toks = tokenize(text, DEFAULT_REVIEW_TOKEN_CAP);
            user_tokens[u].extend(toks.iter().cloned());
            item_tokens[i].extend(toks);
        }
    }
    if let Some(fakes) = fake_reviews {
        for (&(a, i), text) in fakes {
            let toks = tokenize(text, DEFAULT_REVIEW_TOKEN_CAP);
            user_tokens[m + a].extend(toks.iter().cloned());
            item_tokens[i].extend(toks);
        }
    }
    for doc in user_tokens.iter_mut().chain(item_tokens.iter_mut()) {
        doc.truncate(doc_len);
    }

    let vocab: std::collections::BTreeSet<String> =
        user_tokens.iter().chain(item_tokens.iter()).flatten().cloned().collect();
    let ids: std::collections::HashMap<&String, usize> =
        vocab.iter().enumerate().map(|(k, t)| (t, k)).collect();
    let mut emb = Array2::zeros((vocab.len().max(1), table.dimension));
    for (t, &k) in &ids {
        let v = table.vector(t);
        for (c, &x) in v.iter().enumerate() {
            emb[(k, c)] = x;
        }
    }
    let to_ids = |docs: Vec<Vec<String>>| -> Vec<Vec<usize>> {
        docs.into_iter()
            .map(|doc| doc.iter().map(|t| ids[t]).collect())
            .collect()
    };
    DocCorpus {
        emb,
        user_docs: to_ids(user_tokens),
        item_docs: to_ids(item_tokens),
        n_real_users: m,
        doc_len,
    }
}

/// One positive plus `neg_ratio` negatives (unobserved items for the same
/// user), labels 1/0, shuffled positive order.
pub(crate) fn epoch_examples<R: Rng>(
    positives: &[(usize, usize)],
    interactions: &SparseMatrix,
    neg_ratio: usize,
    order_rng: &mut R,
    neg_rng: &mut R,
) -> Vec<(usize, usize, f64)> {
    let n = interactions.n_cols();
    let mut shuffled = positives.to_vec();
    shuffled.shuffle(order_rng);
    let mut examples = Vec::with_capacity(positives.len() * (1 + neg_ratio));
    for &(u, i) in &shuffled {
        examples.push((u, i, 1.0));
        let mut drawn = 0;
        let mut guard = 0;
        while drawn < neg_ratio {
            let j = neg_rng.gen_range(0..n);
            guard += 1;
            if interactions.get(u, j) == 0.0 || guard > 50 * neg_ratio {
                examples.push((u, j, 0.0));
                drawn += 1;
            }
        }
    }
    examples
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SurrogateConfig {
    pub d2: usize,
    pub filter_width: usize,
    pub n_filters: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub neg_ratio: usize,
    pub use_id_embeddings: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            d2: 50,
            filter_width: 3,
            n_filters: 100,
            lr: 1e-3,
            batch: 256,
            epochs: 20,
            neg_ratio: 4,
            use_id_embeddings: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub cfg: SurrogateConfig,
    pub user_cnn: TextCnn,
    pub item_cnn: TextCnn,
    pub user_emb: Param, // (m*, d2)
    pub item_emb: Param, // (n, d2)
    pub mlp: Vec<Dense>,
    relus: Vec<Relu>,
    opt: Adam,
}

impl Surrogate {
    pub fn new<R: Rng>(rng: &mut R, n_users: usize, n_items: usize, emb_dim: usize, cfg: SurrogateConfig) -> Self {
        let d2 = cfg.d2;
        let widths = [2 * d2, d2, (d2 / 2).max(1), 1];
        let mlp: Vec<Dense> =
            (0..3).map(|k| Dense::new(rng, widths[k], widths[k + 1])).collect();
        Surrogate {
            user_cnn: TextCnn::new(rng, emb_dim, cfg.filter_width, cfg.n_filters, d2),
            item_cnn: TextCnn::new(rng, emb_dim, cfg.filter_width, cfg.n_filters, d2),
            user_emb: Param::new(Array2::from_shape_fn((n_users, d2), |_| normal(rng) * 0.01)),
            item_emb: Param::new(Array2::from_shape_fn((n_items, d2), |_| normal(rng) * 0.01)),
            relus: vec![Relu::default(), Relu::default()],
            opt: Adam::new(cfg.lr),
            mlp,
            cfg,
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_emb.w.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.item_emb.w.nrows()
    }

    /// Text features plus id embedding for one user.
    pub fn latent_user(&mut self, u: usize, docs: &DocCorpus) -> Result<Array2<f64>> {
        if u >= self.n_users() {
            return Err(Error::IndexOutOfRange { what: "user", index: u, limit: self.n_users() });
        }
        let mut z = self.user_cnn.forward(&docs.user_matrix(u));
        if self.cfg.use_id_embeddings {
            z += &self.user_emb.w.row(u).insert_axis(Axis(0));
        }
        Ok(z)
    }

    pub fn latent_item(&mut self, i: usize, docs: &DocCorpus) -> Result<Array2<f64>> {
        if i >= self.n_items() {
            return Err(Error::IndexOutOfRange { what: "item", index: i, limit: self.n_items() });
        }
        let mut z = self.item_cnn.forward(&docs.item_matrix(i));
        if self.cfg.use_id_embeddings {
            z += &self.item_emb.w.row(i).insert_axis(Axis(0));
        }
        Ok(z)
    }

    fn mlp_logit(&mut self, z: &Array2<f64>) -> Array2<f64> {
        let h = self.mlp[0].forward(z);
        let h = self.relus[0].forward(&h);
        let h = self.mlp[1].forward(&h);
        let h = self.relus[1].forward(&h);
        self.mlp[2].forward(&h)
    }

    fn mlp_backward(&mut self, dlogit: &Array2<f64>) -> Array2<f64> {
        let d = self.mlp[2].backward(dlogit);
        let d = self.relus[1].backward(&d);
        let d = self.mlp[1].backward(&d);
        let d = self.relus[0].backward(&d);
        self.mlp[0].backward(&d)
    }

    /// Interaction probability, clamped inside (0,1).
    pub fn predict(&mut self, u: usize, i: usize, docs: &DocCorpus) -> Result<f64> {
        let lu = self.latent_user(u, docs)?;
        let li = self.latent_item(i, docs)?;
        let z = concatenate![Axis(1), lu, li];
        let logit = self.mlp_logit(&z);
        Ok(sigmoid(logit[(0, 0)]).clamp(1e-7, 1.0 - 1e-7))
    }

    /// One (example, label) forward/backward pass; returns the BCE term.
    /// Gradients accumulate into all towers.
    fn example_step(&mut self, u: usize, i: usize, label: f64, weight: f64, docs: &DocCorpus) -> Result<f64> {
        let lu = self.latent_user(u, docs)?;
        let li = self.latent_item(i, docs)?;
        let z = concatenate![Axis(1), lu, li];
        let logit = self.mlp_logit(&z)[(0, 0)];
        let loss = logit.max(0.0) - logit * label + (1.0 + (-logit.abs()).exp()).ln();
        let dlogit = (sigmoid(logit) - label) * weight;
        let dz = self.mlp_backward(&Array2::from_elem((1, 1), dlogit));
        let d2 = self.cfg.d2;
        let dlu = dz.slice(ndarray::s![.., ..d2]).to_owned();
        let dli = dz.slice(ndarray::s![.., d2..]).to_owned();
        self.user_cnn.backward(&dlu);
        self.item_cnn.backward(&dli);
        if self.cfg.use_id_embeddings {
            let mut gu = self.user_emb.g.row_mut(u);
            gu += &dlu.row(0);
            let mut gi = self.item_emb.g.row_mut(i);
            gi += &dli.row(0);
        }
        Ok(loss)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.user_cnn.params_mut();
        ps.extend(self.item_cnn.params_mut());
        ps.push(&mut self.user_emb);
        ps.push(&mut self.item_emb);
        for d in &mut self.mlp {
            ps.extend(d.params_mut());
        }
        ps
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// BCE training over the binarized interactions: every nonzero is a
    /// positive, `neg_ratio` unobserved items per positive are redrawn each
    /// epoch as negatives. Returns the per-epoch mean BCE.
    pub fn train(
        &mut self,
        interactions: &SparseMatrix,
        docs: &DocCorpus,
        epochs: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        assert!(self.cfg.neg_ratio >= 1);
        if interactions.n_rows() != self.n_users() || interactions.n_cols() != self.n_items() {
            return Err(Error::ShapeMismatch {
                msg: format!(
                    "interaction matrix {}x{} does not match model {}x{}",
                    interactions.n_rows(),
                    interactions.n_cols(),
                    self.n_users(),
                    self.n_items()
                ),
            });
        }
        let positives: Vec<(usize, usize)> = interactions.iter().map(|(u, i, _)| (u, i)).collect();
        if positives.is_empty() {
            return Err(Error::invalid("surrogate training needs at least one interaction"));
        }
        let mut order_rng = rng::stream(seed, "surrogate-order");
        let mut neg_rng = rng::stream(seed, "surrogate-neg");
        let mut trace = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let examples =
                epoch_examples(&positives, interactions, self.cfg.neg_ratio, &mut order_rng, &mut neg_rng);
            let mut total = 0.0;
            for chunk in examples.chunks(self.cfg.batch) {
                self.zero_grads();
                let w = 1.0 / chunk.len() as f64;
                for &(u, i, label) in chunk {
                    total += self.example_step(u, i, label, w, docs)?;
                }
                // Adam moments live on the params; the stepper only carries t.
                let mut opt = self.opt.clone();
                opt.step(&mut self.params_mut());
                self.opt = opt;
            }
            let mean = total / examples.len() as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite { stage: "surrogate training" });
            }
            trace.push(mean);
        }
        Ok(trace)
    }

    /// Item latents computed once for scoring many users.
    pub fn all_item_latents(&mut self, docs: &DocCorpus) -> Result<Array2<f64>> {
        let n = self.n_items();
        let mut out = Array2::zeros((n, self.cfg.d2));
        for i in 0..n {
            out.row_mut(i).assign(&self.latent_item(i, docs)?.row(0));
        }
        Ok(out)
    }

    /// Scores for one user against every item, given precomputed item latents.
    pub fn scores_for_user(&mut self, u: usize, docs: &DocCorpus, item_latents: &Array2<f64>) -> Result<Vec<f64>> {
        let lu = self.latent_user(u, docs)?;
        let n = item_latents.nrows();
        let d2 = self.cfg.d2;
        let mut z = Array2::zeros((n, 2 * d2));
        for i in 0..n {
            z.slice_mut(ndarray::s![i, ..d2]).assign(&lu.row(0));
            z.slice_mut(ndarray::s![i, d2..]).assign(&item_latents.row(i));
        }
        let logits = self.mlp_logit(&z);
        Ok(logits.column(0).iter().map(|&v| sigmoid(v).clamp(1e-7, 1.0 - 1e-7)).collect())
    }

    /// The K best non-excluded items for user u.
    pub fn recommend_topk(&mut self, u: usize, k: usize, docs: &DocCorpus, exclude: &[usize]) -> Result<Vec<usize>> {
        let item_latents = self.all_item_latents(docs)?;
        self.recommend_topk_with(u, k, docs, &item_latents, exclude)
    }

    pub fn recommend_topk_with(
        &mut self,
        u: usize,
        k: usize,
        docs: &DocCorpus,
        item_latents: &Array2<f64>,
        exclude: &[usize],
    ) -> Result<Vec<usize>> {
        let scores = self.scores_for_user(u, docs, item_latents)?;
        let excluded: std::collections::HashSet<usize> = exclude.iter().copied().collect();
        Ok(topk_by_score(&scores, k, |i| !excluded.contains(&i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::embeddings::load_word_embeddings;
    use crate::data::{build_dataset, RatingScale, RawInteraction};
    use crate::rng::stream;

    fn ri(u: &str, i: &str, r: f64, text: &str) -> RawInteraction {
        RawInteraction {
            user_external_id: u.into(),
            item_external_id: i.into(),
            rating: r,
            review_text: text.into(),
            timestamp: None,
        }
    }

    fn table(dim: usize) -> EmbeddingTable {
        load_word_embeddings("random", dim, &std::collections::BTreeSet::new(), 7).unwrap()
    }

    fn tiny_dataset() -> Dataset {
        let raw = vec![
            ri("u0", "i0", 4.0, "good stuff"),
            ri("u0", "i1", 2.0, "bad build"),
            ri("u1", "i0", 5.0, "really good"),
            ri("u1", "i2", 3.0, "fine"),
            ri("u2", "i2", 1.0, "broke fast"),
        ];
        build_dataset(&raw, &[], RatingScale::new(1, 5).unwrap()).unwrap()
    }

    #[test]
    fn user_doc_concatenates_in_interaction_order() {
        let ds = tiny_dataset();
        let docs = build_review_documents(&ds, None, &table(4), 300);
        // u0 reviewed i0 then i1: tokens good stuff bad build
        let toks = &docs.user_docs[0];
        assert_eq!(toks.len(), 4);
        let docs_trunc = build_review_documents(&ds, None, &table(4), 3);
        assert_eq!(docs_trunc.user_docs[0].len(), 3);
    }

    #[test]
    fn fake_reviews_extend_item_docs_and_user_side() {
        let ds = tiny_dataset();
        let mut fakes = BTreeMap::new();
        fakes.insert((0usize, 2usize), "amazing target".to_string());
        fakes.insert((1usize, 0usize), "solid filler".to_string());
        let docs = build_review_documents(&ds, Some(&fakes), &table(4), 300);
        assert_eq!(docs.n_users(), ds.n_users() + 2);
        assert_eq!(docs.n_real_users, ds.n_users());
        // item 2 had "fine" + "broke fast" = 3 tokens, fake adds 2
        assert_eq!(docs.item_docs[2].len(), 5);
        assert_eq!(docs.user_docs[ds.n_users()].len(), 2);
    }

    fn tiny_cfg(d2: usize) -> SurrogateConfig {
        SurrogateConfig {
            d2,
            filter_width: 2,
            n_filters: 3,
            lr: 5e-3,
            batch: 16,
            epochs: 3,
            neg_ratio: 2,
            use_id_embeddings: true,
        }
    }

    #[test]
    fn latent_degenerate_cases() {
        let ds = tiny_dataset();
        let docs = build_review_documents(&ds, None, &table(4), 300);
        let mut r = stream(1, "sur");
        let mut model = Surrogate::new(&mut r, 3, 3, 4, tiny_cfg(4));
        // zero text path -> latent equals id embedding
        model.user_cnn.filters.w.fill(0.0);
        model.user_cnn.fb.w.fill(0.0);
        model.user_cnn.proj.w.w.fill(0.0);
        model.user_cnn.proj.b.w.fill(0.0);
        let lu = model.latent_user(1, &docs).unwrap();
        let expect = model.user_emb.w.row(1).to_owned();
        assert!(lu.row(0).iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        // zero id embedding -> latent equals text features
        model.item_emb.w.fill(0.0);
        let li = model.latent_item(0, &docs).unwrap();
        let mut cnn = model.item_cnn.clone();
        let text_only = cnn.forward(&docs.item_matrix(0));
        assert!(li.iter().zip(text_only.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_final_layer_scores_half_and_bias_monotone() {
        let ds = tiny_dataset();
        let docs = build_review_documents(&ds, None, &table(4), 300);
        let mut r = stream(2, "sur");
        let mut model = Surrogate::new(&mut r, 3, 3, 4, tiny_cfg(4));
        model.mlp[2].w.w.fill(0.0);
        model.mlp[2].b.w.fill(0.0);
        assert!((model.predict(0, 0, &docs).unwrap() - 0.5).abs() < 1e-12);
        model.mlp[2].b.w.fill(0.5);
        let up = model.predict(0, 0, &docs).unwrap();
        model.mlp[2].b.w.fill(1.5);
        let upper = model.predict(0, 0, &docs).unwrap();
        assert!(upper > up && up > 0.5);
    }

    #[test]
    fn forward_matches_hand_oracle() {
        // 1 filter, width 1, d2 = 1: everything computable by hand
        let mut r = stream(3, "sur");
        let cfg = SurrogateConfig {
            d2: 1,
            filter_width: 1,
            n_filters: 1,
            lr: 1e-3,
            batch: 4,
            epochs: 1,
            neg_ratio: 1,
            use_id_embeddings: true,
        };
        let mut model = Surrogate::new(&mut r, 1, 1, 2, cfg);
        let docs = DocCorpus {
            emb: Array2::from_shape_vec((2, 2), vec![0.5, -1.0, 2.0, 0.25]).unwrap(),
            user_docs: vec![vec![0, 1]],
            item_docs: vec![vec![1]],
            n_real_users: 1,
            doc_len: 300,
        };
        // fix every weight
        model.user_cnn.filters.w.assign(&Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap());
        model.user_cnn.fb.w.fill(0.1);
        model.user_cnn.proj.w.w.assign(&Array2::from_shape_vec((1, 1), vec![0.5]).unwrap());
        model.user_cnn.proj.b.w.fill(0.2);
        model.item_cnn.filters.w.assign(&Array2::from_shape_vec((2, 1), vec![-1.0, 1.0]).unwrap());
        model.item_cnn.fb.w.fill(0.0);
        model.item_cnn.proj.w.w.assign(&Array2::from_shape_vec((1, 1), vec![2.0]).unwrap());
        model.item_cnn.proj.b.w.fill(-0.1);
        model.user_emb.w.fill(0.3);
        model.item_emb.w.fill(-0.2);
        for d in &mut model.mlp {
            d.w.w.fill(1.0);
            d.b.w.fill(0.0);
        }
        // user tower: conv outputs relu(0.5*1 - 1*2 + 0.1) = 0, relu(2*1 + 0.25*2 + 0.1) = 2.6
        // pooled 2.6 -> proj 0.5*2.6 + 0.2 = 1.5; + id 0.3 = 1.8
        // item tower: conv relu(-2 + 0.25) = 0 -> proj -0.1; + id -0.2 = -0.3
        // mlp: [1.8, -0.3] -> dense1 (2->1, w=1): 1.5 -> relu 1.5 -> dense2 1.5 -> dense3 1.5
        let got = model.predict(0, 0, &docs).unwrap();
        let expect = sigmoid(1.5);
        assert!((got - expect).abs() < 1e-6, "got {got}, expect {expect}");
    }

    fn separable_dataset() -> Dataset {
        // two groups: users 0-9 love items 0-4, users 10-19 love items 5-9
        let mut raw = Vec::new();
        for u in 0..20 {
            let (lo, hi, word) = if u < 10 { (0, 5, "guitar") } else { (5, 10, "drums") };
            for i in lo..hi {
                if (u + i) % 2 == 0 {
                    raw.push(ri(
                        &format!("u{u}"),
                        &format!("i{i}"),
                        5.0,
                        &format!("great {word} gear"),
                    ));
                }
            }
        }
        build_dataset(&raw, &[], RatingScale::new(1, 5).unwrap()).unwrap()
    }

    #[test]
    fn training_reduces_bce_and_is_deterministic() {
        let ds = separable_dataset();
        let docs = build_review_documents(&ds, None, &table(6), 300);
        let bin = crate::data::binarize(&ds.ratings);
        let mut r = stream(4, "sur");
        let mut model = Surrogate::new(&mut r, ds.n_users(), ds.n_items(), 6, tiny_cfg(6));
        let trace = model.train(&bin, &docs, 3, 11).unwrap();
        assert!(trace[2] < trace[0], "BCE should drop: {trace:?}");
        let mut r2 = stream(4, "sur");
        let mut model2 = Surrogate::new(&mut r2, ds.n_users(), ds.n_items(), 6, tiny_cfg(6));
        let trace2 = model2.train(&bin, &docs, 3, 11).unwrap();
        assert_eq!(trace, trace2);
    }

    #[test]
    fn topk_matches_sort_oracle_and_excludes() {
        let ds = separable_dataset();
        let docs = build_review_documents(&ds, None, &table(6), 300);
        let mut r = stream(5, "sur");
        let mut model = Surrogate::new(&mut r, ds.n_users(), ds.n_items(), 6, tiny_cfg(6));
        let exclude = ds.user_items(0);
        let got = model.recommend_topk(0, 3, &docs, &exclude).unwrap();
        let latents = model.all_item_latents(&docs).unwrap();
        let scores = model.scores_for_user(0, &docs, &latents).unwrap();
        let mut idx: Vec<usize> = (0..ds.n_items()).filter(|i| !exclude.contains(i)).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(got, idx[..3].to_vec());
        for i in &got {
            assert!(!exclude.contains(i));
        }
    }

    #[test]
    fn gradients_match_fd_through_full_score() {
        let ds = tiny_dataset();
        let docs = build_review_documents(&ds, None, &table(3), 300);
        let mut r = stream(6, "sur");
        let mut model = Surrogate::new(&mut r, ds.n_users(), ds.n_items(), 3, tiny_cfg(2));
        let (u, i, label) = (1usize, 2usize, 1.0);
        model.zero_grads();
        model.example_step(u, i, label, 1.0, &docs).unwrap();
        let grads: Vec<Array2<f64>> = {
            let mut g = Vec::new();
            for p in model.params_mut() {
                g.push(p.g.clone());
            }
            g
        };
        for pi in 0..grads.len() {
            let w0 = {
                let mut probe = model.clone();
                probe.params_mut()[pi].w.clone()
            };
            for r0 in 0..w0.nrows() {
                for c0 in 0..w0.ncols() {
                    let eval = |v: f64| {
                        let mut probe = model.clone();
                        probe.params_mut()[pi].w[(r0, c0)] = v;
                        let lu = probe.latent_user(u, &docs).unwrap();
                        let li = probe.latent_item(i, &docs).unwrap();
                        let z = concatenate![Axis(1), lu, li];
                        let logit = probe.mlp_logit(&z)[(0, 0)];
                        logit.max(0.0) - logit * label + (1.0 + (-logit.abs()).exp()).ln()
                    };
                    let x0 = w0[(r0, c0)];
                    let fd = (eval(x0 + 1e-5) - eval(x0 - 1e-5)) / 2e-5;
                    let a = grads[pi][(r0, c0)];
                    let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
                    assert!(
                        err < 1e-3 || (fd.abs() < 1e-7 && a.abs() < 1e-7),
                        "param {pi} ({r0},{c0}): fd={fd} analytic={a}"
                    );
                }
            }
        }
    }

    #[test]
    fn example_count_and_labels_per_epoch() {
        let ds = separable_dataset();
        let bin = crate::data::binarize(&ds.ratings);
        let positives: Vec<(usize, usize)> = bin.iter().map(|(u, i, _)| (u, i)).collect();
        let mut order = stream(7, "order");
        let mut neg = stream(7, "neg");
        let examples = epoch_examples(&positives, &bin, 4, &mut order, &mut neg);
        assert_eq!(examples.len(), positives.len() * 5);
        let pos_count = examples.iter().filter(|&&(_, _, l)| l == 1.0).count();
        assert_eq!(pos_count, positives.len());
        // negatives point at unobserved pairs
        for &(u, i, l) in &examples {
            if l == 0.0 {
                assert_eq!(bin.get(u, i), 0.0);
            }
        }
    }
}
