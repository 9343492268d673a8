//! Discriminator that separates fake profiles from real ones. A profile is a
//! dense rating row plus the user's embedded review document; the text half
//! goes through a convolutional extractor, the rating half through a dense
//! encoder, and a two layer head squashes the fused representation into
//! P(real). Training is the standard GAN discriminator update (BCE with
//! real=1, fake=0). `backward_ratings` exposes the gradient with respect to
//! the rating row so the generator can be trained against this module.

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};
use crate::nn::textcnn::TextCnn;
use crate::nn::{sigmoid, Adam, Dense, Param, Relu};
use crate::rng;

pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Width of each representation half; the fused vector has 2*d3 entries.
    pub d3: usize,
    pub filter_width: usize,
    pub n_filters: usize,
    pub lr: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { d3: 50, filter_width: 3, n_filters: 100, lr: 1e-3 }
    }
}

/// A batch of profiles as the detector consumes them: row u of `ratings` is
/// the dense rating vector, `docs[u]` the embedded review document.
#[derive(Debug, Clone)]
pub struct Profiles {
    pub ratings: Array2<f64>,
    pub docs: Vec<Array2<f64>>,
}

impl Profiles {
    pub fn new(ratings: Array2<f64>, docs: Vec<Array2<f64>>) -> Self {
        assert_eq!(ratings.nrows(), docs.len(), "one document per rating row");
        Profiles { ratings, docs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    fn row(&self, i: usize) -> Array2<f64> {
        self.ratings.row(i).to_owned().insert_axis(Axis(0))
    }
}

#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub text_cnn: TextCnn,   // document -> d3
    pub rating_enc: Dense,   // n -> d3
    enc_relu: Relu,
    pub hidden: Dense,       // 2*d3 -> d3
    hidden_relu: Relu,
    pub out: Dense,          // d3 -> 1
    opt: Adam,
    n_items: usize,
}

impl Detector {
    pub fn new(n_items: usize, emb_dim: usize, cfg: DetectorConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, "detector-init");
        let text_cnn = TextCnn::new(&mut r, emb_dim, cfg.filter_width, cfg.n_filters, cfg.d3);
        let rating_enc = Dense::new(&mut r, n_items, cfg.d3);
        let hidden = Dense::new(&mut r, 2 * cfg.d3, cfg.d3);
        let out = Dense::new(&mut r, cfg.d3, 1);
        let opt = Adam::new(cfg.lr);
        Detector {
            cfg,
            text_cnn,
            rating_enc,
            enc_relu: Relu::default(),
            hidden,
            hidden_relu: Relu::default(),
            out,
            opt,
            n_items,
        }
    }

    pub fn repr_width(&self) -> usize {
        2 * self.cfg.d3
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Fused representation: text features first, encoded ratings second.
    pub fn profile_repr(&mut self, ratings: &Array2<f64>, doc: &Array2<f64>) -> Array2<f64> {
        assert_eq!(ratings.ncols(), self.n_items, "rating vector length");
        let text = self.text_cnn.forward(doc);
        let enc = self.enc_relu.forward(&self.rating_enc.forward(ratings));
        concatenate![Axis(1), text, enc]
    }

    /// Raw score before the squash; caches everything needed by
    /// `backward_ratings`.
    pub fn forward_logit(&mut self, ratings: &Array2<f64>, doc: &Array2<f64>) -> f64 {
        let h = self.profile_repr(ratings, doc);
        let a = self.hidden.forward(&h);
        let z = self.hidden_relu.forward(&a);
        self.out.forward(&z)[(0, 0)]
    }

    /// P(profile is real), kept away from exactly 0 and 1 so logs of either
    /// side stay finite.
    pub fn classify(&mut self, ratings: &Array2<f64>, doc: &Array2<f64>) -> f64 {
        sigmoid(self.forward_logit(ratings, doc)).clamp(PROB_EPS, 1.0 - PROB_EPS)
    }

    /// Batched classify; the text tower runs per document, everything after
    /// the fusion runs as one matrix pass.
    pub fn classify_batch(&mut self, profiles: &Profiles) -> Vec<f64> {
        let b = profiles.len();
        if b == 0 {
            return Vec::new();
        }
        let d3 = self.cfg.d3;
        let mut fused = Array2::zeros((b, 2 * d3));
        for i in 0..b {
            let text = self.text_cnn.forward(&profiles.docs[i]);
            fused.slice_mut(s![i, ..d3]).assign(&text.row(0));
        }
        let enc = self.enc_relu.forward(&self.rating_enc.forward(&profiles.ratings));
        fused.slice_mut(s![.., d3..]).assign(&enc);
        let a = self.hidden.forward(&fused);
        let z = self.hidden_relu.forward(&a);
        let logits = self.out.forward(&z);
        logits
            .column(0)
            .iter()
            .map(|&v| sigmoid(v).clamp(PROB_EPS, 1.0 - PROB_EPS))
            .collect()
    }

    /// Accumulates parameter gradients for the last `forward_logit` call and
    /// returns the gradient with respect to the rating row. The document is a
    /// frozen embedding lookup, so no text input gradient exists.
    pub fn backward_ratings(&mut self, dlogit: f64) -> Array2<f64> {
        let dz = self.out.backward(&Array2::from_elem((1, 1), dlogit));
        let da = self.hidden_relu.backward(&dz);
        let dh = self.hidden.backward(&da);
        let d3 = self.cfg.d3;
        let dtext = dh.slice(s![.., ..d3]).to_owned();
        let denc = dh.slice(s![.., d3..]).to_owned();
        self.text_cnn.backward(&dtext);
        let dpre = self.enc_relu.backward(&denc);
        self.rating_enc.backward(&dpre)
    }

    /// One BCE example; accumulates parameter gradients scaled by `weight`
    /// and returns the unweighted loss.
    fn bce_example(&mut self, ratings: &Array2<f64>, doc: &Array2<f64>, label: f64, weight: f64) -> f64 {
        let logit = self.forward_logit(ratings, doc);
        let loss = logit.max(0.0) - logit * label + (1.0 + (-logit.abs()).exp()).ln();
        let dlogit = (sigmoid(logit) - label) * weight;
        self.backward_ratings(dlogit);
        loss
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.text_cnn.params_mut();
        ps.extend(self.rating_enc.params_mut());
        ps.extend(self.hidden.params_mut());
        ps.extend(self.out.params_mut());
        ps
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn apply_step(&mut self) {
        // Adam moments live on the params; the stepper only carries t.
        let mut opt = self.opt.clone();
        opt.step(&mut self.params_mut());
        self.opt = opt;
    }

    /// Parameter snapshot in a fixed order, for determinism checks and
    /// checkpointing.
    pub fn tensors(&self) -> Vec<Array2<f64>> {
        vec![
            self.text_cnn.filters.w.clone(),
            self.text_cnn.fb.w.clone(),
            self.text_cnn.proj.w.w.clone(),
            self.text_cnn.proj.b.w.clone(),
            self.rating_enc.w.w.clone(),
            self.rating_enc.b.w.clone(),
            self.hidden.w.w.clone(),
            self.hidden.b.w.clone(),
            self.out.w.w.clone(),
            self.out.b.w.clone(),
        ]
    }

    /// Discriminator updates: each step sees every fake once plus an equally
    /// sized, uniformly resampled batch of real profiles. Returns the
    /// per-step mean BCE.
    pub fn train(&mut self, real: &Profiles, fakes: &Profiles, steps: usize, seed: u64) -> Result<Vec<f64>> {
        if real.is_empty() || fakes.is_empty() {
            return Err(Error::invalid("detector training needs both real and fake profiles"));
        }
        let mut pick = rng::stream(seed, "detector-real");
        let mf = fakes.len();
        let batch = 2 * mf;
        let w = 1.0 / batch as f64;
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            self.zero_grads();
            let mut total = 0.0;
            for _ in 0..mf {
                let r = rand::Rng::gen_range(&mut pick, 0..real.len());
                total += self.bce_example(&real.row(r), &real.docs[r], 1.0, w);
            }
            for f in 0..mf {
                total += self.bce_example(&fakes.row(f), &fakes.docs[f], 0.0, w);
            }
            self.apply_step();
            let mean = total / batch as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite { stage: "detector training" });
            }
            trace.push(mean);
        }
        Ok(trace)
    }

    /// Mean of true positive rate (reals scored real) and true negative rate
    /// (fakes scored fake) at threshold 0.5. Balanced so a tiny fake batch
    /// cannot hide behind the real majority.
    pub fn balanced_accuracy(&mut self, real: &Profiles, fakes: &Profiles) -> f64 {
        let rs = self.classify_batch(real);
        let fs = self.classify_batch(fakes);
        let tpr = rs.iter().filter(|&&p| p > 0.5).count() as f64 / rs.len().max(1) as f64;
        let tnr = fs.iter().filter(|&&p| p <= 0.5).count() as f64 / fs.len().max(1) as f64;
        (tpr + tnr) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_init;
    use crate::rng::stream;
    use rand::Rng;

    fn small_cfg() -> DetectorConfig {
        DetectorConfig { d3: 3, filter_width: 2, n_filters: 2, lr: 1e-2 }
    }

    fn random_profiles(n: usize, n_items: usize, emb: usize, seed: u64) -> Profiles {
        let mut r = stream(seed, "det-test");
        let ratings = Array2::from_shape_fn((n, n_items), |_| r.gen_range(0..6) as f64);
        let docs = (0..n).map(|_| uniform_init(&mut r, 4, emb, 1.0)).collect();
        Profiles::new(ratings, docs)
    }

    #[test]
    fn repr_width_and_rating_locality() {
        let mut det = Detector::new(5, 3, small_cfg(), 7);
        let doc = uniform_init(&mut stream(1, "doc"), 4, 3, 1.0);
        let mut ratings = Array2::zeros((1, 5));
        ratings[(0, 2)] = 4.0;
        let h0 = det.profile_repr(&ratings, &doc);
        assert_eq!(h0.dim(), (1, 6));
        ratings[(0, 2)] = 1.0;
        let h1 = det.profile_repr(&ratings, &doc);
        let d3 = det.cfg.d3;
        for j in 0..d3 {
            assert_eq!(h0[(0, j)], h1[(0, j)], "text half must ignore ratings");
        }
        assert!((0..d3).any(|j| h0[(0, d3 + j)] != h1[(0, d3 + j)]), "rating half must react");
    }

    #[test]
    fn zero_weights_give_bias_only_repr() {
        let mut det = Detector::new(4, 2, small_cfg(), 8);
        det.text_cnn.filters.w.fill(0.0);
        det.rating_enc.w.w.fill(0.0);
        let a = random_profiles(1, 4, 2, 1);
        let b = random_profiles(1, 4, 2, 2);
        let ha = det.profile_repr(&a.row(0), &a.docs[0]);
        let hb = det.profile_repr(&b.row(0), &b.docs[0]);
        assert_eq!(ha, hb, "with zero weights the representation is the biases");
    }

    #[test]
    fn zero_final_layer_scores_half() {
        let mut det = Detector::new(4, 2, small_cfg(), 9);
        det.out.w.w.fill(0.0);
        det.out.b.w.fill(0.0);
        let p = random_profiles(3, 4, 2, 3);
        for i in 0..p.len() {
            assert_eq!(det.classify(&p.row(i), &p.docs[i]), 0.5);
        }
    }

    #[test]
    fn batch_matches_serial() {
        let mut det = Detector::new(6, 3, small_cfg(), 10);
        let p = random_profiles(10, 6, 3, 4);
        let batch = det.classify_batch(&p);
        for i in 0..p.len() {
            let one = det.classify(&p.row(i), &p.docs[i]);
            assert!((batch[i] - one).abs() < 1e-12, "profile {i}: {} vs {one}", batch[i]);
        }
    }

    #[test]
    fn forward_matches_hand_computation() {
        // 1 filter of width 1 over 1-dim embeddings, d3 = 1: every stage is
        // scalar arithmetic we can redo by hand.
        let cfg = DetectorConfig { d3: 1, filter_width: 1, n_filters: 1, lr: 1e-2 };
        let mut det = Detector::new(2, 1, cfg, 11);
        det.text_cnn.filters.w.fill(2.0);
        det.text_cnn.fb.w.fill(0.5);
        det.text_cnn.proj.w.w.fill(1.0);
        det.text_cnn.proj.b.w.fill(0.0);
        det.rating_enc.w.w.assign(&ndarray::array![[1.0], [-1.0]]);
        det.rating_enc.b.w.fill(0.25);
        det.hidden.w.w.assign(&ndarray::array![[1.0], [1.0]]);
        det.hidden.b.w.fill(0.0);
        det.out.w.w.fill(1.0);
        det.out.b.w.fill(-1.0);
        let doc = ndarray::array![[3.0], [-4.0]];
        let ratings = ndarray::array![[5.0, 1.0]];
        // text: conv = [6.5, -7.5] -> relu -> max = 6.5; proj 1.0 -> 6.5
        // rating: 5 - 1 + 0.25 = 4.25 -> relu 4.25
        // hidden: 6.5 + 4.25 = 10.75 -> relu; out: 10.75 - 1 = 9.75
        let logit = det.forward_logit(&ratings, &doc);
        assert!((logit - 9.75).abs() < 1e-12, "logit {logit}");
        assert!((det.classify(&ratings, &doc) - sigmoid(9.75)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_fd() {
        let mut det = Detector::new(4, 2, small_cfg(), 12);
        let p = random_profiles(1, 4, 2, 5);
        let ratings = p.row(0);
        let doc = p.docs[0].clone();
        let label = 0.0;
        let loss_of = |d: &mut Detector, r: &Array2<f64>| {
            let x = d.forward_logit(r, &doc);
            x.max(0.0) - x * label + (1.0 + (-x.abs()).exp()).ln()
        };
        det.zero_grads();
        let logit = det.forward_logit(&ratings, &doc);
        let dlogit = sigmoid(logit) - label;
        let dr = det.backward_ratings(dlogit);

        // input gradient
        for j in 0..ratings.ncols() {
            let mut up = ratings.clone();
            up[(0, j)] += 1e-5;
            let mut dn = ratings.clone();
            dn[(0, j)] -= 1e-5;
            let fd = (loss_of(&mut det.clone(), &up) - loss_of(&mut det.clone(), &dn)) / 2e-5;
            let a = dr[(0, j)];
            let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
            assert!(err < 1e-4 || (fd.abs() < 1e-9 && a.abs() < 1e-9), "rating {j}: fd={fd} a={a}");
        }

        // parameter gradients, probing through the snapshot order
        let grads: Vec<Array2<f64>> = vec![
            det.text_cnn.filters.g.clone(),
            det.text_cnn.fb.g.clone(),
            det.text_cnn.proj.w.g.clone(),
            det.text_cnn.proj.b.g.clone(),
            det.rating_enc.w.g.clone(),
            det.rating_enc.b.g.clone(),
            det.hidden.w.g.clone(),
            det.hidden.b.g.clone(),
            det.out.w.g.clone(),
            det.out.b.g.clone(),
        ];
        let write = |d: &mut Detector, t: usize, i: usize, j: usize, v: f64| {
            let w = match t {
                0 => &mut d.text_cnn.filters.w,
                1 => &mut d.text_cnn.fb.w,
                2 => &mut d.text_cnn.proj.w.w,
                3 => &mut d.text_cnn.proj.b.w,
                4 => &mut d.rating_enc.w.w,
                5 => &mut d.rating_enc.b.w,
                6 => &mut d.hidden.w.w,
                7 => &mut d.hidden.b.w,
                8 => &mut d.out.w.w,
                _ => &mut d.out.b.w,
            };
            w[(i, j)] = v;
        };
        let snap = det.tensors();
        for (t, w0) in snap.iter().enumerate() {
            for i in 0..w0.nrows() {
                for j in 0..w0.ncols() {
                    let mut probe = det.clone();
                    write(&mut probe, t, i, j, w0[(i, j)] + 1e-5);
                    let up = loss_of(&mut probe, &ratings);
                    write(&mut probe, t, i, j, w0[(i, j)] - 1e-5);
                    let dn = loss_of(&mut probe, &ratings);
                    let fd = (up - dn) / 2e-5;
                    let a = grads[t][(i, j)];
                    let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
                    assert!(err < 1e-4 || (fd.abs() < 1e-9 && a.abs() < 1e-9), "tensor {t} ({i},{j}): fd={fd} a={a}");
                }
            }
        }
    }

    /// Real profiles rate a couple of items moderately; fakes slam every item
    /// with the maximum. Linearly separable on the rating half alone.
    fn separable_sets(n_items: usize, emb: usize) -> (Profiles, Profiles) {
        let mut r = stream(42, "det-sep");
        let n = 30;
        let mut real = Array2::zeros((n, n_items));
        for u in 0..n {
            for _ in 0..3 {
                let i = r.gen_range(0..n_items);
                real[(u, i)] = r.gen_range(3..6) as f64;
            }
        }
        let fake = Array2::from_elem((n, n_items), 5.0);
        let docs_r: Vec<_> = (0..n).map(|_| uniform_init(&mut r, 3, emb, 0.5)).collect();
        let docs_f: Vec<_> = (0..n).map(|_| uniform_init(&mut r, 3, emb, 0.5)).collect();
        (Profiles::new(real, docs_r), Profiles::new(fake, docs_f))
    }

    #[test]
    fn training_separates_separable_profiles() {
        let (real, fakes) = separable_sets(8, 2);
        let mut det = Detector::new(8, 2, small_cfg(), 13);
        let trace = det.train(&real, &fakes, 150, 99).unwrap();
        assert!(trace.last().unwrap() < trace.first().unwrap(), "BCE should drop: {trace:?}");
        assert!(det.balanced_accuracy(&real, &fakes) > 0.9);
    }

    #[test]
    fn identical_fakes_are_indistinguishable() {
        let real = random_profiles(20, 6, 2, 21);
        let fakes = real.clone();
        let mut det = Detector::new(6, 2, small_cfg(), 14);
        det.train(&real, &fakes, 100, 5).unwrap();
        let acc = det.balanced_accuracy(&real, &fakes);
        assert!((acc - 0.5).abs() <= 0.1, "copied fakes must stay near chance, got {acc}");
    }

    #[test]
    fn same_seed_training_is_deterministic() {
        let (real, fakes) = separable_sets(6, 2);
        let mut a = Detector::new(6, 2, small_cfg(), 17);
        let mut b = Detector::new(6, 2, small_cfg(), 17);
        a.train(&real, &fakes, 20, 3).unwrap();
        b.train(&real, &fakes, 20, 3).unwrap();
        assert_eq!(a.tensors(), b.tensors());
    }

    #[test]
    fn empty_side_is_rejected() {
        let real = random_profiles(3, 4, 2, 1);
        let empty = Profiles::new(Array2::zeros((0, 4)), vec![]);
        let mut det = Detector::new(4, 2, small_cfg(), 18);
        assert!(det.train(&real, &empty, 1, 0).is_err());
        assert!(det.train(&empty, &real, 1, 0).is_err());
    }
}
