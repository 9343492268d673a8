//! Tiny causal transformer trained from scratch on the prompt+review corpus.
//! Word-level whitespace tokens, two pre-LN blocks, NLL fine-tuning, and
//! nucleus sampling. Small enough to train inside a test run, which is the
//! point: the backend interface is what matters, not model quality.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, uniform_init, Adam, Dense, LayerNorm, Param, Relu};
use crate::rng;

use super::{PromptSpec, TextBackend, PROMPT_SEPARATOR};

const UNK: usize = 0;
const EOS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub max_seq: usize,
    pub max_vocab: usize,
    pub lr: f64,
    pub max_tokens: usize,
    pub temperature: f64,
    pub nucleus: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            d_model: 32,
            n_heads: 2,
            ffn_hidden: 64,
            max_seq: 96,
            max_vocab: 2000,
            lr: 3e-3,
            max_tokens: 64,
            temperature: 0.8,
            nucleus: 0.95,
        }
    }
}

/// Causal multi-head self-attention without projection biases.
#[derive(Debug, Clone)]
struct Mha {
    wq: Param,
    wk: Param,
    wv: Param,
    wo: Param,
    heads: usize,
    cache: Option<MhaCache>,
}

#[derive(Debug, Clone)]
struct MhaCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>, // per head (L, L)
    concat: Array2<f64>,
}

impl Mha {
    fn new<R: Rng>(rng: &mut R, d: usize, heads: usize) -> Self {
        assert_eq!(d % heads, 0);
        let bound = (1.0 / d as f64).sqrt();
        Mha {
            wq: Param::new(uniform_init(rng, d, d, bound)),
            wk: Param::new(uniform_init(rng, d, d, bound)),
            wv: Param::new(uniform_init(rng, d, d, bound)),
            wo: Param::new(uniform_init(rng, d, d, bound)),
            heads,
            cache: None,
        }
    }

    fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let (l, d) = (x.nrows(), x.ncols());
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = x.dot(&self.wq.w);
        let k = x.dot(&self.wk.w);
        let v = x.dot(&self.wv.w);
        let mut concat = Array2::zeros((l, d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            for i in 0..l {
                for j in (i + 1)..l {
                    scores[(i, j)] = f64::NEG_INFINITY;
                }
            }
            let p = softmax_rows(&scores);
            let oh = p.dot(&vh);
            concat.slice_mut(cols).assign(&oh);
            probs.push(p);
        }
        let y = concat.dot(&self.wo.w);
        self.cache = Some(MhaCache { x: x.clone(), q, k, v, probs, concat });
        y
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let c = self.cache.as_ref().expect("forward before backward");
        let (l, d) = (c.x.nrows(), c.x.ncols());
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        self.wo.g += &c.concat.t().dot(dy);
        let dconcat = dy.dot(&self.wo.w.t());
        let mut dq = Array2::zeros((l, d));
        let mut dk = Array2::zeros((l, d));
        let mut dv = Array2::zeros((l, d));
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &c.probs[h];
            let doh = dconcat.slice(cols).to_owned();
            let vh = c.v.slice(cols);
            let qh = c.q.slice(cols);
            let kh = c.k.slice(cols);
            let dp = doh.dot(&vh.t());
            dv.slice_mut(cols).assign(&p.t().dot(&doh));
            // softmax rows backward
            let mut ds = Array2::zeros((l, l));
            for i in 0..l {
                let mut dot = 0.0;
                for j in 0..l {
                    dot += dp[(i, j)] * p[(i, j)];
                }
                for j in 0..l {
                    ds[(i, j)] = p[(i, j)] * (dp[(i, j)] - dot);
                }
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&kh));
            dk.slice_mut(cols).assign(&ds.t().dot(&qh));
        }
        self.wq.g += &c.x.t().dot(&dq);
        self.wk.g += &c.x.t().dot(&dk);
        self.wv.g += &c.x.t().dot(&dv);
        dq.dot(&self.wq.w.t()) + dk.dot(&self.wk.w.t()) + dv.dot(&self.wv.w.t())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: Mha,
    ln2: LayerNorm,
    ffn1: Dense,
    relu: Relu,
    ffn2: Dense,
}

impl Block {
    fn new<R: Rng>(rng: &mut R, cfg: &LmConfig) -> Self {
        Block {
            ln1: LayerNorm::new(cfg.d_model),
            attn: Mha::new(rng, cfg.d_model, cfg.n_heads),
            ln2: LayerNorm::new(cfg.d_model),
            ffn1: Dense::new(rng, cfg.d_model, cfg.ffn_hidden),
            relu: Relu::default(),
            ffn2: Dense::new(rng, cfg.ffn_hidden, cfg.d_model),
        }
    }

    fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let a = self.attn.forward(&self.ln1.forward(x));
        let x = x + &a;
        let f = self.ffn2.forward(&self.relu.forward(&self.ffn1.forward(&self.ln2.forward(&x))));
        x + f
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let df = self.ffn1.backward(&self.relu.backward(&self.ffn2.backward(dy)));
        let dx_mid = dy + &self.ln2.backward(&df);
        let da = self.attn.backward(&dx_mid);
        // residual: gradient w.r.t. block input is dx_mid plus the attention path
        &dx_mid + &self.ln1.backward(&da)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.ln1.params_mut();
        ps.extend(self.attn.params_mut());
        ps.extend(self.ln2.params_mut());
        ps.extend(self.ffn1.params_mut());
        ps.extend(self.ffn2.params_mut());
        ps
    }
}

#[derive(Debug, Clone)]
struct LmModel {
    vocab: Vec<String>,
    tok_to_id: HashMap<String, usize>,
    emb: Param, // (V, d)
    pos: Param, // (max_seq, d)
    blocks: Vec<Block>,
    lnf: LayerNorm,
    out: Dense, // d -> V
    cfg: LmConfig,
    cache_ids: Vec<usize>,
}

impl LmModel {
    fn new(vocab: Vec<String>, cfg: LmConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, "lm-init");
        let v = vocab.len();
        let tok_to_id = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        LmModel {
            tok_to_id,
            emb: Param::new(uniform_init(&mut r, v, cfg.d_model, 0.1)),
            pos: Param::new(uniform_init(&mut r, cfg.max_seq, cfg.d_model, 0.1)),
            blocks: (0..2).map(|_| Block::new(&mut r, &cfg)).collect(),
            lnf: LayerNorm::new(cfg.d_model),
            out: Dense::new(&mut r, cfg.d_model, v),
            vocab,
            cfg,
            cache_ids: Vec::new(),
        }
    }

    fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|t| self.tok_to_id.get(t).copied().unwrap_or(UNK))
            .collect()
    }

    /// Logits for every position of the id sequence.
    fn forward(&mut self, ids: &[usize]) -> Array2<f64> {
        let l = ids.len().min(self.cfg.max_seq);
        let ids = &ids[..l];
        let d = self.cfg.d_model;
        let mut x = Array2::zeros((l, d));
        for (p, &id) in ids.iter().enumerate() {
            for c in 0..d {
                x[(p, c)] = self.emb.w[(id, c)] + self.pos.w[(p, c)];
            }
        }
        for b in &mut self.blocks {
            x = b.forward(&x);
        }
        let x = self.lnf.forward(&x);
        self.cache_ids = ids.to_vec();
        self.out.forward(&x)
    }

    fn backward(&mut self, dlogits: &Array2<f64>) {
        let dy = self.out.backward(dlogits);
        let mut dx = self.lnf.backward(&dy);
        for b in self.blocks.iter_mut().rev() {
            dx = b.backward(&dx);
        }
        for (p, &id) in self.cache_ids.iter().enumerate() {
            for c in 0..self.cfg.d_model {
                self.emb.g[(id, c)] += dx[(p, c)];
                self.pos.g[(p, c)] += dx[(p, c)];
            }
        }
    }

    /// Mean token NLL of the sequence and the logits gradient.
    fn nll_and_grad(&mut self, ids: &[usize]) -> (f64, Array2<f64>) {
        let logits = self.forward(ids);
        let l = logits.nrows();
        let probs = softmax_rows(&logits);
        let n_pred = (l - 1).max(1) as f64;
        let mut dlogits = Array2::zeros(logits.raw_dim());
        let mut nll = 0.0;
        for p in 0..l.saturating_sub(1) {
            let target = self.cache_ids[p + 1];
            nll -= probs[(p, target)].max(1e-12).ln();
            for v in 0..probs.ncols() {
                dlogits[(p, v)] = probs[(p, v)] / n_pred;
            }
            dlogits[(p, target)] -= 1.0 / n_pred;
        }
        (nll / n_pred, dlogits)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.emb, &mut self.pos];
        for b in &mut self.blocks {
            ps.extend(b.params_mut());
        }
        ps.extend(self.lnf.params_mut());
        ps.extend(self.out.params_mut());
        ps
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Word-level causal LM backend.
#[derive(Debug, Clone)]
pub struct CausalLmBackend {
    pub cfg: LmConfig,
    model: Option<LmModel>,
}

impl Default for CausalLmBackend {
    fn default() -> Self {
        CausalLmBackend { cfg: LmConfig::default(), model: None }
    }
}

impl CausalLmBackend {
    pub fn with_config(cfg: LmConfig) -> Self {
        CausalLmBackend { cfg, model: None }
    }

    pub fn is_trained(&self) -> bool {
        self.model.is_some()
    }

    fn build_vocab(&self, corpus: &[String]) -> Vec<String> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in corpus {
            for tok in line.split_whitespace() {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut by_freq: Vec<(&str, usize)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab = vec!["<unk>".to_string(), "<eos>".to_string()];
        vocab.extend(
            by_freq
                .into_iter()
                .take(self.cfg.max_vocab.saturating_sub(2))
                .map(|(t, _)| t.to_string()),
        );
        vocab
    }

    fn sample_nucleus(&self, logits: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let inv_t = 1.0 / self.cfg.temperature;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&v| ((v - max) * inv_t).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        let mut kept = Vec::new();
        let mut mass = 0.0;
        for &i in &order {
            kept.push(i);
            mass += probs[i];
            if mass >= self.cfg.nucleus {
                break;
            }
        }
        let total: f64 = kept.iter().map(|&i| probs[i]).sum();
        let mut draw = rng.gen::<f64>() * total;
        for &i in &kept {
            draw -= probs[i];
            if draw <= 0.0 {
                return i;
            }
        }
        *kept.last().unwrap()
    }
}

impl TextBackend for CausalLmBackend {
    fn kind(&self) -> &'static str {
        "causal-lm"
    }

    fn fine_tune(&mut self, corpus: &[String], epochs: usize, seed: u64) -> Result<Vec<f64>> {
        if corpus.is_empty() {
            return Err(Error::invalid("causal-lm fine-tuning needs a non-empty corpus"));
        }
        let vocab = self.build_vocab(corpus);
        let mut model = LmModel::new(vocab, self.cfg, seed);
        let mut opt = Adam::new(self.cfg.lr);
        let mut order_rng = rng::stream(seed, "lm-order");
        let mut trace = Vec::with_capacity(epochs);
        let mut encoded: Vec<Vec<usize>> = corpus
            .iter()
            .map(|line| {
                let mut ids = model.encode(line);
                ids.truncate(self.cfg.max_seq - 1);
                ids.push(EOS);
                ids
            })
            .collect();
        for _ in 0..epochs {
            use rand::seq::SliceRandom;
            encoded.shuffle(&mut order_rng);
            let mut total = 0.0;
            for ids in &encoded {
                if ids.len() < 2 {
                    continue;
                }
                model.zero_grads();
                let (nll, dlogits) = model.nll_and_grad(ids);
                model.backward(&dlogits);
                opt.step(&mut model.params_mut());
                total += nll;
            }
            trace.push(total / encoded.len() as f64);
        }
        self.model = Some(model);
        Ok(trace)
    }

    fn generate(&self, prompt: &PromptSpec, seed: u64) -> String {
        let model = match &self.model {
            Some(m) => m,
            None => {
                eprintln!("warning: causal-lm backend not fine-tuned; using template text");
                return super::deterministic_review_text(&prompt.sentiment_label, &prompt.item_name);
            }
        };
        let mut model = model.clone();
        let sep_id = model.tok_to_id.get(PROMPT_SEPARATOR).copied();
        let mut ids = model.encode(&prompt.rendered);
        let prompt_len = ids.len();
        let mut r = rng::stream(seed, "lm-gen");
        for _ in 0..self.cfg.max_tokens {
            if ids.len() >= self.cfg.max_seq {
                break;
            }
            let logits = model.forward(&ids);
            let last = logits.index_axis(Axis(0), logits.nrows() - 1);
            let mut row: Vec<f64> = last.to_vec();
            row[UNK] = f64::NEG_INFINITY;
            if let Some(sid) = sep_id {
                row[sid] = f64::NEG_INFINITY;
            }
            let next = self.sample_nucleus(&row, &mut r);
            if next == EOS {
                break;
            }
            ids.push(next);
        }
        let words: Vec<&str> = ids[prompt_len..]
            .iter()
            .map(|&id| model.vocab[id].as_str())
            .filter(|w| *w != PROMPT_SEPARATOR)
            .collect();
        words.join(" ")
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("cannot save an untrained causal-lm backend".into()))?;
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
        let manifest = serde_json::json!({
            "kind": "causal-lm",
            "vocab_size": model.vocab.len(),
            "config": self.cfg,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap())
            .map_err(|e| Error::Io { path: dir.join("manifest.json"), source: e })?;
        std::fs::write(dir.join("vocab.txt"), model.vocab.join("\n"))
            .map_err(|e| Error::Io { path: dir.join("vocab.txt"), source: e })?;
        let tensors = model_tensors(model);
        checkpoint::write_tensors(&dir.join("weights.bin"), "lmbk", &tensors)
    }
}

fn model_tensors(model: &LmModel) -> Vec<Array2<f64>> {
    let mut m = model.clone();
    let mut ts = vec![];
    for p in m.params_mut() {
        ts.push(p.w.clone());
    }
    ts
}

/// Rebuild a saved backend from its checkpoint directory.
pub fn load_backend(dir: &Path) -> Result<CausalLmBackend> {
    let manifest_path = dir.join("manifest.json");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path)
            .map_err(|e| Error::Io { path: manifest_path.clone(), source: e })?,
    )
    .map_err(|e| Error::Checkpoint(format!("backend manifest: {e}")))?;
    let cfg: LmConfig = serde_json::from_value(manifest["config"].clone())
        .map_err(|e| Error::Checkpoint(format!("backend config: {e}")))?;
    let vocab_raw = std::fs::read_to_string(dir.join("vocab.txt"))
        .map_err(|e| Error::Io { path: dir.join("vocab.txt"), source: e })?;
    let vocab: Vec<String> = vocab_raw.lines().map(|s| s.to_string()).collect();
    let mut model = LmModel::new(vocab, cfg, 0);
    let tensors = checkpoint::read_tensors(&dir.join("weights.bin"), "lmbk")?;
    let params = model.params_mut();
    if tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "backend weights hold {} tensors, expected {}",
            tensors.len(),
            params.len()
        )));
    }
    for (p, t) in params.into_iter().zip(tensors.into_iter()) {
        if p.w.raw_dim() != t.raw_dim() {
            return Err(Error::Checkpoint("backend tensor shape mismatch".into()));
        }
        p.w.assign(&t);
    }
    Ok(CausalLmBackend { cfg, model: Some(model) })
}
