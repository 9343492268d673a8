//! Experiment configuration: a flat `section.key = value` text format with a
//! canonical serialization used for provenance hashing. Parsing collects every
//! problem it finds so a bad config fails with the full list of field errors,
//! not just the first.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::data::ingest::CorpusFormat;
use crate::data::RatingScale;
use crate::victims::{VictimConfig, VictimKind};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<String>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, msg) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{msg}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic { users: usize, items: usize, clusters: usize, density: f64 },
    Files { interactions: PathBuf, metadata: Option<PathBuf>, format: CorpusFormat },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackName {
    RTrojan,
    Random,
    Bandwagon,
}

impl AttackName {
    pub fn label(&self) -> &'static str {
        match self {
            AttackName::RTrojan => "rtrojan",
            AttackName::Random => "random",
            AttackName::Bandwagon => "bandwagon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub dataset_name: String,
    pub scale: RatingScale,
    pub embeddings_path: String,
    pub embeddings_dim: usize,
    pub attack_name: AttackName,
    pub bandwagon_share: f64,
    pub attack: AttackConfig,
    pub victims: Vec<VictimKind>,
    pub victim: VictimConfig,
    pub backend_name: String,
    pub backend_fine_tune_epochs: usize,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub export_representations: bool,
    pub export_detector_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic { users: 200, items: 100, clusters: 4, density: 0.05 },
            dataset_name: "synthetic".to_string(),
            scale: RatingScale::new(1, 5).expect("static bounds"),
            embeddings_path: "random".to_string(),
            embeddings_dim: 50,
            attack_name: AttackName::RTrojan,
            bandwagon_share: 0.5,
            attack: AttackConfig::default(),
            victims: vec![VictimKind::Wrmf],
            victim: VictimConfig::default(),
            backend_name: "deterministic-template".to_string(),
            backend_fine_tune_epochs: 0,
            seeds: vec![0],
            output_dir: None,
            export_representations: true,
            export_detector_steps: 30,
        }
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ValidationErrors> {
    let mut pairs = BTreeMap::new();
    let mut errors = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                let key = k.trim().to_string();
                if key.is_empty() {
                    errors.push(format!("line {}: empty key", lineno + 1));
                } else if pairs.insert(key.clone(), v.trim().to_string()).is_some() {
                    errors.push(format!("line {}: duplicate key '{key}'", lineno + 1));
                }
            }
            None => errors.push(format!("line {}: expected 'key = value', got '{line}'", lineno + 1)),
        }
    }
    if errors.is_empty() {
        Ok(pairs)
    } else {
        Err(ValidationErrors(errors))
    }
}

struct FieldReader {
    pairs: BTreeMap<String, String>,
    errors: Vec<String>,
}

impl FieldReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.pairs.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, current: T) -> T
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            Some(raw) => match raw.parse() {
                Ok(v) => v,
                Err(e) => {
                    self.errors.push(format!("{key}: {e} (got '{raw}')"));
                    current
                }
            },
            None => current,
        }
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str, current: Option<T>) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            Some(raw) => match raw.parse() {
                Ok(v) => Some(v),
                Err(e) => {
                    self.errors.push(format!("{key}: {e} (got '{raw}')"));
                    current
                }
            },
            None => current,
        }
    }

    fn parse_list<T: std::str::FromStr>(&mut self, key: &str, current: Vec<T>) -> Vec<T>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            Some(raw) => {
                let mut out = Vec::new();
                for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    match part.parse() {
                        Ok(v) => out.push(v),
                        Err(e) => self.errors.push(format!("{key}: {e} (got '{part}')")),
                    }
                }
                out
            }
            None => current,
        }
    }
}

/// Parse and validate a config document against the built-in defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ValidationErrors> {
    let pairs = parse_pairs(text)?;
    let mut r = FieldReader { pairs, errors: Vec::new() };
    let mut cfg = ExperimentConfig::default();

    let kind = r.take("dataset.kind").unwrap_or_else(|| "synthetic".to_string());
    match kind.as_str() {
        "synthetic" => {
            let DatasetSpec::Synthetic { users, items, clusters, density } = cfg.dataset else {
                unreachable!("default is synthetic")
            };
            cfg.dataset = DatasetSpec::Synthetic {
                users: r.parse("dataset.users", users),
                items: r.parse("dataset.items", items),
                clusters: r.parse("dataset.clusters", clusters),
                density: r.parse("dataset.density", density),
            };
        }
        "files" => {
            let interactions = r.take("dataset.interactions").map(PathBuf::from);
            let metadata = r.take("dataset.metadata").map(PathBuf::from);
            let format = r.parse("dataset.format", CorpusFormat::Native);
            match interactions {
                Some(interactions) => {
                    cfg.dataset = DatasetSpec::Files { interactions, metadata, format }
                }
                None => r.errors.push("dataset.interactions: required when dataset.kind = files".to_string()),
            }
        }
        other => r.errors.push(format!("dataset.kind: expected synthetic or files, got '{other}'")),
    }
    cfg.dataset_name = r.take("dataset.name").unwrap_or(cfg.dataset_name);
    let scale_min = r.parse("dataset.scale_min", cfg.scale.min);
    let scale_max = r.parse("dataset.scale_max", cfg.scale.max);
    match RatingScale::new(scale_min, scale_max) {
        Ok(s) => cfg.scale = s,
        Err(e) => r.errors.push(format!("dataset.scale_min/scale_max: {e}")),
    }

    cfg.embeddings_path = r.take("embeddings.path").unwrap_or(cfg.embeddings_path);
    cfg.embeddings_dim = r.parse("embeddings.dim", cfg.embeddings_dim);
    if cfg.embeddings_dim == 0 {
        r.errors.push("embeddings.dim: must be positive".to_string());
    }

    match r.take("attack.name").as_deref() {
        None | Some("rtrojan") => cfg.attack_name = AttackName::RTrojan,
        Some("random") => cfg.attack_name = AttackName::Random,
        Some("bandwagon") => cfg.attack_name = AttackName::Bandwagon,
        Some(other) => {
            r.errors.push(format!("attack.name: expected rtrojan, random or bandwagon, got '{other}'"))
        }
    }
    cfg.bandwagon_share = r.parse("attack.bandwagon_share", cfg.bandwagon_share);
    if !(0.0..=1.0).contains(&cfg.bandwagon_share) {
        r.errors.push(format!("attack.bandwagon_share: must be in [0,1], got {}", cfg.bandwagon_share));
    }

    let a = &mut cfg.attack;
    a.target_item = r.parse("attack.target_item", a.target_item);
    a.attack_size = r.parse_opt("attack.size", a.attack_size);
    a.filler_size = r.parse_opt("attack.fillers", a.filler_size);
    a.lambda = r.parse("attack.lambda", a.lambda);
    a.k = r.parse("attack.k", a.k);
    a.c = r.parse("attack.c", a.c);
    a.outer_iterations = r.parse("attack.outer_iterations", a.outer_iterations);
    a.lower_epochs = r.parse("attack.lower_epochs", a.lower_epochs);
    a.detector_steps = r.parse("attack.detector_steps", a.detector_steps);
    a.generator_lr = r.parse("attack.generator_lr", a.generator_lr);
    a.pretrain_epochs = r.parse("attack.pretrain_epochs", a.pretrain_epochs);
    a.trans_subsample = r.parse("attack.trans_subsample", a.trans_subsample);
    a.cold_start = r.parse("attack.cold_start", a.cold_start);
    a.regenerate_reviews = r.parse("attack.regenerate_reviews", a.regenerate_reviews);
    a.doc_len = r.parse("attack.doc_len", a.doc_len);
    if !(0.0..=1.0).contains(&a.lambda) {
        r.errors.push(format!("attack.lambda: must be in [0,1], got {}", a.lambda));
    }
    if a.k == 0 {
        r.errors.push("attack.k: must be at least 1".to_string());
    }

    let s = &mut a.surrogate;
    s.d2 = r.parse("surrogate.d2", s.d2);
    s.filter_width = r.parse("surrogate.filter_width", s.filter_width);
    s.n_filters = r.parse("surrogate.n_filters", s.n_filters);
    s.lr = r.parse("surrogate.lr", s.lr);
    s.batch = r.parse("surrogate.batch", s.batch);
    s.epochs = r.parse("surrogate.epochs", s.epochs);
    s.neg_ratio = r.parse("surrogate.neg_ratio", s.neg_ratio);
    s.use_id_embeddings = r.parse("surrogate.use_id_embeddings", s.use_id_embeddings);

    let d = &mut a.detector;
    d.d3 = r.parse("detector.d3", d.d3);
    d.filter_width = r.parse("detector.filter_width", d.filter_width);
    d.n_filters = r.parse("detector.n_filters", d.n_filters);
    d.lr = r.parse("detector.lr", d.lr);

    cfg.victims = r.parse_list("victims", cfg.victims);
    if cfg.victims.is_empty() {
        r.errors.push("victims: at least one victim is required".to_string());
    }
    let v = &mut cfg.victim;
    v.factors = r.parse("victim.factors", v.factors);
    v.wrmf_reg = r.parse("victim.wrmf_reg", v.wrmf_reg);
    v.wrmf_alpha = r.parse("victim.wrmf_alpha", v.wrmf_alpha);
    v.wrmf_sweeps = r.parse("victim.wrmf_sweeps", v.wrmf_sweeps);
    v.ncf_layers = r.parse_list("victim.ncf_layers", std::mem::take(&mut v.ncf_layers));
    v.ncf_epochs = r.parse("victim.ncf_epochs", v.ncf_epochs);
    v.ncf_lr = r.parse("victim.ncf_lr", v.ncf_lr);
    v.lightgcn_layers = r.parse("victim.lightgcn_layers", v.lightgcn_layers);
    v.lightgcn_epochs = r.parse("victim.lightgcn_epochs", v.lightgcn_epochs);
    v.lightgcn_lr = r.parse("victim.lightgcn_lr", v.lightgcn_lr);
    v.lightgcn_reg = r.parse("victim.lightgcn_reg", v.lightgcn_reg);
    v.neg_ratio = r.parse("victim.neg_ratio", v.neg_ratio);
    v.batch = r.parse("victim.batch", v.batch);
    v.doc_len = r.parse("victim.doc_len", v.doc_len);
    v.deepconn = a.surrogate;

    match r.take("backend.name").as_deref() {
        None => {}
        Some(name @ ("deterministic-template" | "causal-lm")) => cfg.backend_name = name.to_string(),
        Some(other) => r.errors.push(format!(
            "backend.name: expected deterministic-template or causal-lm, got '{other}'"
        )),
    }
    cfg.backend_fine_tune_epochs = r.parse("backend.fine_tune_epochs", cfg.backend_fine_tune_epochs);

    cfg.seeds = r.parse_list("seeds", cfg.seeds);
    if cfg.seeds.is_empty() {
        r.errors.push("seeds: at least one seed is required".to_string());
    }
    cfg.output_dir = r.take("output.dir").map(PathBuf::from);
    cfg.export_representations = r.parse("export.representations", cfg.export_representations);
    cfg.export_detector_steps = r.parse("export.detector_steps", cfg.export_detector_steps);

    for key in r.pairs.keys() {
        r.errors.push(format!("{key}: unknown key"));
    }
    if r.errors.is_empty() {
        Ok(cfg)
    } else {
        r.errors.sort();
        Err(ValidationErrors(r.errors))
    }
}

fn fmt_list<T: fmt::Display>(vals: &[T]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Canonical text form: every effective key, defaults materialized, sorted.
/// Parsing the output reproduces the config exactly, and the provenance hash
/// is taken over these bytes.
pub fn canonical_text(cfg: &ExperimentConfig) -> String {
    let mut pairs: BTreeMap<String, String> = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        pairs.insert(k.to_string(), v);
    };
    match &cfg.dataset {
        DatasetSpec::Synthetic { users, items, clusters, density } => {
            put("dataset.kind", "synthetic".into());
            put("dataset.users", users.to_string());
            put("dataset.items", items.to_string());
            put("dataset.clusters", clusters.to_string());
            put("dataset.density", density.to_string());
        }
        DatasetSpec::Files { interactions, metadata, format } => {
            put("dataset.kind", "files".into());
            put("dataset.interactions", interactions.display().to_string());
            if let Some(meta) = metadata {
                put("dataset.metadata", meta.display().to_string());
            }
            let fname = match format {
                CorpusFormat::AmazonJsonLines => "amazon-json-lines",
                CorpusFormat::YelpJson => "yelp-json",
                CorpusFormat::Native => "native",
            };
            put("dataset.format", fname.into());
        }
    }
    put("dataset.name", cfg.dataset_name.clone());
    put("dataset.scale_min", cfg.scale.min.to_string());
    put("dataset.scale_max", cfg.scale.max.to_string());
    put("embeddings.path", cfg.embeddings_path.clone());
    put("embeddings.dim", cfg.embeddings_dim.to_string());
    put("attack.name", cfg.attack_name.label().into());
    put("attack.bandwagon_share", cfg.bandwagon_share.to_string());
    let a = &cfg.attack;
    put("attack.target_item", a.target_item.to_string());
    if let Some(size) = a.attack_size {
        put("attack.size", size.to_string());
    }
    if let Some(fillers) = a.filler_size {
        put("attack.fillers", fillers.to_string());
    }
    put("attack.lambda", a.lambda.to_string());
    put("attack.k", a.k.to_string());
    put("attack.c", a.c.to_string());
    put("attack.outer_iterations", a.outer_iterations.to_string());
    put("attack.lower_epochs", a.lower_epochs.to_string());
    put("attack.detector_steps", a.detector_steps.to_string());
    put("attack.generator_lr", a.generator_lr.to_string());
    put("attack.pretrain_epochs", a.pretrain_epochs.to_string());
    put("attack.trans_subsample", a.trans_subsample.to_string());
    put("attack.cold_start", a.cold_start.to_string());
    put("attack.regenerate_reviews", a.regenerate_reviews.to_string());
    put("attack.doc_len", a.doc_len.to_string());
    let s = &a.surrogate;
    put("surrogate.d2", s.d2.to_string());
    put("surrogate.filter_width", s.filter_width.to_string());
    put("surrogate.n_filters", s.n_filters.to_string());
    put("surrogate.lr", s.lr.to_string());
    put("surrogate.batch", s.batch.to_string());
    put("surrogate.epochs", s.epochs.to_string());
    put("surrogate.neg_ratio", s.neg_ratio.to_string());
    put("surrogate.use_id_embeddings", s.use_id_embeddings.to_string());
    let d = &a.detector;
    put("detector.d3", d.d3.to_string());
    put("detector.filter_width", d.filter_width.to_string());
    put("detector.n_filters", d.n_filters.to_string());
    put("detector.lr", d.lr.to_string());
    put("victims", fmt_list(&cfg.victims.iter().map(|v| v.name()).collect::<Vec<_>>()));
    let v = &cfg.victim;
    put("victim.factors", v.factors.to_string());
    put("victim.wrmf_reg", v.wrmf_reg.to_string());
    put("victim.wrmf_alpha", v.wrmf_alpha.to_string());
    put("victim.wrmf_sweeps", v.wrmf_sweeps.to_string());
    put("victim.ncf_layers", fmt_list(&v.ncf_layers));
    put("victim.ncf_epochs", v.ncf_epochs.to_string());
    put("victim.ncf_lr", v.ncf_lr.to_string());
    put("victim.lightgcn_layers", v.lightgcn_layers.to_string());
    put("victim.lightgcn_epochs", v.lightgcn_epochs.to_string());
    put("victim.lightgcn_lr", v.lightgcn_lr.to_string());
    put("victim.lightgcn_reg", v.lightgcn_reg.to_string());
    put("victim.neg_ratio", v.neg_ratio.to_string());
    put("victim.batch", v.batch.to_string());
    put("victim.doc_len", v.doc_len.to_string());
    put("backend.name", cfg.backend_name.clone());
    put("backend.fine_tune_epochs", cfg.backend_fine_tune_epochs.to_string());
    put("seeds", fmt_list(&cfg.seeds));
    if let Some(dir) = &cfg.output_dir {
        put("output.dir", dir.display().to_string());
    }
    put("export.representations", cfg.export_representations.to_string());
    put("export.detector_steps", cfg.export_detector_steps.to_string());

    let mut out = String::new();
    for (k, v) in &pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Hex SHA-256 of the canonical text, the config's provenance identity.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(canonical_text(cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
