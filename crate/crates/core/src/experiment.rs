//! Experiment orchestration: dataset -> split -> attack -> per-victim
//! evaluation, with every artifact written to the output directory and every
//! random draw tied to a named seed stream so reruns are byte-identical.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{
    fake_profiles, poisoned_interactions, real_profiles, run_attack, FakeProfileBatch, LossPoint,
};
use crate::config::{
    canonical_text, config_hash, AttackName, DatasetSpec, ExperimentConfig, ValidationErrors,
};
use crate::data::embeddings::{load_word_embeddings, EmbeddingTable};
use crate::data::ingest::{load_item_metadata, load_review_corpus};
use crate::data::split::{leave_one_out_split, SplitDataset};
use crate::data::tokenize::{tokenize, DEFAULT_REVIEW_TOKEN_CAP};
use crate::data::synthetic::generate_synthetic_dataset;
use crate::data::{build_dataset, Dataset, SparseMatrix};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::eval::{evaluate_attack, export_representations, EvalLabels, EvaluationReport};
use crate::rating_gen::FakeRatingMatrix;
use crate::review_gen::{backend_from_name, build_training_corpus, TextBackend};
use crate::rng::sub_seed;
use crate::surrogate::build_review_documents;
use crate::victims::{bandwagon_attack, random_attack};

/// Directory for persisting fine-tuned text backends across runs.
pub const BACKEND_CACHE_ENV: &str = "RTROJAN_BACKEND_CACHE";

/// Checkpoint kind tag for saved generator weights.
pub const GENERATOR_TAG: &str = "rtgn";

#[derive(Debug)]
pub enum RunFailure {
    Validation(ValidationErrors),
    Runtime { stage: String, error: Error },
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunFailure::Validation(errs) => write!(f, "invalid configuration:\n{errs}"),
            RunFailure::Runtime { stage, error } => write!(f, "stage '{stage}' failed: {error}"),
        }
    }
}

impl std::error::Error for RunFailure {}

fn at_stage<T>(stage: &str, r: Result<T>) -> std::result::Result<T, RunFailure> {
    r.map_err(|error| RunFailure::Runtime { stage: stage.to_string(), error })
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub reports: Vec<EvaluationReport>,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: String,
    code_version: &'static str,
    seeds: &'a [u64],
    canonical_config: String,
}

#[derive(Serialize, Deserialize)]
struct FakeProfileRecord {
    fake_user_id: usize,
    ratings: Vec<(usize, f64)>,
    reviews: Vec<(usize, String)>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

/// Serialize fake profiles as JSON-lines keyed by their row id in the
/// poisoned matrix.
pub fn write_fake_profiles(
    batch: &FakeProfileBatch,
    n_real_users: usize,
    path: &Path,
) -> Result<()> {
    let mut out = Vec::new();
    for row in 0..batch.attack_size() {
        let ratings: Vec<(usize, f64)> = batch.ratings.ratings.row(row).to_vec();
        let reviews: Vec<(usize, String)> = batch
            .reviews
            .range((row, 0)..(row + 1, 0))
            .map(|(&(_, i), text)| (i, text.clone()))
            .collect();
        let rec = FakeProfileRecord { fake_user_id: n_real_users + row, ratings, reviews };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::invalid(e.to_string()))?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Rebuild a profile batch from its JSON-lines form. Rows are reindexed to
/// 0..A in ascending fake_user_id order; the target column is taken from the
/// caller because the file stores only the ratings themselves.
pub fn read_fake_profiles(path: &Path, n_items: usize, target_item: usize) -> Result<FakeProfileBatch> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut records: Vec<FakeProfileRecord> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: e.to_string(),
        })?);
    }
    records.sort_by_key(|r| r.fake_user_id);
    let mut ratings = SparseMatrix::zeros(records.len(), n_items);
    let mut filler_masks = Vec::with_capacity(records.len());
    let mut reviews = std::collections::BTreeMap::new();
    for (row, rec) in records.iter().enumerate() {
        let mut mask = vec![false; n_items];
        for &(i, v) in &rec.ratings {
            if i >= n_items {
                return Err(Error::IndexOutOfRange { what: "item", index: i, limit: n_items });
            }
            ratings.set(row, i, v);
            if i != target_item {
                mask[i] = true;
            }
        }
        filler_masks.push(mask);
        for (i, text) in &rec.reviews {
            reviews.insert((row, *i), text.clone());
        }
    }
    Ok(FakeProfileBatch {
        ratings: FakeRatingMatrix { ratings, filler_masks, target_item },
        reviews,
    })
}

pub fn write_loss_trace(trace: &[LossPoint], path: &Path) -> Result<()> {
    let mut out = String::from("iteration,combined,l_trans,l_imper,l_rs,l_de\n");
    for (k, p) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k, p.combined, p.l_trans, p.l_imper, p.l_rs, p.l_de
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// One row per victim x attack x seed; no wall-clock column so reruns of the
/// same config produce byte-identical files.
pub fn write_aggregate_csv(reports: &[EvaluationReport], path: &Path) -> Result<()> {
    let mut out = String::from(
        "victim,dataset,attack,attack_size,filler_size,k,seed,hr_before,hr_after,ndcg_before,ndcg_after\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.victim,
            r.dataset,
            r.attack,
            r.attack_size,
            r.filler_size,
            r.k,
            r.seed,
            r.hr_before,
            r.hr_after,
            r.ndcg_before,
            r.ndcg_after
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Every token appearing in the dataset's reviews, for restricting a word
/// embedding file to what the corpus needs.
pub fn review_vocabulary(ds: &Dataset) -> BTreeSet<String> {
    let mut vocab = BTreeSet::new();
    for (u, i, _) in ds.ratings.iter() {
        if let Some(text) = ds.review(u, i) {
            vocab.extend(tokenize(text, DEFAULT_REVIEW_TOKEN_CAP));
        }
    }
    vocab
}

pub fn build_experiment_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSpec::Synthetic { users, items, clusters, density } => {
            generate_synthetic_dataset(*users, *items, *clusters, *density, sub_seed(seed, "data"))
        }
        DatasetSpec::Files { interactions, metadata, format } => {
            let load = load_review_corpus(interactions, *format)?;
            let attrs = match metadata {
                Some(path) => load_item_metadata(path, *format)?,
                None => Vec::new(),
            };
            build_dataset(&load.interactions, &attrs, cfg.scale)
        }
    }
}

fn make_backend(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<Box<dyn TextBackend>> {
    let mut backend = backend_from_name(&cfg.backend_name)?;
    if cfg.backend_fine_tune_epochs > 0 {
        let corpus = build_training_corpus(ds);
        backend.fine_tune(&corpus, cfg.backend_fine_tune_epochs, sub_seed(seed, "backend"))?;
        if let Ok(cache) = std::env::var(BACKEND_CACHE_ENV) {
            let dir = PathBuf::from(cache).join(format!("{}-seed{}", backend.kind(), seed));
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            backend.save(&dir)?;
        }
    }
    Ok(backend)
}

fn run_attack_stage(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    table: &EmbeddingTable,
    backend: &dyn TextBackend,
    seed: u64,
    seed_dir: &Path,
) -> Result<FakeProfileBatch> {
    let mut attack_cfg = cfg.attack.clone();
    attack_cfg.seed = sub_seed(seed, "attack");
    match cfg.attack_name {
        AttackName::RTrojan => {
            let result = run_attack(split, &attack_cfg, table, backend)?;
            write_loss_trace(&result.loss_trace, &seed_dir.join("loss_trace.csv"))?;
            crate::checkpoint::write_tensors(
                &seed_dir.join("generator.ckpt"),
                GENERATOR_TAG,
                &result.generator_checkpoint,
            )?;
            Ok(result.fakes)
        }
        AttackName::Random => random_attack(&split.train, &attack_cfg, backend, attack_cfg.seed),
        AttackName::Bandwagon => bandwagon_attack(
            &split.train,
            &attack_cfg,
            cfg.bandwagon_share,
            backend,
            attack_cfg.seed,
        ),
    }
}

fn export_stage(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    table: &EmbeddingTable,
    fakes: &FakeProfileBatch,
    seed: u64,
    seed_dir: &Path,
) -> Result<()> {
    if !cfg.export_representations || fakes.attack_size() == 0 {
        return Ok(());
    }
    let ds = &split.train;
    let docs = build_review_documents(ds, Some(&fakes.reviews), table, cfg.attack.doc_len);
    let real = real_profiles(&ds.ratings, &docs);
    let fake = fake_profiles(&fakes.ratings, &docs);
    let mut detector = Detector::new(
        ds.n_items(),
        docs.dim(),
        cfg.attack.detector,
        sub_seed(seed, "export-detector"),
    );
    detector.train(&real, &fake, cfg.export_detector_steps, sub_seed(seed, "export-detector"))?;
    export_representations(&mut detector, &real, &fake, &seed_dir.join("representations.csv"))
}

/// Evaluate every configured victim against the same profile batch. One
/// victim failing never blocks the others: its error is returned alongside
/// the reports that did succeed, all of which are already on disk.
fn evaluate_victims(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    fakes: &FakeProfileBatch,
    table: &EmbeddingTable,
    seed: u64,
    seed_dir: &Path,
) -> std::result::Result<(Vec<EvaluationReport>, Option<RunFailure>), RunFailure> {
    let labels = EvalLabels { dataset: &cfg.dataset_name, attack: cfg.attack_name.label() };
    let mut reports = Vec::new();
    let mut first_failure = None;
    for &kind in &cfg.victims {
        match evaluate_attack(
            split,
            fakes,
            kind,
            &cfg.victim,
            table,
            cfg.attack.k,
            labels,
            sub_seed(seed, "victim"),
        ) {
            Ok(report) => {
                let path = seed_dir.join(format!("report-{}.json", kind.name()));
                at_stage(
                    "report",
                    std::fs::write(
                        &path,
                        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
                    )
                    .map_err(io_err(&path)),
                )?;
                reports.push(report);
            }
            Err(error) => {
                eprintln!("victim '{}' failed on seed {seed}: {error}", kind.name());
                if first_failure.is_none() {
                    first_failure = Some(RunFailure::Runtime {
                        stage: format!("evaluate/{}", kind.name()),
                        error,
                    });
                }
            }
        }
    }
    Ok((reports, first_failure))
}

/// Run the full experiment described by `cfg` into `out_dir`. All artifacts
/// land on disk even when a victim fails; the first failure is reported after
/// the remaining victims have been evaluated.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> std::result::Result<ExperimentOutcome, RunFailure> {
    at_stage("setup", std::fs::create_dir_all(out_dir).map_err(io_err(out_dir)))?;
    let manifest = Manifest {
        config_hash: config_hash(cfg),
        code_version: env!("CARGO_PKG_VERSION"),
        seeds: &cfg.seeds,
        canonical_config: canonical_text(cfg),
    };
    let manifest_path = out_dir.join("manifest.json");
    at_stage(
        "setup",
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
        )
        .map_err(io_err(&manifest_path)),
    )?;

    let mut reports = Vec::new();
    let mut first_victim_failure: Option<RunFailure> = None;
    for &seed in &cfg.seeds {
        let seed_dir = out_dir.join(format!("seed-{seed}"));
        at_stage("setup", std::fs::create_dir_all(&seed_dir).map_err(io_err(&seed_dir)))?;

        let ds = at_stage("dataset", build_experiment_dataset(cfg, seed))?;
        let split = leave_one_out_split(&ds, sub_seed(seed, "data"));
        let vocab = review_vocabulary(&split.train);
        let table = at_stage(
            "embeddings",
            load_word_embeddings(&cfg.embeddings_path, cfg.embeddings_dim, &vocab, sub_seed(seed, "data")),
        )?;
        let backend = at_stage("backend", make_backend(cfg, &split.train, seed))?;

        let fakes = at_stage(
            "attack",
            run_attack_stage(cfg, &split, &table, backend.as_ref(), seed, &seed_dir),
        )?;
        at_stage(
            "attack",
            write_fake_profiles(&fakes, split.train.n_users(), &seed_dir.join("fakes.jsonl")),
        )?;

        let (seed_reports, failure) = evaluate_victims(cfg, &split, &fakes, &table, seed, &seed_dir)?;
        reports.extend(seed_reports);
        if let Some(f) = failure {
            first_victim_failure.get_or_insert(f);
        }

        at_stage("export", export_stage(cfg, &split, &table, &fakes, seed, &seed_dir))?;
    }

    at_stage("aggregate", write_aggregate_csv(&reports, &out_dir.join("aggregate.csv")))?;
    if let Some(failure) = first_victim_failure {
        return Err(failure);
    }
    Ok(ExperimentOutcome { reports, out_dir: out_dir.to_path_buf() })
}

/// Evaluate a single victim against profiles previously written by a run,
/// without re-running the attack.
pub fn eval_only(
    cfg: &ExperimentConfig,
    fakes_path: &Path,
    victim: crate::victims::VictimKind,
    out_dir: &Path,
) -> std::result::Result<EvaluationReport, RunFailure> {
    let seed = cfg.seeds[0];
    let ds = at_stage("dataset", build_experiment_dataset(cfg, seed))?;
    let split = leave_one_out_split(&ds, sub_seed(seed, "data"));
    let vocab = review_vocabulary(&split.train);
    let table = at_stage(
        "embeddings",
        load_word_embeddings(&cfg.embeddings_path, cfg.embeddings_dim, &vocab, sub_seed(seed, "data")),
    )?;
    let fakes = at_stage(
        "attack",
        read_fake_profiles(fakes_path, split.train.n_items(), cfg.attack.target_item),
    )?;
    let labels = EvalLabels { dataset: &cfg.dataset_name, attack: cfg.attack_name.label() };
    let report = at_stage(
        "evaluate",
        evaluate_attack(
            &split,
            &fakes,
            victim,
            &cfg.victim,
            &table,
            cfg.attack.k,
            labels,
            sub_seed(seed, "victim"),
        ),
    )?;
    at_stage("setup", std::fs::create_dir_all(out_dir).map_err(io_err(out_dir)))?;
    let path = out_dir.join(format!("report-{}.json", victim.name()));
    at_stage(
        "report",
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        )
        .map_err(io_err(&path)),
    )?;
    Ok(report)
}

/// Used by `synth` and `ingest` subcommands: materialize a dataset to the
/// native JSON-lines layout.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    crate::data::ingest::write_native(ds, dir)
}

/// Since the poisoned victim sees real rows stacked over fake rows, a quick
/// sanity accessor for tests and the CLI's summary line.
pub fn poisoned_matrix(split: &SplitDataset, fakes: &FakeProfileBatch) -> SparseMatrix {
    poisoned_interactions(&split.train.ratings, &fakes.ratings)
}
