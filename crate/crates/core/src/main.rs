use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rtrojan::config::parse_config;
use rtrojan::data::ingest::{load_item_metadata, load_review_corpus, write_native, CorpusFormat};
use rtrojan::data::synthetic::generate_synthetic_dataset;
use rtrojan::data::{build_dataset, RatingScale};
use rtrojan::experiment::{eval_only, run_experiment, RunFailure};
use rtrojan::victims::VictimKind;

#[derive(Parser)]
#[command(name = "rtrojan", version, about = "Profile-injection attack laboratory for recommender systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list, e.g. --seeds 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a raw review corpus into the native dataset layout.
    Ingest {
        #[arg(long)]
        format: String,
        #[arg(long = "in")]
        input: PathBuf,
        /// Optional item metadata file in the same format.
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        scale_min: i64,
        #[arg(long, default_value_t = 5)]
        scale_max: i64,
    },
    /// Generate a planted-cluster synthetic dataset.
    Synth {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        items: usize,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate one victim against previously written fake profiles.
    EvalOnly {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fakes: PathBuf,
        #[arg(long)]
        victim: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;

fn fail_validation(msg: &str) -> ExitCode {
    eprintln!("{msg}");
    ExitCode::from(EXIT_VALIDATION)
}

fn fail_runtime(stage: &str, msg: &str) -> ExitCode {
    eprintln!("stage '{stage}' failed: {msg}");
    ExitCode::from(EXIT_RUNTIME)
}

fn report_failure(f: RunFailure) -> ExitCode {
    match f {
        RunFailure::Validation(errs) => fail_validation(&format!("invalid configuration:\n{errs}")),
        RunFailure::Runtime { stage, error } => fail_runtime(&stage, &error.to_string()),
    }
}

fn load_config(path: &PathBuf) -> Result<rtrojan::config::ExperimentConfig, ExitCode> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail_validation(&format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|errs| fail_validation(&format!("invalid configuration:\n{errs}")))
}

fn cmd_run(config: PathBuf, seeds: Option<Vec<u64>>, out: Option<PathBuf>) -> ExitCode {
    let mut cfg = match load_config(&config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(seeds) = seeds {
        if seeds.is_empty() {
            return fail_validation("--seeds: at least one seed is required");
        }
        cfg.seeds = seeds;
    }
    let out_dir = match out.or_else(|| cfg.output_dir.clone()) {
        Some(dir) => dir,
        None => return fail_validation("output.dir: required in the config or via --out"),
    };
    match run_experiment(&cfg, &out_dir) {
        Ok(outcome) => {
            println!(
                "wrote {} report(s) for {} seed(s) to {}",
                outcome.reports.len(),
                cfg.seeds.len(),
                outcome.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(f) => report_failure(f),
    }
}

fn cmd_ingest(
    format: String,
    input: PathBuf,
    meta: Option<PathBuf>,
    out: PathBuf,
    scale_min: i64,
    scale_max: i64,
) -> ExitCode {
    let format: CorpusFormat = match format.parse() {
        Ok(f) => f,
        Err(e) => return fail_validation(&format!("--format: {e}")),
    };
    let scale = match RatingScale::new(scale_min, scale_max) {
        Ok(s) => s,
        Err(e) => return fail_validation(&format!("--scale-min/--scale-max: {e}")),
    };
    let load = match load_review_corpus(&input, format) {
        Ok(l) => l,
        Err(e) => return fail_runtime("ingest", &e.to_string()),
    };
    let attrs = match &meta {
        Some(path) => match load_item_metadata(path, format) {
            Ok(a) => a,
            Err(e) => return fail_runtime("ingest", &e.to_string()),
        },
        None => Vec::new(),
    };
    let ds = match build_dataset(&load.interactions, &attrs, scale) {
        Ok(d) => d,
        Err(e) => return fail_runtime("ingest", &e.to_string()),
    };
    if let Err(e) = write_native(&ds, &out) {
        return fail_runtime("ingest", &e.to_string());
    }
    println!(
        "ingested {} users, {} items, {} interactions ({} records skipped) into {}",
        ds.n_users(),
        ds.n_items(),
        ds.interaction_count(),
        load.skipped(),
        out.display()
    );
    ExitCode::SUCCESS
}

fn cmd_synth(
    users: usize,
    items: usize,
    clusters: usize,
    density: f64,
    seed: u64,
    out: PathBuf,
) -> ExitCode {
    let ds = match generate_synthetic_dataset(users, items, clusters, density, seed) {
        Ok(d) => d,
        Err(e) => return fail_validation(&format!("synthetic parameters: {e}")),
    };
    if let Err(e) = write_native(&ds, &out) {
        return fail_runtime("synth", &e.to_string());
    }
    println!(
        "generated {} users, {} items, {} interactions into {}",
        ds.n_users(),
        ds.n_items(),
        ds.interaction_count(),
        out.display()
    );
    ExitCode::SUCCESS
}

fn cmd_eval_only(
    config: PathBuf,
    fakes: PathBuf,
    victim: String,
    out: Option<PathBuf>,
) -> ExitCode {
    let cfg = match load_config(&config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let kind: VictimKind = match victim.parse() {
        Ok(k) => k,
        Err(e) => return fail_validation(&format!("--victim: {e}")),
    };
    let out_dir = match out.or_else(|| cfg.output_dir.clone()) {
        Some(dir) => dir,
        None => return fail_validation("output.dir: required in the config or via --out"),
    };
    match eval_only(&cfg, &fakes, kind, &out_dir) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(f) => report_failure(f),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Command::Run { config, seeds, out } => cmd_run(config, seeds, out),
        Command::Ingest { format, input, meta, out, scale_min, scale_max } => {
            cmd_ingest(format, input, meta, out, scale_min, scale_max)
        }
        Command::Synth { users, items, clusters, density, seed, out } => {
            cmd_synth(users, items, clusters, density, seed, out)
        }
        Command::EvalOnly { config, fakes, victim, out } => {
            cmd_eval_only(config, fakes, victim, out)
        }
    }
}
