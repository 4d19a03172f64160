//! The `skillfactor` command line: run pipeline stages over a markdown skill
//! library, query the retrieval pool, and render substituted bundles.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use skillfactor::bundle::{render_bundle, retrieve, substitute};
use skillfactor::embed::LocalEmbedder;
use skillfactor::error::Error;
use skillfactor::pipeline::{
    artifact_path, read_artifact, run_all, run_stage, BackendMode, EmbedderMode, PipelineConfig,
    Stage,
};

#[derive(Parser)]
#[command(name = "skillfactor", version, about = "Convert markdown skill libraries into verified typed contracts")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Directory of markdown skill documents to process.
    #[arg(long, global = true, default_value = "library")]
    lib_dir: PathBuf,

    /// Directory for stage artifacts and the refactored output.
    #[arg(long, global = true, default_value = "pipeline_out")]
    out_dir: PathBuf,

    /// Completion backend for the LLM-aware passes.
    #[arg(long, global = true, value_parser = parse_backend, default_value = "mock")]
    backend: BackendMode,

    /// Embedding backend for clustering and retrieval.
    #[arg(long, global = true, value_parser = parse_embedder, default_value = "local")]
    embedder: EmbedderMode,

    /// Explicit policy file; defaults to the calibrated artifact when present.
    #[arg(long, global = true)]
    policy: Option<PathBuf>,

    /// Cosine threshold for candidate clustering.
    #[arg(long, global = true, default_value_t = skillfactor::propose::DEFAULT_THRESHOLD)]
    threshold: f32,

    /// Negative controls generated per class.
    #[arg(long, global = true, default_value_t = skillfactor::calibrate::DEFAULT_N_PER_CLASS)]
    n_per_class: usize,

    /// Seed for control generation.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Upper bound on concurrent backend calls within a stage.
    #[arg(long, global = true, default_value_t = 1)]
    parallelism: usize,

    /// Canned mock contract drafts keyed by cluster id.
    #[arg(long, global = true)]
    mock_contracts: Option<PathBuf>,

    /// Run the binding-extraction pass against the live backend.
    #[arg(long, global = true)]
    llm_bindings: bool,
}

fn parse_backend(s: &str) -> Result<BackendMode, String> {
    match s {
        "mock" => Ok(BackendMode::Mock),
        "live" => Ok(BackendMode::Live),
        other => Err(format!("unknown backend `{other}` (expected mock|live)")),
    }
}

fn parse_embedder(s: &str) -> Result<EmbedderMode, String> {
    match s {
        "local" => Ok(EmbedderMode::Local),
        "remote" => Ok(EmbedderMode::Remote),
        other => Err(format!("unknown embedder `{other}` (expected local|remote)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline stage.
    Run {
        /// parse | propose | extract | verify | controls | calibrate | refactor | pool
        stage: String,
    },
    /// Run every stage in order, resuming from existing artifacts.
    RunAll {
        /// Recompute stages even when their artifact exists.
        #[arg(long)]
        force: bool,
    },
    /// Retrieval pool operations.
    Pool {
        #[command(subcommand)]
        action: PoolAction,
    },
    /// Substituted bundle operations.
    Bundle {
        #[command(subcommand)]
        action: BundleAction,
    },
}

#[derive(Subcommand)]
enum PoolAction {
    /// Build the pool artifact from the refactored library.
    Build {
        /// Also index child contracts (ablation mode).
        #[arg(long)]
        include_children: bool,
    },
    /// Query the pool and print ranked ids.
    Query {
        query: String,
        #[arg(long, default_value_t = skillfactor::bundle::DEFAULT_K)]
        k: usize,
        #[arg(long)]
        include_children: bool,
    },
}

#[derive(Subcommand)]
enum BundleAction {
    /// Render the substituted bundle for one parent to stdout or a file.
    Render {
        parent_id: String,
        /// Write to a file instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn config_from(common: &CommonArgs) -> PipelineConfig {
    let mut config = PipelineConfig::new(common.lib_dir.clone(), common.out_dir.clone());
    config.backend = common.backend;
    config.embedder = common.embedder;
    config.policy_path = common.policy.clone();
    config.clustering_threshold = common.threshold;
    config.n_per_class = common.n_per_class;
    config.seed = common.seed;
    config.parallelism = common.parallelism.max(1);
    config.mock_contracts = common.mock_contracts.clone();
    config.llm_bindings = common.llm_bindings;
    config
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> skillfactor::Result<()> {
    let mut config = config_from(&cli.common);
    match &cli.command {
        Command::Run { stage } => {
            let stage: Stage = stage.parse()?;
            let summary = run_stage(stage, &config)?;
            println!("{}", summary.line);
        }
        Command::RunAll { force } => {
            let report = run_all(&config, *force)?;
            for skipped in &report.skipped {
                println!("{skipped}: skipped (artifact exists)");
            }
            for stage in &report.stages {
                println!("{}", stage.line);
            }
            if let Some(summary) = &report.verifier_summary {
                println!(
                    "tiers: {} auto_promote / {} review / {} reject",
                    summary.auto_promote, summary.review, summary.reject
                );
                for (check, count) in &summary.rejections_by_check {
                    println!("  rejected at {check}: {count}");
                }
            }
        }
        Command::Pool { action } => match action {
            PoolAction::Build { include_children } => {
                config.include_children = *include_children;
                let summary = run_stage(Stage::Pool, &config)?;
                println!("{}", summary.line);
            }
            PoolAction::Query { query, k, include_children } => {
                let pool =
                    skillfactor::pipeline::load_or_build_pool(&config, *include_children)?;
                let hits = retrieve(query, &pool, &LocalEmbedder, *k)?;
                for (rank, (id, score)) in hits.iter().enumerate() {
                    println!("{:>2}. {id}  (cosine {score:.4})", rank + 1);
                }
            }
        },
        Command::Bundle { action } => match action {
            BundleAction::Render { parent_id, out } => {
                let library: skillfactor::parser::SkillLibrary =
                    read_artifact(&artifact_path(&config.out_dir, Stage::Parse))?;
                let refactored: skillfactor::refactor::RefactoredLibrary =
                    read_artifact(&artifact_path(&config.out_dir, Stage::Refactor))?;
                let bundle = substitute(parent_id, &refactored, &library)?;
                let rendered = render_bundle(&bundle);
                match out {
                    Some(path) => std::fs::write(path, rendered)
                        .map_err(|e| Error::io(path.display().to_string(), e))?,
                    None => print!("{rendered}"),
                }
            }
        },
    }
    Ok(())
}
