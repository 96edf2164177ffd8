use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use mrl_core::pipeline::{self, run_dir_name, Findings, RunConfig, RunDir, SearchQuery};
use mrl_core::{Error, Variant};
use serde_json::json;

/// Cross-modal Matryoshka embedding runs: synthetic data, training,
/// prefix-dimension indexing and evaluation.
#[derive(Parser)]
#[command(name = "mrl", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run directory. Defaults to `<run root>/<config hash>`.
    #[arg(long, global = true, value_name = "PATH")]
    run_dir: Option<PathBuf>,

    /// Overrides `data.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Use stale or unrecorded upstream artifacts, and reuse a run
    /// directory that belongs to another config.
    #[arg(long, global = true)]
    force: bool,

    /// Parent of content-addressed run directories.
    #[arg(long, global = true, env = "MRL_RUN_ROOT", default_value = "runs", value_name = "PATH")]
    run_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the retrieval, pretraining, keyword and intent corpora.
    Gen,
    /// Train model variants (all configured variants by default).
    Train {
        #[arg(long = "variant", value_parser = parse_variant)]
        variants: Vec<Variant>,
    },
    /// Embed documents and test queries.
    Embed {
        #[arg(long, value_parser = parse_variant, default_value = "late-fusion")]
        variant: Variant,
    },
    /// Build the binary16 document shard.
    Index,
    /// Query the shard.
    Search(SearchArgs),
    /// nDCG@k document retrieval for every variant plus the pipelined baseline.
    EvalRetrieval,
    /// Keyword spotting F1 and recall.
    EvalKws,
    /// Few-shot intent detection.
    EvalIntent,
    /// Cumulative energy-ratio rank analysis.
    AnalyzeRank,
    /// Disk size and query latency per dimension.
    BenchCost,
    /// Run everything and check the expected trends.
    ReproFindings,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SearchTarget {
    /// Embed the speech of this corpus example as the query.
    #[arg(long)]
    example: Option<u64>,
    /// Use this stored document vector as the query.
    #[arg(long)]
    document: Option<u64>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    target: SearchTarget,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

/// A failed command: printed as one JSON record on stderr.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Failure { code, kind: e.kind(), message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out).expect("json output"));
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", json!({ "error": { "kind": f.kind, "message": f.message } }));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, Failure> {
    let Some(path) = &cli.config else {
        Cli::command().error(ErrorKind::MissingRequiredArgument, "--config <PATH> is required").exit();
    };
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.data.seed = seed;
        config.validate()?;
    }
    let root = cli.run_dir.clone().unwrap_or_else(|| cli.run_root.join(run_dir_name(&config)));
    let mut run = RunDir::open(&root, config, cli.force)?;
    let dir = run.root().display().to_string();
    let body = match cli.command {
        Command::Gen => json!(pipeline::gen(&mut run)?),
        Command::Train { variants } => {
            let v = if variants.is_empty() { run.config().train.variants.clone() } else { variants };
            json!(pipeline::train(&mut run, &v)?)
        }
        Command::Embed { variant } => {
            let (docs, queries) = pipeline::embed(&mut run, variant)?;
            json!({ "documents": docs, "query_vectors": queries })
        }
        Command::Index => json!({ "documents": pipeline::index(&mut run)? }),
        Command::Search(a) => {
            let q = match (a.target.example, a.target.document) {
                (Some(id), _) => SearchQuery::Example(id),
                (_, Some(id)) => SearchQuery::Document(id),
                _ => unreachable!("clap enforces one search target"),
            };
            let r = pipeline::search(&mut run, q, a.dim, a.k)?;
            json!({ "dim": r.dim, "hits": r.hits, "latency_s": r.latency_s })
        }
        Command::EvalRetrieval => json!(pipeline::eval_retrieval(&mut run)?.cells),
        Command::EvalKws => json!(pipeline::eval_kws(&mut run)?.cells),
        Command::EvalIntent => json!(pipeline::eval_intent(&mut run)?.cells),
        Command::AnalyzeRank => json!(pipeline::analyze_rank(&mut run)?.cells),
        Command::BenchCost => json!(pipeline::bench_cost(&mut run)?.rows),
        Command::ReproFindings => {
            let (findings, _) = pipeline::repro_findings(&mut run)?;
            eprint!("{}", Findings::summary_table(&findings.checks));
            eprint!("{}", Findings::summary_table(&findings.timing_checks));
            if !findings.all_pass() {
                let failed: Vec<&str> = findings
                    .checks
                    .iter()
                    .chain(&findings.timing_checks)
                    .filter(|c| !c.pass)
                    .map(|c| c.id.as_str())
                    .collect();
                return Err(Failure {
                    code: 3,
                    kind: "findings",
                    message: format!("trend checks failed: {}", failed.join(", ")),
                });
            }
            json!(findings)
        }
    };
    Ok(json!({ "run_dir": dir, "result": body }))
}
