//! Run configuration, content-addressed run directories, and the commands
//! that turn a config into corpora, checkpoints, shards and reports.

mod artifacts;
mod config;
mod findings;
mod rundir;
mod stages;

pub use artifacts::*;
pub use config::{BenchSection, DataSection, EvalSection, IndexSection, RunConfig, SeedPurpose, TrainSection};
pub use findings::{evaluate, nearly_nondecreasing, repro_findings, Check, Findings, Reports};
pub use rundir::{run_dir_name, sha256_hex, Manifest, RunDir, Step, StepRecord, CONFIG_FILE, MANIFEST_FILE};
pub use stages::{
    analyze_rank, bench_cost, embed, energy_task, eval_intent, eval_kws, eval_retrieval, gen, index, search,
    shard_timestamp, train, GenSummary, SearchQuery, TrainSummary, PIPELINED,
};
