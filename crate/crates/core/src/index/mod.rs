//! Prefix-dimension vector store with binary16 persistence.

mod bench;
mod search;
mod shard;

pub use bench::{bench, percentile, CostReport, CostRow};
pub use search::{search, SearchResult};
pub use shard::{header_len, shard_file_len, BuildOutcome, IndexShard, ShardHeader, SHARD_MAGIC, SHARD_SCHEMA_VERSION};
