use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::search::search;
use super::shard::IndexShard;
use crate::error::{Error, Result};
use crate::model::MatryoshkaDims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub dim: usize,
    pub docs_per_s: f64,
    pub bytes: usize,
    pub median_s: f64,
    pub p95_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

impl CostReport {
    /// One JSON record per dimension.
    pub fn write_records<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io("<cost report>", e))?;
        }
        Ok(())
    }
}

/// For every dim: builds a prefix-only store from `docs`, measures its size
/// and build throughput, then times `repetitions` passes of all `queries`
/// after one untimed warm-up pass.
pub fn bench(
    docs: &[(u64, Vec<f64>)],
    dims: &MatryoshkaDims,
    queries: &[Vec<f64>],
    k: usize,
    repetitions: usize,
) -> Result<CostReport> {
    if queries.is_empty() {
        return Err(Error::invalid("bench needs at least one query"));
    }
    if repetitions < 3 {
        return Err(Error::invalid(format!("bench needs at least 3 repetitions, got {repetitions}")));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for dim in dims.iter() {
        let built = IndexShard::build_prefix(docs.iter().cloned(), dims, dim, 0)?;
        let store = built.shard;
        let bytes = store.to_bytes().len();
        for q in queries {
            search(&store, q, dim, k)?;
        }
        let mut times = Vec::with_capacity(repetitions * queries.len());
        for _ in 0..repetitions {
            for q in queries {
                let t = Instant::now();
                let r = search(&store, q, dim, k)?;
                std::hint::black_box(&r);
                times.push(t.elapsed().as_secs_f64());
            }
        }
        times.sort_by(f64::total_cmp);
        rows.push(CostRow {
            dim,
            docs_per_s: built.docs_per_s,
            bytes,
            median_s: percentile(&times, 0.5),
            p95_s: percentile(&times, 0.95),
        });
    }
    Ok(CostReport { rows })
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
