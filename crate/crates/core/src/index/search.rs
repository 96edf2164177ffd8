use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::shard::IndexShard;
use crate::error::{Error, Result};
use crate::halfprec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// (doc id, score), best first; ties by ascending id.
    pub hits: Vec<(u64, f64)>,
    pub dim: usize,
    pub latency_s: f64,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.0).collect()
    }
}

/// Exhaustive scan scoring re-normalized `dim`-prefixes of query and
/// documents. Zero prefixes score 0.
pub fn search(shard: &IndexShard, query: &[f64], dim: usize, k: usize) -> Result<SearchResult> {
    shard.dims().check(dim)?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if query.len() < dim {
        return Err(Error::shape("search", format!("query has width {}, need at least {dim}", query.len())));
    }
    let start = Instant::now();
    let q = &query[..dim];
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scored: Vec<(u64, f64)> = Vec::with_capacity(shard.len());
    let mut row = vec![0.0; dim];
    for (i, &id) in shard.ids().iter().enumerate() {
        let bits = &shard.row_bits(i)[..dim];
        for (r, &b) in row.iter_mut().zip(bits) {
            *r = halfprec::dequantize(b);
        }
        let dn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = if qn == 0.0 || dn == 0.0 {
            0.0
        } else {
            q.iter().zip(&row).map(|(a, b)| a * b).sum::<f64>() / (qn * dn)
        };
        scored.push((id, s));
    }
    rank(&mut scored, k);
    Ok(SearchResult { hits: scored, dim, latency_s: start.elapsed().as_secs_f64() })
}

/// Keeps the best `k` by score descending, then id ascending.
pub(crate) fn rank(scored: &mut Vec<(u64, f64)>, k: usize) {
    let cmp = |a: &(u64, f64), b: &(u64, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
}
