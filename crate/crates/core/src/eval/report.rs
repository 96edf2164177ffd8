use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric values per task and dimension, plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: BTreeMap<String, String>,
    pub cells: BTreeMap<String, BTreeMap<usize, BTreeMap<String, f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task: String,
    dim: usize,
    metric: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecord {
    meta: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn set(&mut self, task: &str, dim: usize, metric: &str, value: f64) {
        self.cells
            .entry(task.to_string())
            .or_default()
            .entry(dim)
            .or_default()
            .insert(metric.to_string(), value);
    }

    pub fn get(&self, task: &str, dim: usize, metric: &str) -> Option<f64> {
        self.cells.get(task)?.get(&dim)?.get(metric).copied()
    }

    /// Values of `metric` for `task` in ascending dim order.
    pub fn series(&self, task: &str, metric: &str) -> Vec<(usize, f64)> {
        self.cells
            .get(task)
            .map(|by_dim| {
                by_dim.iter().filter_map(|(&d, m)| m.get(metric).map(|&v| (d, v))).collect()
            })
            .unwrap_or_default()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &String> {
        self.cells.keys()
    }

    /// Copies every cell and metadata entry of `other` into `self`.
    pub fn absorb(&mut self, other: EvalReport) {
        self.meta.extend(other.meta);
        for (task, by_dim) in other.cells {
            let t = self.cells.entry(task).or_default();
            for (dim, metrics) in by_dim {
                t.entry(dim).or_default().extend(metrics);
            }
        }
    }

    /// A metadata line followed by one record per (task, dim, metric),
    /// sorted.
    pub fn write_records<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<eval report>", e);
        serde_json::to_writer(&mut w, &MetaRecord { meta: self.meta.clone() })?;
        w.write_all(b"\n").map_err(io)?;
        for (task, by_dim) in &self.cells {
            for (&dim, metrics) in by_dim {
                for (metric, &value) in metrics {
                    let rec = Record { task: task.clone(), dim, metric: metric.clone(), value };
                    serde_json::to_writer(&mut w, &rec)?;
                    w.write_all(b"\n").map_err(io)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_records<R: BufRead>(r: R) -> Result<EvalReport> {
        let mut out = EvalReport::default();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<eval report>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| Error::Format { what: "eval report", offset: i as u64 + 1, detail: e.to_string() };
            if i == 0 {
                out.meta = serde_json::from_str::<MetaRecord>(&line).map_err(bad)?.meta;
            } else {
                let rec: Record = serde_json::from_str(&line).map_err(bad)?;
                out.set(&rec.task, rec.dim, &rec.metric, rec.value);
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_records(&mut buf).expect("writing to memory");
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut r = EvalReport::default();
        r.meta.insert("seed".into(), "7".into());
        for d in [8, 16] {
            r.set("document-retrieval", d, "ndcg@5", 0.1 * d as f64 + 1e-17);
            r.set("document-retrieval", d, "ndcg@10", 1.0 / 3.0);
        }
        r.set("keyword-spotting", 8, "f1", 0.5);
        let back = EvalReport::read_records(r.to_bytes().as_slice()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.series("document-retrieval", "ndcg@5").len(), 2);
        assert_eq!(r.get("keyword-spotting", 8, "f1"), Some(0.5));
        assert!(EvalReport::read_records("{\"meta\":{}}\nnot json\n".as_bytes()).is_err());
    }
}
