use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halfprec;
use crate::model::MatryoshkaDims;
use crate::numeric::norm;

pub const SHARD_MAGIC: &[u8; 7] = b"MATIDX1";
pub const SHARD_SCHEMA_VERSION: u32 = 1;

/// Tolerance on the unit-norm precondition of stored vectors.
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardHeader {
    pub schema_version: u32,
    pub d_max: usize,
    pub dims: MatryoshkaDims,
    pub count: usize,
    /// Seconds since the Unix epoch, supplied by the caller.
    pub created_unix: u64,
}

/// Immutable store of binary16 document vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexShard {
    header: ShardHeader,
    ids: Vec<u64>,
    block: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    pub shard: IndexShard,
    pub docs_per_s: f64,
    /// Number of values clamped to the binary16 range.
    pub clamped: usize,
}

/// Byte length of the fixed part of a shard header.
pub fn header_len(n_dims: usize) -> usize {
    SHARD_MAGIC.len() + 4 + 4 + 4 + 4 * n_dims + 8 + 8
}

/// Exact file length of a shard.
pub fn shard_file_len(count: usize, d_max: usize, n_dims: usize) -> usize {
    header_len(n_dims) + 8 * count + 2 * count * d_max
}

impl IndexShard {
    /// Quantizes `docs` to binary16. Vectors must be `d_max` wide and unit norm.
    pub fn build<I>(docs: I, dims: &MatryoshkaDims, created_unix: u64) -> Result<BuildOutcome>
    where
        I: IntoIterator<Item = (u64, Vec<f64>)>,
    {
        let start = Instant::now();
        let d_max = dims.max();
        let mut ids = Vec::new();
        let mut block = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut clamped = 0usize;
        for (id, v) in docs {
            if v.len() != d_max {
                return Err(Error::shape("index build", format!("doc {id} has width {}, expected {d_max}", v.len())));
            }
            if !seen.insert(id) {
                return Err(Error::invalid(format!("duplicate doc id {id}")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { context: "index build", row: ids.len() });
            }
            let n = norm(&v);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid(format!("doc {id} has norm {n}, expected a unit vector")));
            }
            for &x in &v {
                let (bits, c) = halfprec::quantize(x);
                clamped += c as usize;
                block.push(bits);
            }
            ids.push(id);
        }
        let elapsed = start.elapsed().as_secs_f64();
        let count = ids.len();
        let docs_per_s = if elapsed > 0.0 { count as f64 / elapsed } else { f64::INFINITY };
        Ok(BuildOutcome {
            shard: IndexShard {
                header: ShardHeader {
                    schema_version: SHARD_SCHEMA_VERSION,
                    d_max,
                    dims: dims.clone(),
                    count,
                    created_unix,
                },
                ids,
                block,
            },
            docs_per_s,
            clamped,
        })
    }

    /// Builds a prefix-only store directly: the unit-norm precondition is
    /// checked at full width, then only the first `dim` columns are kept.
    pub fn build_prefix<I>(docs: I, dims: &MatryoshkaDims, dim: usize, created_unix: u64) -> Result<BuildOutcome>
    where
        I: IntoIterator<Item = (u64, Vec<f64>)>,
    {
        dims.check(dim)?;
        let start = Instant::now();
        let mut out = IndexShard::build(docs, dims, created_unix)?;
        out.shard = out.shard.prefix_store(dim)?;
        let elapsed = start.elapsed().as_secs_f64();
        out.docs_per_s = if elapsed > 0.0 { out.shard.len() as f64 / elapsed } else { f64::INFINITY };
        Ok(out)
    }

    pub fn header(&self) -> &ShardHeader {
        &self.header
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn d_max(&self) -> usize {
        self.header.d_max
    }

    pub fn dims(&self) -> &MatryoshkaDims {
        &self.header.dims
    }

    /// Raw binary16 bits of row `i`.
    pub fn row_bits(&self, i: usize) -> &[u16] {
        let d = self.header.d_max;
        &self.block[i * d..(i + 1) * d]
    }

    /// Row `i` widened to f64.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.row_bits(i).iter().map(|&b| halfprec::dequantize(b)).collect()
    }

    /// A store holding only the first `dim` columns of every row, for
    /// per-dimension disk accounting. Its configured dims are those of this
    /// shard up to `dim`.
    pub fn prefix_store(&self, dim: usize) -> Result<IndexShard> {
        self.header.dims.check(dim)?;
        let dims: Vec<usize> = self.header.dims.iter().filter(|&d| d <= dim).collect();
        let mut block = Vec::with_capacity(self.len() * dim);
        for i in 0..self.len() {
            block.extend_from_slice(&self.row_bits(i)[..dim]);
        }
        Ok(IndexShard {
            header: ShardHeader {
                schema_version: SHARD_SCHEMA_VERSION,
                d_max: dim,
                dims: MatryoshkaDims::new(dims)?,
                count: self.len(),
                created_unix: self.header.created_unix,
            },
            ids: self.ids.clone(),
            block,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(shard_file_len(h.count, h.d_max, h.dims.len()));
        out.extend_from_slice(SHARD_MAGIC);
        out.extend_from_slice(&h.schema_version.to_le_bytes());
        out.extend_from_slice(&(h.d_max as u32).to_le_bytes());
        out.extend_from_slice(&(h.dims.len() as u32).to_le_bytes());
        for d in h.dims.iter() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(h.count as u64).to_le_bytes());
        out.extend_from_slice(&h.created_unix.to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for b in &self.block {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<IndexShard> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(SHARD_MAGIC.len(), "magic")?;
        if magic != SHARD_MAGIC {
            return Err(Error::Format { what: "index shard", offset: 0, detail: "bad magic".into() });
        }
        let version_at = r.pos as u64;
        let schema_version = r.u32("schema version")?;
        if schema_version != SHARD_SCHEMA_VERSION {
            return Err(Error::Format {
                what: "index shard",
                offset: version_at,
                detail: format!("unsupported schema version {schema_version}"),
            });
        }
        let d_max = r.u32("d_max")? as usize;
        let n_dims = r.u32("dim count")? as usize;
        let dims_at = r.pos as u64;
        let mut dims = Vec::with_capacity(n_dims.min(64));
        for _ in 0..n_dims {
            dims.push(r.u32("dims")? as usize);
        }
        let dims = MatryoshkaDims::new(dims).map_err(|e| Error::Format {
            what: "index shard",
            offset: dims_at,
            detail: e.to_string(),
        })?;
        if dims.max() != d_max {
            return Err(Error::Format {
                what: "index shard",
                offset: dims_at,
                detail: format!("largest dim {} differs from d_max {d_max}", dims.max()),
            });
        }
        let count = r.u64("count")? as usize;
        let created_unix = r.u64("timestamp")?;
        let expected = count
            .checked_mul(8 + 2 * d_max)
            .and_then(|body| body.checked_add(header_len(n_dims)));
        if expected != Some(bytes.len()) {
            return Err(Error::Format {
                what: "index shard",
                offset: bytes.len() as u64,
                detail: format!(
                    "file is {} bytes, header implies {}",
                    bytes.len(),
                    expected.map_or("an overflowing size".to_string(), |e| e.to_string())
                ),
            });
        }
        let mut ids = Vec::with_capacity(count);
        let mut seen = std::collections::HashSet::with_capacity(count);
        for _ in 0..count {
            let at = r.pos as u64;
            let id = r.u64("doc id")?;
            if !seen.insert(id) {
                return Err(Error::Format { what: "index shard", offset: at, detail: format!("duplicate doc id {id}") });
            }
            ids.push(id);
        }
        let raw = r.take(count * d_max * 2, "embedding block")?;
        let block = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Ok(IndexShard {
            header: ShardHeader { schema_version, d_max, dims, count, created_unix },
            ids,
            block,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<IndexShard> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        IndexShard::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                what: "index shard",
                offset: self.pos as u64,
                detail: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
