//! `MATZOO1` parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    7 bytes  "MATZOO1"
//! count    u32
//! repeated count times:
//!   name_len u32, name (UTF-8), rows u64, cols u64, rows*cols f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Params};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"MATZOO1";

pub fn encode_checkpoint(params: &Params) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_values() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, m) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                what: "checkpoint",
                offset: self.pos as u64,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
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

pub fn decode_checkpoint(buf: &[u8]) -> Result<Params> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(7, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            offset: 0,
            detail: "bad magic, expected MATZOO1".into(),
        });
    }
    let count = r.u32("parameter count")?;
    let mut params = Params::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| Error::Format {
                what: "checkpoint",
                offset: at,
                detail: format!("parameter name is not UTF-8: {e}"),
            })?
            .to_string();
        let rows = r.u64("rows")? as usize;
        let cols = r.u64("cols")? as usize;
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| {
            Error::Format {
                what: "checkpoint",
                offset: at,
                detail: format!("shape {rows}x{cols} overflows"),
            }
        })?;
        let bytes = r.take(n, &format!("data of `{name}`"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.insert(name.clone(), Matrix::from_vec(rows, cols, data)?).is_some() {
            return Err(Error::Format {
                what: "checkpoint",
                offset: at,
                detail: format!("duplicate parameter `{name}`"),
            });
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            what: "checkpoint",
            offset: r.pos as u64,
            detail: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(params)
}

pub fn save_checkpoint(params: &Params, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Params> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Params {
        let mut p = Params::new();
        p.insert("a", Matrix::from_rows(&[[1.5, -0.0], [f64::MIN_POSITIVE, 1e300]]).unwrap());
        p.insert("b.c", Matrix::row_vector(&[0.1, 0.2, 0.3]));
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let bytes = encode_checkpoint(&p);
        let q = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&q), bytes);
        let a = q.get("a").unwrap();
        assert_eq!(a.data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }
}
