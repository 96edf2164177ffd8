//! Line-delimited corpus files. Line 1 is a header carrying the schema
//! version; every following line is one example with its frames stored as
//! hex-encoded little-endian binary16.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, PairedExample, Task};
use super::lexicon::WorldConfig;
use crate::error::{Error, Result};
use crate::halfprec;
use crate::numeric::Matrix;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusHeader {
    pub schema_version: u32,
    pub kind: String,
    pub world: WorldConfig,
    pub seed: u64,
    pub count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    topic: u32,
    query: Vec<u32>,
    frame_rows: usize,
    frame_cols: usize,
    frames: String,
    transcription: Vec<u32>,
    translation: Option<Vec<u32>>,
    document: Vec<u32>,
    doc_id: u64,
    task: Task,
    grade: u32,
    intent: Option<u32>,
    duration_s: f64,
    quality_score: f64,
}

pub fn write_corpus<W: Write>(mut w: W, header: &CorpusHeader, corpus: &Corpus) -> Result<()> {
    let io = |e| Error::io("<corpus writer>", e);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n").map_err(io)?;
    for e in &corpus.examples {
        let rec = Record {
            id: e.id,
            topic: e.topic,
            query: e.query.clone(),
            frame_rows: e.frames.rows(),
            frame_cols: e.frames.cols(),
            frames: halfprec::encode_hex(e.frames.data()),
            transcription: e.transcription.clone(),
            translation: e.translation.clone(),
            document: e.document.clone(),
            doc_id: e.doc_id,
            task: e.task,
            grade: e.grade,
            intent: e.intent,
            duration_s: e.duration_s,
            quality_score: e.quality_score,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<(CorpusHeader, Corpus)> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format { what: "corpus", offset: 0, detail: "empty file".into() })?
        .map_err(|e| Error::io("<corpus reader>", e))?;
    let probe: serde_json::Value = serde_json::from_str(&first)?;
    match probe.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == CORPUS_SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Format {
                what: "corpus",
                offset: 1,
                detail: format!("unsupported schema_version {v}"),
            })
        }
        None => {
            return Err(Error::Format {
                what: "corpus",
                offset: 1,
                detail: "line 1 lacks schema_version".into(),
            })
        }
    }
    let header: CorpusHeader = serde_json::from_value(probe)?;
    let mut examples = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<corpus reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i as u64 + 2;
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "corpus",
            offset: lineno,
            detail: e.to_string(),
        })?;
        let values = halfprec::decode_hex(&rec.frames)
            .map_err(|d| Error::Format { what: "corpus", offset: lineno, detail: d })?;
        let frames = Matrix::from_vec(rec.frame_rows, rec.frame_cols, values).map_err(|e| {
            Error::Format { what: "corpus", offset: lineno, detail: e.to_string() }
        })?;
        examples.push(PairedExample {
            id: rec.id,
            topic: rec.topic,
            query: rec.query,
            frames,
            transcription: rec.transcription,
            translation: rec.translation,
            document: rec.document,
            doc_id: rec.doc_id,
            task: rec.task,
            grade: rec.grade,
            intent: rec.intent,
            duration_s: rec.duration_s,
            quality_score: rec.quality_score,
        });
    }
    if examples.len() != header.count {
        return Err(Error::Format {
            what: "corpus",
            offset: examples.len() as u64 + 1,
            detail: format!("header promises {} examples, found {}", header.count, examples.len()),
        });
    }
    Ok((header, Corpus { examples }))
}

pub fn save_corpus(path: &Path, header: &CorpusHeader, corpus: &Corpus) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_corpus(&mut w, header, corpus)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<(CorpusHeader, Corpus)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::{gen_corpus, CorpusConfig};
    use crate::data::lexicon::Lexicon;

    fn sample(seed: u64) -> (CorpusHeader, Corpus) {
        let world = WorldConfig::default();
        let lex = Lexicon::new(&world).unwrap();
        let cfg = CorpusConfig { examples_per_topic: 4, ..CorpusConfig::default() };
        let c = gen_corpus(&lex, &cfg, seed).unwrap();
        let h = CorpusHeader {
            schema_version: CORPUS_SCHEMA_VERSION,
            kind: "retrieval".into(),
            world,
            seed,
            count: c.len(),
        };
        (h, c)
    }

    fn bytes(h: &CorpusHeader, c: &Corpus) -> Vec<u8> {
        let mut buf = Vec::new();
        write_corpus(&mut buf, h, c).unwrap();
        buf
    }

    #[test]
    fn round_trip_and_determinism() {
        let (h, c) = sample(21);
        let buf = bytes(&h, &c);
        let (h2, c2) = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(h2, h);
        assert_eq!(c2, c);
        let (h3, c3) = sample(21);
        assert_eq!(bytes(&h3, &c3), buf);
        let (h4, c4) = sample(22);
        assert_ne!(bytes(&h4, &c4), buf);
    }

    #[test]
    fn header_checks() {
        let (h, c) = sample(1);
        let text = String::from_utf8(bytes(&h, &c)).unwrap();
        let bad = text.replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        assert!(matches!(read_corpus(bad.as_bytes()), Err(Error::Format { offset: 1, .. })));
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(read_corpus(truncated.as_bytes()).is_err());
        assert!(read_corpus("".as_bytes()).is_err());
    }
}
