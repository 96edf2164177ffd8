//! Artifact paths inside a run directory and their byte encodings.

use serde::{Deserialize, Serialize};

use crate::data::{read_corpus, write_corpus, Corpus, CorpusHeader, PairedExample, CORPUS_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::model::{decode_checkpoint, encode_checkpoint, SpeechTextModel};
use crate::train::Variant;

use super::config::RunConfig;
use super::rundir::Step;

pub const CORPUS: &str = "data/corpus.jsonl";
pub const PRETRAIN: &str = "data/pretrain.jsonl";
pub const KEYWORDS_TRAIN: &str = "data/keywords-train.jsonl";
pub const KEYWORDS_TEST: &str = "data/keywords-test.jsonl";
pub const INTENTS_POOL: &str = "data/intents-pool.jsonl";
pub const INTENTS_TEST: &str = "data/intents-test.jsonl";
pub const SPLIT: &str = "data/split.json";
pub const DOC_EMBEDDINGS: &str = "embeddings/documents.jsonl";
pub const RETRIEVAL_REPORT: &str = "reports/retrieval.jsonl";
pub const KWS_REPORT: &str = "reports/kws.jsonl";
pub const INTENT_REPORT: &str = "reports/intent.jsonl";
pub const RANK_REPORT: &str = "reports/rank.jsonl";
pub const COST_REPORT: &str = "reports/cost.jsonl";
pub const FINDINGS: &str = "reports/findings.jsonl";
pub const SUMMARY: &str = "reports/summary.tsv";
pub const TABLE_RETRIEVAL: &str = "plots/retrieval_by_dim.tsv";
pub const TABLE_KWS: &str = "plots/kws_by_dim.tsv";
pub const ENERGY_DOCUMENTS: &str = "plots/energy_documents.tsv";
pub const ENERGY_SOURCES: &str = "plots/energy_sources.tsv";
pub const FEWSHOT_RECALL: &str = "plots/fewshot_recall.tsv";
pub const COST_BY_DIM: &str = "timing/cost_by_dim.tsv";
pub const TIMING_COST: &str = "timing/cost.jsonl";
pub const TIMING_INDEX: &str = "timing/index.json";
pub const TIMING_SUMMARY: &str = "timing/summary.tsv";

pub fn checkpoint(v: Variant) -> String {
    format!("models/{}.ckpt", v.name())
}

pub fn loss_curve(v: Variant) -> String {
    format!("curves/{}.jsonl", v.name())
}

pub fn query_embeddings(v: Variant) -> String {
    format!("embeddings/{}-queries.jsonl", v.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitIds {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
}

/// One embedding line: full-width vectors carry `dim = d_max`; Dual
/// queries get one line per head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub dim: usize,
    pub vector: Vec<f64>,
}

pub fn corpus_bytes(kind: &str, config: &RunConfig, seed: u64, corpus: &Corpus) -> Result<Vec<u8>> {
    let header = CorpusHeader {
        schema_version: CORPUS_SCHEMA_VERSION,
        kind: kind.to_string(),
        world: config.data.world.clone(),
        seed,
        count: corpus.len(),
    };
    let mut buf = Vec::new();
    write_corpus(&mut buf, &header, corpus)?;
    Ok(buf)
}

pub fn read_corpus_artifact(step: &mut Step<'_>, rel: &str) -> Result<Corpus> {
    let bytes = step.read(rel)?;
    let (header, corpus) = read_corpus(bytes.as_slice())?;
    if header.world != step.config().data.world {
        return Err(Error::Stale(format!("`{rel}` was generated for a different world config")));
    }
    Ok(corpus)
}

/// Train and test examples of the main corpus.
pub fn read_split(step: &mut Step<'_>) -> Result<(Vec<PairedExample>, Vec<PairedExample>)> {
    let corpus = read_corpus_artifact(step, CORPUS)?;
    let ids: SplitIds = serde_json::from_slice(&step.read(SPLIT)?)?;
    let pick = |want: &[u64]| -> Result<Vec<PairedExample>> {
        let set: std::collections::HashSet<u64> = want.iter().copied().collect();
        let out: Vec<PairedExample> = corpus.examples.iter().filter(|e| set.contains(&e.id)).cloned().collect();
        if out.len() != want.len() {
            return Err(Error::Stale(format!("`{SPLIT}` names examples missing from `{CORPUS}`")));
        }
        Ok(out)
    };
    Ok((pick(&ids.train)?, pick(&ids.test)?))
}

pub fn read_model(step: &mut Step<'_>, v: Variant) -> Result<SpeechTextModel> {
    let bytes = step.read(&checkpoint(v))?;
    SpeechTextModel::from_params(step.config().model.clone(), decode_checkpoint(&bytes)?)
}

pub fn model_bytes(model: &SpeechTextModel) -> Vec<u8> {
    encode_checkpoint(model.params())
}

pub fn embeddings_bytes(records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn parse_embeddings(bytes: &[u8]) -> Result<Vec<EmbeddingRecord>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Format { what: "embeddings", offset: e.valid_up_to() as u64, detail: e.to_string() })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
