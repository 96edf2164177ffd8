use std::collections::BTreeMap;

use super::metrics::{macro_f1_recall, ndcg_at_k, Judgments};
use super::report::EvalReport;
use crate::data::{corrupt_transcription, PairedExample, Task};
use crate::error::{Error, Result};
use crate::index::{search, IndexShard};
use crate::model::{slice_prefix, SpeechTextModel};
use crate::numeric::dot;
use crate::train::{prefix_unit, Variant};

pub const DOCUMENT_TASK: &str = "document-retrieval";
pub const KEYWORD_TASK: &str = "keyword-spotting";

/// A query vector: one full-width embedding searched by prefix, or one
/// vector per dimension from the Dual heads.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryEmbedding {
    Full(Vec<f64>),
    PerDim(Vec<(usize, Vec<f64>)>),
}

impl QueryEmbedding {
    pub fn at(&self, dim: usize) -> Result<&[f64]> {
        match self {
            QueryEmbedding::Full(v) => Ok(v),
            QueryEmbedding::PerDim(per) => per
                .iter()
                .find(|(d, _)| *d == dim)
                .map(|(_, v)| v.as_slice())
                .ok_or_else(|| Error::UnconfiguredDim { dim, configured: per.iter().map(|p| p.0).collect() }),
        }
    }
}

/// Embeds a query with the encoder of `variant`. The text-only variant
/// reads the query text; the others read the speech. Dual variants take no
/// prompt.
pub fn embed_query(model: &SpeechTextModel, variant: Variant, e: &PairedExample, task: Task) -> Result<QueryEmbedding> {
    let prompt = [task.prompt()];
    Ok(match variant {
        Variant::TextOnly => QueryEmbedding::Full(model.encode_text(&e.query, &prompt)?),
        Variant::LateFusion => QueryEmbedding::Full(model.encode_speech_late_fusion(&e.frames, &prompt)?),
        Variant::DualRetrieval | Variant::DualAlignment => QueryEmbedding::PerDim(model.encode_speech_dual(&e.frames)?),
    })
}

/// Document-side text embeddings (no prompt).
pub fn embed_documents(model: &SpeechTextModel, docs: &[(u64, Vec<u32>)]) -> Result<Vec<(u64, Vec<f64>)>> {
    docs.iter().map(|(id, toks)| Ok((*id, model.encode_text(toks, &[])?))).collect()
}

/// The distinct positive documents of `examples`, by id.
pub fn documents_of(examples: &[PairedExample]) -> Vec<(u64, Vec<u32>)> {
    let mut out: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    for e in examples {
        out.entry(e.doc_id).or_insert_with(|| e.document.clone());
    }
    out.into_iter().collect()
}

pub fn judgments_of(examples: &[PairedExample]) -> Judgments {
    examples.iter().map(|e| (e.id, [(e.doc_id, e.grade)].into_iter().collect())).collect()
}

/// Ranks every query against `shard` at every configured dim and averages
/// nDCG@k. Queries without judgments are skipped and counted in the
/// report metadata.
pub fn score_queries(
    shard: &IndexShard,
    queries: &[(u64, QueryEmbedding)],
    judgments: &Judgments,
    ks: &[usize],
    task: &str,
) -> Result<EvalReport> {
    let k_max = ks.iter().copied().max().ok_or_else(|| Error::invalid("no cutoffs"))?;
    let mut report = EvalReport::default();
    let mut skipped = 0usize;
    let judged: Vec<&(u64, QueryEmbedding)> = queries
        .iter()
        .filter(|(id, _)| {
            let ok = judgments.get(id).is_some_and(|g| g.values().any(|&v| v > 0));
            skipped += usize::from(!ok);
            ok
        })
        .collect();
    if judged.is_empty() {
        return Err(Error::invalid("no judged queries"));
    }
    for dim in shard.dims().iter() {
        let mut sums = vec![0.0; ks.len()];
        for (id, q) in &judged {
            let hits = search(shard, q.at(dim)?, dim, k_max)?.ids();
            for (s, &k) in sums.iter_mut().zip(ks) {
                *s += ndcg_at_k(&hits, &judgments[id], k)?;
            }
        }
        for (s, &k) in sums.iter().zip(ks) {
            report.set(task, dim, &format!("ndcg@{k}"), s / judged.len() as f64);
        }
    }
    report.meta.insert(format!("{task}.queries"), judged.len().to_string());
    report.meta.insert(format!("{task}.skipped_queries"), skipped.to_string());
    Ok(report)
}

/// Document retrieval: queries embedded by `variant` with the
/// document-retrieval prompt, documents by the text encoder.
pub fn eval_retrieval(
    model: &SpeechTextModel,
    variant: Variant,
    queries: &[PairedExample],
    docs: &[(u64, Vec<u32>)],
    judgments: &Judgments,
    ks: &[usize],
) -> Result<EvalReport> {
    let shard = IndexShard::build(embed_documents(model, docs)?, &model.config().dims, 0)?.shard;
    let q: Vec<(u64, QueryEmbedding)> = queries
        .iter()
        .map(|e| Ok((e.id, embed_query(model, variant, e, Task::DocumentRetrieval)?)))
        .collect::<Result<_>>()?;
    score_queries(&shard, &q, judgments, ks, DOCUMENT_TASK)
}

/// Pipelined baseline: each transcription is corrupted at `rate` and the
/// text-only encoder embeds the result.
pub fn eval_pipelined(
    text_model: &SpeechTextModel,
    queries: &[PairedExample],
    docs: &[(u64, Vec<u32>)],
    judgments: &Judgments,
    ks: &[usize],
    rate: f64,
    seed: u64,
) -> Result<EvalReport> {
    let shard = IndexShard::build(embed_documents(text_model, docs)?, &text_model.config().dims, 0)?.shard;
    let vocab = text_model.config().vocab_size;
    let q: Vec<(u64, QueryEmbedding)> = queries
        .iter()
        .map(|e| {
            let noisy = corrupt_transcription(&e.transcription, rate, vocab, seed ^ e.id.wrapping_mul(0x9e37_79b9_7f4a_7c15))?;
            Ok((e.id, QueryEmbedding::Full(text_model.encode_text(&noisy, &[Task::DocumentRetrieval.prompt()])?)))
        })
        .collect::<Result<_>>()?;
    let mut r = score_queries(&shard, &q, judgments, ks, DOCUMENT_TASK)?;
    r.meta.insert("pipelined.corruption_rate".into(), rate.to_string());
    Ok(r)
}

/// Keyword spotting as transcription retrieval: each utterance is assigned
/// the keyword whose text embedding is most similar. Reports macro F1 and
/// recall per dim.
pub fn eval_keyword_spotting(
    model: &SpeechTextModel,
    variant: Variant,
    keywords: &[Vec<u32>],
    utterances: &[(&PairedExample, u32)],
) -> Result<EvalReport> {
    if keywords.is_empty() {
        return Err(Error::invalid("empty keyword set"));
    }
    if keywords.len() < 2 {
        return Err(Error::invalid("keyword spotting needs at least 2 keywords"));
    }
    if variant == Variant::TextOnly {
        return Err(Error::invalid("keyword spotting needs a speech model"));
    }
    let dims = &model.config().dims;
    let kw_emb: Vec<Vec<f64>> = keywords.iter().map(|k| model.encode_text(k, &[])).collect::<Result<_>>()?;
    let queries: Vec<QueryEmbedding> = utterances
        .iter()
        .map(|(e, _)| embed_query(model, variant, e, Task::TranscriptionRetrieval))
        .collect::<Result<_>>()?;
    let gold: Vec<u32> = utterances.iter().map(|(_, l)| *l).collect();
    let mut report = EvalReport::default();
    for dim in dims.iter() {
        let kws: Vec<Vec<f64>> = kw_emb.iter().map(|k| slice_prefix(k, dim, dims, true)).collect::<Result<_>>()?;
        let mut predicted = Vec::with_capacity(queries.len());
        for q in &queries {
            let qv = prefix_unit(q.at(dim)?, dim)?;
            let mut best = 0usize;
            let mut best_s = f64::NEG_INFINITY;
            for (i, k) in kws.iter().enumerate() {
                let s = dot(&qv, k);
                if s > best_s {
                    best = i;
                    best_s = s;
                }
            }
            predicted.push(best as u32);
        }
        let (f1, recall) = macro_f1_recall(&predicted, &gold, keywords.len())?;
        report.set(KEYWORD_TASK, dim, "f1", f1);
        report.set(KEYWORD_TASK, dim, "recall", recall);
    }
    report.meta.insert("averaging".into(), "macro".into());
    Ok(report)
}
