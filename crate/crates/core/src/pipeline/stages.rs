//! One function per command. Each reads its inputs through the run
//! directory, so missing or stale upstream artifacts are caught before any
//! work starts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::artifacts::*;
use super::config::SeedPurpose;
use super::rundir::RunDir;
use crate::data::{
    gen_corpus, gen_intent_utterances, gen_keyword_utterances, intent_label, CorpusConfig, Lexicon, PairedExample,
};
use crate::error::{Error, Result};
use crate::eval::{
    self, documents_of, embed_query, energy_curve, eval_intent_fewshot, eval_keyword_spotting, eval_pipelined,
    judgments_of, EmbeddingSource, EvalReport, QueryEmbedding, DOCUMENT_TASK, KEYWORD_TASK,
};
use crate::index::{self, search as index_search, shard_file_len, IndexShard, SearchResult};
use crate::model::SpeechTextModel;
use crate::numeric::Matrix;
use crate::train::{self, write_loss_curve, Variant};

/// Shard timestamps come from `SOURCE_DATE_EPOCH` when set and are 0
/// otherwise, so rebuilt shards are byte-identical.
pub fn shard_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSummary {
    pub corpus: usize,
    pub train: usize,
    pub test: usize,
    pub pretrain: usize,
    pub keywords: usize,
    pub intents: usize,
}

pub fn gen(run: &mut RunDir) -> Result<GenSummary> {
    let cfg = run.config().clone();
    let d = &cfg.data;
    let lex = Lexicon::new(&d.world)?;
    let profile = &d.corpus.profile;
    let fps = d.corpus.frames_per_second;
    let corpus = gen_corpus(&lex, &d.corpus, cfg.seed_for(SeedPurpose::Corpus))?;
    let (train_c, test_c) = corpus.split(d.test_fraction, cfg.seed_for(SeedPurpose::Split));
    let pretrain_cfg = CorpusConfig { examples_per_topic: d.pretrain_examples_per_topic, ..d.corpus.clone() };
    let pretrain = gen_corpus(&lex, &pretrain_cfg, cfg.seed_for(SeedPurpose::Pretrain))?;
    let kw_train =
        gen_keyword_utterances(&lex, d.keyword_train_per_keyword, profile, fps, cfg.seed_for(SeedPurpose::KeywordTrain))?;
    let kw_test =
        gen_keyword_utterances(&lex, d.keyword_test_per_keyword, profile, fps, cfg.seed_for(SeedPurpose::KeywordTest))?;
    let pool = gen_intent_utterances(&lex, d.intent_pool_per_class, profile, fps, cfg.seed_for(SeedPurpose::IntentPool))?;
    let itest = gen_intent_utterances(&lex, d.intent_test_per_class, profile, fps, cfg.seed_for(SeedPurpose::IntentTest))?;
    let split = SplitIds {
        train: train_c.examples.iter().map(|e| e.id).collect(),
        test: test_c.examples.iter().map(|e| e.id).collect(),
    };
    let mut step = run.step("gen");
    for (rel, kind, purpose, c) in [
        (CORPUS, "retrieval", SeedPurpose::Corpus, &corpus),
        (PRETRAIN, "text-pretraining", SeedPurpose::Pretrain, &pretrain),
        (KEYWORDS_TRAIN, "keywords", SeedPurpose::KeywordTrain, &kw_train),
        (KEYWORDS_TEST, "keywords", SeedPurpose::KeywordTest, &kw_test),
        (INTENTS_POOL, "intents", SeedPurpose::IntentPool, &pool),
        (INTENTS_TEST, "intents", SeedPurpose::IntentTest, &itest),
    ] {
        step.write(rel, &corpus_bytes(kind, &cfg, cfg.seed_for(purpose), c)?)?;
    }
    step.write(SPLIT, &json_line(&split)?)?;
    step.finish()?;
    Ok(GenSummary {
        corpus: corpus.len(),
        train: train_c.len(),
        test: test_c.len(),
        pretrain: pretrain.len(),
        keywords: kw_test.len(),
        intents: itest.len(),
    })
}

fn json_line<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec(v)?;
    b.push(b'\n');
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Trains `variants` in order, the text encoder first when requested.
/// Speech variants start from the text-only checkpoint.
pub fn train(run: &mut RunDir, variants: &[Variant]) -> Result<Vec<TrainSummary>> {
    let mut order: Vec<Variant> = variants.to_vec();
    order.sort_by_key(|v| v.is_speech());
    order.dedup();
    let mut out = Vec::new();
    for v in order {
        let cfg = run.config().clone();
        let mut step = run.step(&format!("train:{}", v.name()));
        let (mut model, data) = if v.is_speech() {
            let model = read_model(&mut step, Variant::TextOnly)?;
            let (train_ex, _) = read_split(&mut step)?;
            let mut data = train_ex;
            data.extend(read_corpus_artifact(&mut step, KEYWORDS_TRAIN)?.examples);
            (model, data)
        } else {
            let mut data = read_corpus_artifact(&mut step, PRETRAIN)?.examples;
            data.extend(read_corpus_artifact(&mut step, KEYWORDS_TRAIN)?.examples);
            (SpeechTextModel::new(cfg.model.clone())?, data)
        };
        let curve = train::train(&mut model, v, &data, cfg.train.run_for(v), &cfg.train.loss(&cfg.model, v))?;
        let mut curve_bytes = Vec::new();
        write_loss_curve(&mut curve_bytes, &curve)?;
        step.write(&checkpoint(v), &model_bytes(&model))?;
        step.write(&loss_curve(v), &curve_bytes)?;
        step.finish()?;
        out.push(TrainSummary {
            variant: v,
            steps: curve.len(),
            first_loss: curve.first().map_or(f64::NAN, |r| r.total),
            last_loss: curve.last().map_or(f64::NAN, |r| r.total),
        });
    }
    Ok(out)
}

fn query_records(model: &SpeechTextModel, v: Variant, queries: &[PairedExample]) -> Result<Vec<EmbeddingRecord>> {
    let d_max = model.config().d_max;
    let mut out = Vec::new();
    for e in queries {
        match embed_query(model, v, e, crate::data::Task::DocumentRetrieval)? {
            QueryEmbedding::Full(vector) => out.push(EmbeddingRecord { id: e.id, dim: d_max, vector }),
            QueryEmbedding::PerDim(per) => {
                out.extend(per.into_iter().map(|(dim, vector)| EmbeddingRecord { id: e.id, dim, vector }))
            }
        }
    }
    Ok(out)
}

/// Document embeddings (text encoder, no prompt) and the test-query
/// embeddings of `variant`.
pub fn embed(run: &mut RunDir, variant: Variant) -> Result<(usize, usize)> {
    let mut step = run.step(&format!("embed:{}", variant.name()));
    let model = read_model(&mut step, variant)?;
    let corpus = read_corpus_artifact(&mut step, CORPUS)?;
    let (_, test) = read_split(&mut step)?;
    let d_max = model.config().d_max;
    let docs: Vec<EmbeddingRecord> = eval::embed_documents(&model, &documents_of(&corpus.examples))?
        .into_iter()
        .map(|(id, vector)| EmbeddingRecord { id, dim: d_max, vector })
        .collect();
    let queries = query_records(&model, variant, &test)?;
    step.write(DOC_EMBEDDINGS, &embeddings_bytes(&docs)?)?;
    step.write(&query_embeddings(variant), &embeddings_bytes(&queries)?)?;
    step.finish()?;
    Ok((docs.len(), queries.len()))
}

pub fn index(run: &mut RunDir) -> Result<usize> {
    let cfg = run.config().clone();
    let mut step = run.step("index");
    let docs: Vec<(u64, Vec<f64>)> =
        parse_embeddings(&step.read(DOC_EMBEDDINGS)?)?.into_iter().map(|r| (r.id, r.vector)).collect();
    let built = IndexShard::build(docs, &cfg.model.dims, shard_timestamp())?;
    step.write(&cfg.index.shard, &built.shard.to_bytes())?;
    let timing = serde_json::json!({ "docs_per_s": built.docs_per_s, "clamped": built.clamped });
    step.write_volatile(TIMING_INDEX, &json_line(&timing)?)?;
    step.finish()?;
    Ok(built.shard.len())
}

/// What `search` looks up: the embedded speech of a corpus example, or a
/// vector already stored in the shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchQuery {
    Example(u64),
    Document(u64),
}

pub fn search(run: &mut RunDir, query: SearchQuery, dim: usize, k: usize) -> Result<SearchResult> {
    let cfg = run.config().clone();
    let label = match query {
        SearchQuery::Example(id) => format!("example-{id}"),
        SearchQuery::Document(id) => format!("document-{id}"),
    };
    let mut step = run.step(&format!("search:{label}:d{dim}:k{k}"));
    let shard = IndexShard::from_bytes(&step.read(&cfg.index.shard)?)?;
    let vector = match query {
        SearchQuery::Document(id) => {
            let i = shard
                .ids()
                .iter()
                .position(|&x| x == id)
                .ok_or_else(|| Error::invalid(format!("document {id} is not in the shard")))?;
            shard.row(i)
        }
        SearchQuery::Example(id) => {
            let corpus = read_corpus_artifact(&mut step, CORPUS)?;
            let e = corpus
                .examples
                .iter()
                .find(|e| e.id == id)
                .ok_or_else(|| Error::invalid(format!("example {id} is not in the corpus")))?;
            let model = read_model(&mut step, cfg.index.query_variant)?;
            embed_query(&model, cfg.index.query_variant, e, crate::data::Task::DocumentRetrieval)?.at(dim)?.to_vec()
        }
    };
    let result = index_search(&shard, &vector, dim, k)?;
    let record = serde_json::json!({ "query": label, "dim": dim, "k": k, "hits": result.hits });
    step.write(&format!("search/{label}-d{dim}-k{k}.json"), &json_line(&record)?)?;
    step.write_volatile(&format!("timing/search-{label}-d{dim}-k{k}.json"), &json_line(&result.latency_s)?)?;
    step.finish()?;
    Ok(result)
}

fn retag(report: EvalReport, prefix: &str) -> EvalReport {
    let mut out = EvalReport { meta: BTreeMap::new(), cells: BTreeMap::new() };
    for (k, v) in report.meta {
        out.meta.insert(format!("{prefix}/{k}"), v);
    }
    for (task, cells) in report.cells {
        out.cells.insert(format!("{prefix}/{task}"), cells);
    }
    out
}

/// Document retrieval for every configured variant plus the pipelined
/// baseline built on the text encoder.
pub fn eval_retrieval(run: &mut RunDir) -> Result<EvalReport> {
    let cfg = run.config().clone();
    let mut step = run.step("eval-retrieval");
    let corpus = read_corpus_artifact(&mut step, CORPUS)?;
    let (_, test) = read_split(&mut step)?;
    let docs = documents_of(&corpus.examples);
    let judgments = judgments_of(&test);
    let ks = &cfg.eval.ks;
    let mut report = EvalReport::default();
    for &v in &cfg.train.variants {
        let model = read_model(&mut step, v)?;
        let r = eval::eval_retrieval(&model, v, &test, &docs, &judgments, ks)?;
        report.absorb(retag(r, v.name()));
    }
    let text = read_model(&mut step, Variant::TextOnly)?;
    let r = eval_pipelined(&text, &test, &docs, &judgments, ks, cfg.eval.corruption_rate, cfg.seed_for(SeedPurpose::Corruption))?;
    report.absorb(retag(r, PIPELINED));
    report.meta.insert("gain".into(), "linear".into());
    let mut table = String::from("model\tdim");
    for k in ks {
        let _ = write!(table, "\tndcg@{k}");
    }
    table.push('\n');
    for task in report.tasks() {
        let Some(model) = task.strip_suffix(&format!("/{DOCUMENT_TASK}")) else { continue };
        for (dim, metrics) in &report.cells[task] {
            let _ = write!(table, "{model}\t{dim}");
            for k in ks {
                let _ = write!(table, "\t{:.6}", metrics[&format!("ndcg@{k}")]);
            }
            table.push('\n');
        }
    }
    step.write(RETRIEVAL_REPORT, &report.to_bytes())?;
    step.write(TABLE_RETRIEVAL, table.as_bytes())?;
    step.finish()?;
    Ok(report)
}

pub const PIPELINED: &str = "pipelined";

pub fn eval_kws(run: &mut RunDir) -> Result<EvalReport> {
    let cfg = run.config().clone();
    let lex = Lexicon::new(&cfg.data.world)?;
    let mut step = run.step("eval-kws");
    let utts = read_corpus_artifact(&mut step, KEYWORDS_TEST)?;
    let labeled: Vec<(&PairedExample, u32)> = utts.examples.iter().map(|e| (e, e.topic)).collect();
    let keywords: Vec<Vec<u32>> = lex.keywords().iter().map(|k| k.to_vec()).collect();
    let mut report = EvalReport::default();
    for &v in cfg.train.variants.iter().filter(|v| v.is_speech()) {
        let model = read_model(&mut step, v)?;
        report.absorb(retag(eval_keyword_spotting(&model, v, &keywords, &labeled)?, v.name()));
    }
    let mut table = String::from("model\tdim\tf1\trecall\n");
    for task in report.tasks() {
        let Some(model) = task.strip_suffix(&format!("/{KEYWORD_TASK}")) else { continue };
        for (dim, m) in &report.cells[task] {
            let _ = writeln!(table, "{model}\t{dim}\t{:.6}\t{:.6}", m["f1"], m["recall"]);
        }
    }
    step.write(KWS_REPORT, &report.to_bytes())?;
    step.write(TABLE_KWS, table.as_bytes())?;
    step.finish()?;
    Ok(report)
}

/// Few-shot intent detection with the Late-Fusion model.
pub fn eval_intent(run: &mut RunDir) -> Result<EvalReport> {
    let cfg = run.config().clone();
    let lex = Lexicon::new(&cfg.data.world)?;
    let mut step = run.step("eval-intent");
    let model = read_model(&mut step, Variant::LateFusion)?;
    let pool = read_corpus_artifact(&mut step, INTENTS_POOL)?;
    let test = read_corpus_artifact(&mut step, INTENTS_TEST)?;
    let labels: Vec<Vec<u32>> = (0..cfg.data.world.concepts).map(|c| intent_label(&lex, c)).collect();
    let report = eval_intent_fewshot(
        &model,
        &pool.examples,
        &test.examples,
        &labels,
        &cfg.eval.shots,
        &cfg.eval.fewshot,
        cfg.seed_for(SeedPurpose::Shots),
    )?;
    let report = retag(report, Variant::LateFusion.name());
    let mut table = String::from("n_shot\tdim\tf1\trecall\n");
    for &n in &cfg.eval.shots {
        let task = format!("{}/{}", Variant::LateFusion.name(), eval::intent_task(n));
        for (dim, m) in &report.cells[&task] {
            let _ = writeln!(table, "{n}\t{dim}\t{:.6}\t{:.6}", m["f1"], m["recall"]);
        }
    }
    step.write(INTENT_REPORT, &report.to_bytes())?;
    step.write(FEWSHOT_RECALL, table.as_bytes())?;
    step.finish()?;
    Ok(report)
}

pub fn energy_task(source: EmbeddingSource) -> String {
    format!("energy/{}", source.name())
}

/// Energy-ratio curves of document, query and Dual pooled embeddings at
/// every configured dim. Query and pooled sources need the Late-Fusion and
/// Dual-retrieval checkpoints and are skipped when those variants are not
/// configured.
pub fn analyze_rank(run: &mut RunDir) -> Result<EvalReport> {
    let cfg = run.config().clone();
    let mut step = run.step("analyze-rank");
    let corpus = read_corpus_artifact(&mut step, CORPUS)?;
    let (_, test) = read_split(&mut step)?;
    let text = read_model(&mut step, Variant::TextOnly)?;
    let mut sources: Vec<(EmbeddingSource, Vec<Vec<f64>>)> = Vec::new();
    let docs = eval::embed_documents(&text, &documents_of(&corpus.examples))?;
    sources.push((EmbeddingSource::Documents, docs.into_iter().map(|d| d.1).collect()));
    if cfg.train.variants.contains(&Variant::LateFusion) {
        let lf = read_model(&mut step, Variant::LateFusion)?;
        let prompt = [crate::data::Task::DocumentRetrieval.prompt()];
        let q = test.iter().map(|e| lf.encode_speech_late_fusion(&e.frames, &prompt)).collect::<Result<_>>()?;
        sources.push((EmbeddingSource::Queries, q));
    }
    if cfg.train.variants.contains(&Variant::DualRetrieval) {
        let dual = read_model(&mut step, Variant::DualRetrieval)?;
        let p = test.iter().map(|e| dual.dual_pooled(&e.frames)).collect::<Result<_>>()?;
        sources.push((EmbeddingSource::Pooled, p));
    }
    let mut report = EvalReport::default();
    let mut docs_curve = String::from("dim\tk\tratio\n");
    let mut sources_curve = String::from("source\tdim\tk\tratio\n");
    for (source, rows) in &sources {
        let m = Matrix::from_rows(rows)?;
        let task = energy_task(*source);
        for dim in cfg.model.dims.iter().filter(|&d| d <= m.cols()) {
            if m.rows() <= dim {
                continue;
            }
            let curve = energy_curve(&m, dim, cfg.eval.center, *source)?;
            for &r in &cfg.eval.energy_ratios {
                report.set(&task, dim, &format!("dims_for_energy@{r}"), eval::dims_for_energy(&curve, r)?);
            }
            let min_step = curve.ratios.windows(2).map(|w| w[1] - w[0]).fold(curve.ratios[0], f64::min);
            report.set(&task, dim, "min_step", min_step);
            report.set(&task, dim, "terminal", curve.r(dim));
            for k in 1..=dim {
                if *source == EmbeddingSource::Documents {
                    let _ = writeln!(docs_curve, "{dim}\t{k}\t{:.9}", curve.r(k));
                }
                let _ = writeln!(sources_curve, "{}\t{dim}\t{k}\t{:.9}", source.name(), curve.r(k));
            }
        }
    }
    report.meta.insert("centered".into(), cfg.eval.center.to_string());
    step.write(RANK_REPORT, &report.to_bytes())?;
    step.write(ENERGY_DOCUMENTS, docs_curve.as_bytes())?;
    step.write(ENERGY_SOURCES, sources_curve.as_bytes())?;
    step.finish()?;
    Ok(report)
}

/// Disk bytes per dim (deterministic, recorded) and query latency
/// (timing-only, written beside the manifest).
pub fn bench_cost(run: &mut RunDir) -> Result<index::CostReport> {
    let cfg = run.config().clone();
    let mut step = run.step("bench-cost");
    let corpus = read_corpus_artifact(&mut step, CORPUS)?;
    let (_, test) = read_split(&mut step)?;
    let text = read_model(&mut step, Variant::TextOnly)?;
    let qv = cfg.index.query_variant;
    let qmodel = read_model(&mut step, qv)?;
    let docs = eval::embed_documents(&text, &documents_of(&corpus.examples))?;
    let d_max = cfg.model.d_max;
    let queries: Vec<Vec<f64>> = test
        .iter()
        .take(cfg.bench.queries)
        .map(|e| Ok(embed_query(&qmodel, qv, e, crate::data::Task::DocumentRetrieval)?.at(d_max)?.to_vec()))
        .collect::<Result<_>>()?;
    let report = index::bench(&docs, &cfg.model.dims, &queries, cfg.bench.k, cfg.bench.repetitions)?;
    let mut bytes_report = String::new();
    let mut cost_table = String::from("dim\tbytes\tmedian_s\tp95_s\tdocs_per_s\n");
    for r in &report.rows {
        let n_dims = cfg.model.dims.iter().filter(|&d| d <= r.dim).count();
        let expected = shard_file_len(docs.len(), r.dim, n_dims);
        let rec = serde_json::json!({ "dim": r.dim, "bytes": r.bytes, "expected_bytes": expected, "count": docs.len() });
        bytes_report.push_str(&serde_json::to_string(&rec)?);
        bytes_report.push('\n');
        let _ = writeln!(cost_table, "{}\t{}\t{:e}\t{:e}\t{:e}", r.dim, r.bytes, r.median_s, r.p95_s, r.docs_per_s);
    }
    let mut timing = Vec::new();
    report.write_records(&mut timing)?;
    step.write(COST_REPORT, bytes_report.as_bytes())?;
    step.write_volatile(TIMING_COST, &timing)?;
    step.write_volatile(COST_BY_DIM, cost_table.as_bytes())?;
    step.finish()?;
    Ok(report)
}
