use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CorpusConfig, WorldConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{FewShotConfig, LossConfig, TrainRunConfig, Variant, SHOT_COUNTS};

/// Everything a run needs, read from one TOML document. Unknown keys are
/// rejected at every level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub index: IndexSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Every generator and split seed is derived from this one.
    pub seed: u64,
    pub world: WorldConfig,
    pub corpus: CorpusConfig,
    pub test_fraction: f64,
    /// Utterances per topic in the text pretraining corpus.
    pub pretrain_examples_per_topic: usize,
    pub keyword_train_per_keyword: usize,
    pub keyword_test_per_keyword: usize,
    pub intent_pool_per_class: usize,
    pub intent_test_per_class: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            seed: 3,
            world: WorldConfig::default(),
            corpus: CorpusConfig::default(),
            test_fraction: 0.2,
            pretrain_examples_per_topic: 110,
            keyword_train_per_keyword: 20,
            keyword_test_per_keyword: 20,
            intent_pool_per_class: 16,
            intent_test_per_class: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub temperature: f64,
    pub normalize_prefix: bool,
    /// Variants trained by `train` without an explicit variant.
    pub variants: Vec<Variant>,
    /// Text encoder pretraining.
    pub text: TrainRunConfig,
    /// Speech retrieval variants on top of the frozen text encoder.
    pub speech: TrainRunConfig,
    /// Dual-alignment. The cosine objective has no 1/τ factor, so it
    /// wants a larger step than the contrastive variants.
    pub alignment: TrainRunConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            temperature: 0.05,
            normalize_prefix: true,
            variants: Variant::ALL.to_vec(),
            text: TrainRunConfig { epochs: 15, batch_size: 64, learning_rate: 0.1, ..Default::default() },
            speech: TrainRunConfig { epochs: 20, batch_size: 64, learning_rate: 0.1, ..Default::default() },
            alignment: TrainRunConfig { epochs: 20, batch_size: 64, learning_rate: 2.0, ..Default::default() },
        }
    }
}

impl TrainSection {
    pub fn loss(&self, model: &ModelConfig, variant: Variant) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            dims: model.dims.clone(),
            objective: variant.objective(),
            normalize_prefix: self.normalize_prefix,
        }
    }

    pub fn run_for(&self, variant: Variant) -> &TrainRunConfig {
        match variant {
            Variant::TextOnly => &self.text,
            Variant::DualAlignment => &self.alignment,
            _ => &self.speech,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    /// Shard path, relative to the run directory.
    pub shard: String,
    /// Variant whose query embeddings `search` and `bench-cost` use.
    pub query_variant: Variant,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection { shard: "index/documents.matidx".into(), query_variant: Variant::LateFusion }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    /// Token corruption rate standing in for ASR-plus-translation errors.
    pub corruption_rate: f64,
    pub shots: Vec<usize>,
    pub fewshot: FewShotConfig,
    pub energy_ratios: Vec<f64>,
    /// Mean-center embeddings before the covariance.
    pub center: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ks: vec![5, 10],
            corruption_rate: 0.2,
            shots: SHOT_COUNTS.to_vec(),
            fewshot: FewShotConfig::default(),
            energy_ratios: vec![0.5, 0.8, 0.9, 0.95, 0.99, 1.0],
            center: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub repetitions: usize,
    pub queries: usize,
    pub k: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { repetitions: 20, queries: 50, k: 10 }
    }
}

fn at<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) | Error::Invalid(m) => Error::Config(format!("{field}: {m}")),
        other => Error::Config(format!("{field}: {other}")),
    })
}

fn check(field: &str, ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: {}", msg())))
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serializes to JSON");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        at("data.world", d.world.validate())?;
        at("data.corpus", d.corpus.validate())?;
        check("data.test_fraction", d.test_fraction > 0.0 && d.test_fraction < 1.0, || {
            format!("must be in (0, 1), got {}", d.test_fraction)
        })?;
        for (field, v) in [
            ("data.pretrain_examples_per_topic", d.pretrain_examples_per_topic),
            ("data.keyword_train_per_keyword", d.keyword_train_per_keyword),
            ("data.keyword_test_per_keyword", d.keyword_test_per_keyword),
            ("data.intent_pool_per_class", d.intent_pool_per_class),
            ("data.intent_test_per_class", d.intent_test_per_class),
        ] {
            check(field, v > 0, || "must be positive".into())?;
        }
        at("model", self.model.validate())?;
        check("model.vocab_size", self.model.vocab_size == d.world.vocab_size, || {
            format!("{} differs from data.world.vocab_size {}", self.model.vocab_size, d.world.vocab_size)
        })?;
        check("model.frame_dim", self.model.frame_dim == d.world.frame_dim, || {
            format!("{} differs from data.world.frame_dim {}", self.model.frame_dim, d.world.frame_dim)
        })?;
        check("model.layer_count", self.model.layer_count == d.world.layer_count, || {
            format!("{} differs from data.world.layer_count {}", self.model.layer_count, d.world.layer_count)
        })?;
        let t = &self.train;
        check("train.temperature", t.temperature > 0.0 && t.temperature.is_finite(), || {
            format!("must be positive, got {}", t.temperature)
        })?;
        at("train.text", t.text.validate())?;
        at("train.speech", t.speech.validate())?;
        at("train.alignment", t.alignment.validate())?;
        check("train.variants", !t.variants.is_empty(), || "no variants".into())?;
        check("index.shard", !self.index.shard.is_empty(), || "empty path".into())?;
        check("index.query_variant", self.index.query_variant.is_speech(), || "must be a speech variant".into())?;
        let e = &self.eval;
        check("eval.ks", !e.ks.is_empty() && e.ks.iter().all(|&k| k > 0), || {
            format!("cutoffs must be positive and non-empty, got {:?}", e.ks)
        })?;
        check("eval.corruption_rate", (0.0..=1.0).contains(&e.corruption_rate), || {
            format!("must be in [0, 1], got {}", e.corruption_rate)
        })?;
        check("eval.shots", !e.shots.is_empty(), || "no shot counts".into())?;
        if let Some(&n) = e.shots.iter().find(|&&n| n > d.intent_pool_per_class) {
            return Err(Error::Config(format!(
                "eval.shots: {n}-shot exceeds data.intent_pool_per_class {}",
                d.intent_pool_per_class
            )));
        }
        check("eval.energy_ratios", e.energy_ratios.iter().all(|&r| r > 0.0 && r <= 1.0), || {
            format!("ratios must be in (0, 1], got {:?}", e.energy_ratios)
        })?;
        let b = &self.bench;
        check("bench.repetitions", b.repetitions >= 3, || format!("need at least 3, got {}", b.repetitions))?;
        check("bench.queries", b.queries > 0, || "must be positive".into())?;
        check("bench.k", b.k > 0, || "must be positive".into())?;
        Ok(())
    }

    /// Seed of one generator or split, derived from `data.seed`.
    pub fn seed_for(&self, purpose: SeedPurpose) -> u64 {
        self.data.seed.wrapping_mul(1_000).wrapping_add(purpose as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPurpose {
    Corpus = 1,
    Split = 2,
    Pretrain = 3,
    KeywordTrain = 4,
    KeywordTest = 5,
    IntentPool = 6,
    IntentTest = 7,
    Corruption = 8,
    Shots = 9,
}
