use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::lexicon::{
    Lexicon, FRAMES_PER_WORD, PROMPT_DOCUMENT, PROMPT_TRANSCRIPTION, PROMPT_TRANSLATION,
};
use crate::error::{Error, Result};
use crate::halfprec;
use crate::numeric::Matrix;

/// First example id of keyword utterances.
pub const KEYWORD_ID_BASE: u64 = 1_000_000;
/// Document ids of keyword texts are `KEYWORD_DOC_BASE + keyword index`.
pub const KEYWORD_DOC_BASE: u64 = 1_500_000;
pub const INTENT_ID_BASE: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    DocumentRetrieval,
    TranscriptionRetrieval,
    TranslationRetrieval,
}

impl Task {
    pub const ALL: [Task; 3] =
        [Task::DocumentRetrieval, Task::TranscriptionRetrieval, Task::TranslationRetrieval];

    pub fn prompt(self) -> u32 {
        match self {
            Task::DocumentRetrieval => PROMPT_DOCUMENT,
            Task::TranscriptionRetrieval => PROMPT_TRANSCRIPTION,
            Task::TranslationRetrieval => PROMPT_TRANSLATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityProfile {
    /// Duration stretch from inserted filler frames; 1 means none.
    pub hesitation: f64,
    /// Recording gain relative to clean speech.
    pub volume_db: f64,
    /// Channel noise, relative to the unit-RMS word signature.
    pub noise_sigma: f64,
}

impl Default for QualityProfile {
    fn default() -> Self {
        QualityProfile { hesitation: 1.0, volume_db: 0.0, noise_sigma: 0.3 }
    }
}

impl QualityProfile {
    pub fn is_clean(&self) -> bool {
        self.hesitation == 1.0 && self.volume_db == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hesitation >= 1.0 && self.hesitation.is_finite()) {
            return Err(Error::Config(format!("hesitation must be >= 1, got {}", self.hesitation)));
        }
        if !self.volume_db.is_finite() || !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("volume_db and noise_sigma must be finite, noise >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub examples_per_topic: usize,
    /// Document length as a multiple of the query length.
    pub doc_length_factor: f64,
    pub frames_per_second: f64,
    pub profile: QualityProfile,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            examples_per_topic: 90,
            doc_length_factor: 3.0,
            frames_per_second: 2.0,
            profile: QualityProfile::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.examples_per_topic == 0 {
            return Err(Error::Config("examples_per_topic must be positive".into()));
        }
        if !(self.doc_length_factor >= 1.0) {
            return Err(Error::Config("doc_length_factor must be >= 1".into()));
        }
        if !(self.frames_per_second > 0.0) {
            return Err(Error::Config("frames_per_second must be positive".into()));
        }
        Ok(())
    }
}

/// One spoken Wolof query with its text forms and its positive target.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample {
    pub id: u64,
    pub topic: u32,
    /// Wolof text of the query.
    pub query: Vec<u32>,
    /// Wolof speech, frames × (frame_dim · layer_count), values in [−1, 1].
    pub frames: Matrix,
    pub transcription: Vec<u32>,
    /// French translation, when one exists.
    pub translation: Option<Vec<u32>>,
    /// The positive for `task`.
    pub document: Vec<u32>,
    pub doc_id: u64,
    pub task: Task,
    pub grade: u32,
    pub intent: Option<u32>,
    pub duration_s: f64,
    pub quality_score: f64,
}

impl PairedExample {
    /// Target tokens and their id for a task, if the example supports it.
    pub fn target(&self, task: Task) -> Option<(u64, &[u32])> {
        match (task, self.task) {
            (Task::DocumentRetrieval, Task::DocumentRetrieval) => Some((self.doc_id, &self.document)),
            (Task::DocumentRetrieval, _) => None,
            (Task::TranscriptionRetrieval, Task::TranscriptionRetrieval) => {
                Some((self.doc_id, &self.transcription))
            }
            (Task::TranscriptionRetrieval, _) => {
                Some((target_id(task, self.id), &self.transcription))
            }
            (Task::TranslationRetrieval, _) => {
                self.translation.as_deref().map(|t| (target_id(task, self.id), t))
            }
        }
    }
}

/// Distinct id space for secondary targets of an example.
pub fn target_id(task: Task, example: u64) -> u64 {
    match task {
        Task::DocumentRetrieval => example,
        Task::TranscriptionRetrieval => (1 << 40) | example,
        Task::TranslationRetrieval => (2 << 40) | example,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub examples: Vec<PairedExample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Deterministic train/test split of the examples: a seeded permutation,
    /// the last `test_fraction` of which is the test side.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Corpus, Corpus) {
        let mut idx: Vec<usize> = (0..self.examples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((self.examples.len() as f64) * test_fraction).round() as usize;
        let cut = self.examples.len() - n_test.min(self.examples.len());
        let mut train: Vec<usize> = idx[..cut].to_vec();
        let mut test: Vec<usize> = idx[cut..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        let pick = |v: Vec<usize>| Corpus {
            examples: v.into_iter().map(|i| self.examples[i].clone()).collect(),
        };
        (pick(train), pick(test))
    }
}

/// Generates the retrieval corpus: `examples_per_topic` distinct utterances
/// for every topic, each paired with a French document.
pub fn gen_corpus(lex: &Lexicon, config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let w = lex.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(w.concepts * config.examples_per_topic);
    for topic in 0..w.concepts {
        let mut tails = tails_for(w.concepts, w.roles, topic);
        if tails.len() < config.examples_per_topic {
            return Err(Error::Config(format!(
                "topic {topic} has only {} distinct utterances, {} requested",
                tails.len(),
                config.examples_per_topic
            )));
        }
        tails.shuffle(&mut rng);
        for tail in tails.into_iter().take(config.examples_per_topic) {
            let mut concepts = vec![topic];
            concepts.extend(tail);
            let id = examples.len() as u64;
            let words: Vec<u32> = concepts.iter().map(|&c| lex.concept(c)).collect();
            let speech = speak(lex, &words, &config.profile, config.frames_per_second, &mut rng);
            examples.push(PairedExample {
                id,
                topic: topic as u32,
                query: words.clone(),
                frames: speech.frames,
                transcription: words,
                translation: Some(translation(lex, &concepts)),
                document: document(lex, &concepts, config.doc_length_factor, &mut rng),
                doc_id: id,
                task: Task::DocumentRetrieval,
                grade: 1,
                intent: None,
                duration_s: speech.duration_s,
                quality_score: speech.quality_score,
            });
        }
    }
    Ok(Corpus { examples })
}

/// Spoken place-name keywords, `per_keyword` utterances each. The positive
/// of every utterance is the keyword text.
pub fn gen_keyword_utterances(
    lex: &Lexicon,
    per_keyword: usize,
    profile: &QualityProfile,
    frames_per_second: f64,
    seed: u64,
) -> Result<Corpus> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    for (k, kw) in lex.keywords().iter().enumerate() {
        for _ in 0..per_keyword {
            let speech = speak(lex, kw, profile, frames_per_second, &mut rng);
            examples.push(PairedExample {
                id: KEYWORD_ID_BASE + examples.len() as u64,
                topic: k as u32,
                query: kw.to_vec(),
                frames: speech.frames,
                transcription: kw.to_vec(),
                translation: None,
                document: kw.to_vec(),
                doc_id: KEYWORD_DOC_BASE + k as u64,
                task: Task::TranscriptionRetrieval,
                grade: 1,
                intent: None,
                duration_s: speech.duration_s,
                quality_score: speech.quality_score,
            });
        }
    }
    Ok(Corpus { examples })
}

/// Utterances labeled with their intent: the concept in the first slot.
pub fn gen_intent_utterances(
    lex: &Lexicon,
    per_class: usize,
    profile: &QualityProfile,
    frames_per_second: f64,
    seed: u64,
) -> Result<Corpus> {
    profile.validate()?;
    let w = lex.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    for class in 0..w.concepts {
        let tails = tails_for(w.concepts, w.roles, class);
        for _ in 0..per_class {
            let mut concepts = vec![class];
            concepts.extend(tails[rng.random_range(0..tails.len())].iter().copied());
            let words: Vec<u32> = concepts.iter().map(|&c| lex.concept(c)).collect();
            let speech = speak(lex, &words, profile, frames_per_second, &mut rng);
            let id = INTENT_ID_BASE + examples.len() as u64;
            examples.push(PairedExample {
                id,
                topic: class as u32,
                query: words.clone(),
                frames: speech.frames,
                transcription: words,
                translation: Some(translation(lex, &concepts)),
                document: document(lex, &concepts, 1.0, &mut rng),
                doc_id: id,
                task: Task::DocumentRetrieval,
                grade: 1,
                intent: Some(class as u32),
                duration_s: speech.duration_s,
                quality_score: speech.quality_score,
            });
        }
    }
    Ok(Corpus { examples })
}

/// Label text for an intent class: the French word for the concept in the
/// first slot.
pub fn intent_label(lex: &Lexicon, class: usize) -> Vec<u32> {
    vec![lex.french_role(0, class)]
}

/// All ordered fillings of slots 2.. that avoid `head` and repeat nothing.
fn tails_for(concepts: usize, roles: usize, head: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(concepts: usize, left: usize, head: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for c in 0..concepts {
            if c != head && !cur.contains(&c) {
                cur.push(c);
                rec(concepts, left - 1, head, cur, out);
                cur.pop();
            }
        }
    }
    rec(concepts, roles - 1, head, &mut cur, &mut out);
    out
}

fn translation(lex: &Lexicon, concepts: &[usize]) -> Vec<u32> {
    let mut out = Vec::new();
    for (r, &c) in concepts.iter().enumerate() {
        if r > 0 {
            out.push(lex.french_function(r % 2));
        }
        out.push(lex.french_role(r, c));
    }
    out
}

fn document(lex: &Lexicon, concepts: &[usize], factor: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let len = ((concepts.len() as f64) * factor).round() as usize;
    let mut out: Vec<u32> = concepts.iter().enumerate().map(|(r, &c)| lex.french_role(r, c)).collect();
    let nf = lex.config().french_function_words;
    // filler lands at random positions; content words keep role order
    while out.len() < len {
        let at = rng.random_range(0..=out.len());
        out.insert(at, lex.french_function(rng.random_range(0..nf)));
    }
    out
}

struct Speech {
    frames: Matrix,
    duration_s: f64,
    quality_score: f64,
}

const FILLER_LEVEL: f64 = 0.1;

fn speak(
    lex: &Lexicon,
    words: &[u32],
    profile: &QualityProfile,
    frames_per_second: f64,
    rng: &mut ChaCha8Rng,
) -> Speech {
    let w = lex.config();
    let width = w.frame_dim * w.layer_count;
    let speech_frames = words.len() * FRAMES_PER_WORD;
    let extra_pairs = (((profile.hesitation - 1.0) * speech_frames as f64) / 2.0).round() as usize;
    // filler pairs land in the gaps around words
    let mut gap_fill = vec![0usize; words.len() + 1];
    for _ in 0..extra_pairs {
        gap_fill[rng.random_range(0..=words.len())] += 1;
    }
    let gain = w.speech_rms * 10f64.powf(profile.volume_db / 20.0);
    let mut data = Vec::with_capacity((speech_frames + 2 * extra_pairs) * width);
    let push_filler = |data: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
        for _ in 0..2 * width {
            let v: f64 = StandardNormal.sample(rng);
            data.push(FILLER_LEVEL * v);
        }
    };
    for (i, &t) in words.iter().enumerate() {
        for _ in 0..gap_fill[i] {
            push_filler(&mut data, rng);
        }
        let sig = lex.signature(t).expect("spoken token has a signature");
        let z: f64 = StandardNormal.sample(rng);
        let jitter = 1.0 + 0.1 * z;
        for &s in sig {
            let n: f64 = StandardNormal.sample(rng);
            data.push(jitter * s + profile.noise_sigma * n);
        }
    }
    for _ in 0..gap_fill[words.len()] {
        push_filler(&mut data, rng);
    }
    for v in &mut data {
        *v = halfprec::round_trip((*v * gain).clamp(-1.0, 1.0));
    }
    let rows = data.len() / width;
    let duration_s = rows as f64 / frames_per_second;
    let score = 4.2 - 0.6 * (profile.hesitation - 1.0) - 0.02 * (-profile.volume_db).max(0.0)
        - 0.5 * profile.noise_sigma
        + rng.random_range(-0.2..0.2);
    Speech {
        frames: Matrix::from_vec(rows, width, data).expect("frame block is rectangular"),
        duration_s,
        quality_score: score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::lexicon::WorldConfig;
    use crate::data::quality::{chars_per_second, mean_volume_db};

    fn small() -> (Lexicon, CorpusConfig) {
        let lex = Lexicon::new(&WorldConfig::default()).unwrap();
        (lex, CorpusConfig { examples_per_topic: 10, ..CorpusConfig::default() })
    }

    #[test]
    fn shape_and_pairing() {
        let (lex, cfg) = small();
        let c = gen_corpus(&lex, &cfg, 3).unwrap();
        assert_eq!(c.len(), 12 * 10);
        let mut seqs = std::collections::BTreeSet::new();
        for e in &c.examples {
            assert!(seqs.insert(e.query.clone()));
            assert_eq!(e.frames.rows(), e.query.len() * FRAMES_PER_WORD);
            assert_eq!(e.frames.cols(), 16);
            assert_eq!(e.document.len(), 9);
            assert!(e.document.len() as f64 >= cfg.doc_length_factor * e.query.len() as f64);
            assert_eq!(lex.concept_of(e.query[0]), Some(e.topic as usize));
            assert!(e.frames.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(e.target(Task::DocumentRetrieval).unwrap().0, e.id);
        }
    }

    #[test]
    fn nearest_latent_is_own_document() {
        let (lex, cfg) = small();
        let c = gen_corpus(&lex, &cfg, 4).unwrap();
        let concepts = |toks: &[u32]| -> Vec<usize> {
            toks.iter().map(|&t| lex.concept_of(t).unwrap()).collect()
        };
        // documents carry roles on their words; decode them back to slots
        let doc_concepts = |doc: &[u32]| -> Vec<usize> {
            let mut slots = vec![usize::MAX; lex.config().roles];
            for &t in doc {
                for r in 0..lex.config().roles {
                    for k in 0..lex.config().concepts {
                        if lex.french_role(r, k) == t {
                            slots[r] = k;
                        }
                    }
                }
            }
            slots
        };
        let docs: Vec<Vec<f64>> =
            c.examples.iter().map(|e| lex.instance_latent(&doc_concepts(&e.document))).collect();
        for (i, e) in c.examples.iter().enumerate() {
            let q = lex.instance_latent(&concepts(&e.query));
            let best = (0..docs.len())
                .max_by(|&a, &b| {
                    crate::numeric::dot(&q, &docs[a]).total_cmp(&crate::numeric::dot(&q, &docs[b]))
                })
                .unwrap();
            assert_eq!(best, i);
        }
    }

    #[test]
    fn volume_offset_shifts_level() {
        let (lex, cfg) = small();
        let clean = gen_corpus(&lex, &cfg, 5).unwrap();
        let mut quiet_cfg = cfg.clone();
        quiet_cfg.profile.volume_db = -25.0;
        let quiet = gen_corpus(&lex, &quiet_cfg, 5).unwrap();
        let level = |c: &Corpus| {
            let all: Vec<f64> = c.examples.iter().flat_map(|e| e.frames.data().to_vec()).collect();
            mean_volume_db(&all).unwrap()
        };
        let shift = level(&quiet) - level(&clean);
        assert!((shift + 25.0).abs() <= 0.5, "shift {shift}");
    }

    #[test]
    fn hesitation_stretches_and_slows() {
        let (lex, cfg) = small();
        let mut prev: Option<(usize, f64)> = None;
        for h in [1.0, 1.5, 2.0, 3.0] {
            let mut c = cfg.clone();
            c.profile.hesitation = h;
            let corpus = gen_corpus(&lex, &c, 9).unwrap();
            let frames: usize = corpus.examples.iter().map(|e| e.frames.rows()).sum();
            let cps: f64 = corpus
                .examples
                .iter()
                .map(|e| chars_per_second(&lex.render(&e.transcription), e.duration_s).unwrap())
                .sum::<f64>()
                / corpus.len() as f64;
            if let Some((f0, c0)) = prev {
                assert!(frames > f0);
                assert!(cps < c0);
            }
            prev = Some((frames, cps));
        }
    }

    #[test]
    fn too_many_examples_rejected() {
        let (lex, _) = small();
        let cfg = CorpusConfig { examples_per_topic: 1000, ..CorpusConfig::default() };
        assert!(gen_corpus(&lex, &cfg, 1).is_err());
    }

    #[test]
    fn split_is_partition() {
        let (lex, cfg) = small();
        let c = gen_corpus(&lex, &cfg, 3).unwrap();
        let (tr, te) = c.split(0.25, 8);
        assert_eq!(te.len(), 30);
        assert_eq!(tr.len() + te.len(), c.len());
        let ids: std::collections::BTreeSet<u64> =
            tr.examples.iter().chain(&te.examples).map(|e| e.id).collect();
        assert_eq!(ids.len(), c.len());
        assert_eq!(c.split(0.25, 8), (tr, te));
    }

    #[test]
    fn keyword_and_intent_sets() {
        let (lex, _) = small();
        let p = QualityProfile::default();
        let k = gen_keyword_utterances(&lex, 3, &p, 2.0, 1).unwrap();
        assert_eq!(k.len(), 30);
        for e in &k.examples {
            let (id, toks) = e.target(Task::TranscriptionRetrieval).unwrap();
            assert_eq!(id, e.doc_id);
            assert_eq!(toks, lex.keywords()[(id - KEYWORD_DOC_BASE) as usize].as_slice());
            assert!(e.target(Task::DocumentRetrieval).is_none());
        }
        let i = gen_intent_utterances(&lex, 4, &p, 2.0, 1).unwrap();
        assert_eq!(i.len(), 48);
        assert!(i.examples.iter().all(|e| e.intent == Some(e.topic)));
    }
}
