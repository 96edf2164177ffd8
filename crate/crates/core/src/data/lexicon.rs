//! Token layout, surface forms and acoustic signatures of the toy world.
//!
//! Wolof utterances are ordered sequences of concept words; the role of a
//! concept is carried by its position. French documents carry the role on
//! the word itself, so matching a query to its document requires knowing
//! which concept fills which slot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, norm};

/// Prompt token ids, one per retrieval task.
pub const PROMPT_DOCUMENT: u32 = 0;
pub const PROMPT_TRANSCRIPTION: u32 = 1;
pub const PROMPT_TRANSLATION: u32 = 2;
const RESERVED: u32 = 4;

/// Frames emitted per spoken word.
pub const FRAMES_PER_WORD: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub vocab_size: usize,
    /// Number of concepts. Each concept is also a topic: the topic of an
    /// utterance is the concept in its first slot.
    pub concepts: usize,
    /// Slots per utterance.
    pub roles: usize,
    pub french_function_words: usize,
    pub place_words: usize,
    pub keywords: usize,
    pub latent_dim: usize,
    pub min_topic_angle_deg: f64,
    pub frame_dim: usize,
    pub layer_count: usize,
    /// Signal RMS of clean speech frames.
    pub speech_rms: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            vocab_size: 512,
            concepts: 12,
            roles: 3,
            french_function_words: 12,
            place_words: 8,
            keywords: 10,
            latent_dim: 16,
            min_topic_angle_deg: 60.0,
            frame_dim: 16,
            layer_count: 1,
            speech_rms: 0.065,
            seed: 11,
        }
    }
}

impl WorldConfig {
    pub fn tokens_needed(&self) -> usize {
        RESERVED as usize
            + self.concepts
            + self.concepts * self.roles
            + self.french_function_words
            + self.place_words
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts < 2 {
            return Err(Error::Config(format!("need at least 2 topics, got {}", self.concepts)));
        }
        if self.roles == 0 || self.roles > self.concepts {
            return Err(Error::Config(format!(
                "roles must be in 1..={}, got {}",
                self.concepts, self.roles
            )));
        }
        if self.tokens_needed() > self.vocab_size {
            return Err(Error::Config(format!(
                "vocab of {} too small: {} topics need {} tokens",
                self.vocab_size,
                self.concepts,
                self.tokens_needed()
            )));
        }
        if self.place_words < 2 || self.keywords > self.place_words * (self.place_words - 1) / 2 {
            return Err(Error::Config(format!(
                "{} place words cannot form {} distinct two-word keywords",
                self.place_words, self.keywords
            )));
        }
        if self.latent_dim == 0 || self.frame_dim == 0 || self.layer_count == 0 {
            return Err(Error::Config("latent_dim, frame_dim and layer_count must be positive".into()));
        }
        if !(self.speech_rms > 0.0 && self.speech_rms < 1.0) {
            return Err(Error::Config(format!("speech_rms must be in (0, 1), got {}", self.speech_rms)));
        }
        if !(0.0..90.0).contains(&self.min_topic_angle_deg) {
            return Err(Error::Config(format!(
                "min_topic_angle_deg must be in [0, 90), got {}",
                self.min_topic_angle_deg
            )));
        }
        Ok(())
    }
}

/// A topic and its latent direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTopic {
    pub id: u32,
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    config: WorldConfig,
    topics: Vec<LatentTopic>,
    surfaces: Vec<String>,
    /// Per Wolof token: FRAMES_PER_WORD × (frame_dim · layer_count) values,
    /// scaled to unit RMS.
    signatures: Vec<Option<Vec<f64>>>,
    keywords: Vec<[u32; 2]>,
}

const WOLOF_SYLLABLES: &[&str] = &[
    "ba", "di", "ja", "ka", "la", "ma", "na", "ndi", "nga", "rew", "sa", "ta", "wa", "xa", "yaa",
    "bu", "dox", "gëm", "jën", "kër", "lekk", "mbo", "ñaw", "suu", "tey", "wër", "yoo",
];
const FRENCH_SYLLABLES: &[&str] = &[
    "la", "ré", "mon", "tion", "vi", "char", "pa", "ble", "gé", "lou", "sor", "fan", "mé", "dre",
    "cal", "ven", "tri", "que",
];

impl Lexicon {
    pub fn new(config: &WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let topics = sample_topics(config, &mut rng)?;
        let mut lex = Lexicon {
            config: config.clone(),
            topics,
            surfaces: vec![String::new(); config.vocab_size],
            signatures: vec![None; config.vocab_size],
            keywords: Vec::new(),
        };
        lex.surfaces[PROMPT_DOCUMENT as usize] = "<doc>".into();
        lex.surfaces[PROMPT_TRANSCRIPTION as usize] = "<transcribe>".into();
        lex.surfaces[PROMPT_TRANSLATION as usize] = "<translate>".into();
        lex.surfaces[3] = "<eos>".into();
        for id in lex.config.tokens_needed()..config.vocab_size {
            lex.surfaces[id] = format!("<unused{id}>");
        }

        let mut used = std::collections::BTreeSet::new();
        let width = config.frame_dim * config.layer_count;
        let sig_len = FRAMES_PER_WORD * width;
        // fixed map from latent space to acoustic space
        let proj: Vec<f64> = (0..sig_len * config.latent_dim).map(|_| gauss(&mut rng)).collect();
        for c in 0..config.concepts {
            let id = lex.concept(c);
            lex.surfaces[id as usize] = fresh_word(&mut rng, WOLOF_SYLLABLES, 2, &mut used);
            let z = &lex.topics[c].latent;
            let mut sig: Vec<f64> = (0..sig_len)
                .map(|i| {
                    let row = &proj[i * config.latent_dim..(i + 1) * config.latent_dim];
                    dot(row, z) + 0.7 * gauss(&mut rng)
                })
                .collect();
            unit_rms(&mut sig);
            lex.signatures[id as usize] = Some(sig);
        }
        for p in 0..config.place_words {
            let id = lex.place(p);
            lex.surfaces[id as usize] = fresh_word(&mut rng, WOLOF_SYLLABLES, 3, &mut used);
            let mut sig: Vec<f64> = (0..sig_len).map(|_| gauss(&mut rng)).collect();
            unit_rms(&mut sig);
            lex.signatures[id as usize] = Some(sig);
        }
        for r in 0..config.roles {
            for c in 0..config.concepts {
                let id = lex.french_role(r, c);
                lex.surfaces[id as usize] = fresh_word(&mut rng, FRENCH_SYLLABLES, 3, &mut used);
            }
        }
        for f in 0..config.french_function_words {
            let id = lex.french_function(f);
            lex.surfaces[id as usize] = fresh_word(&mut rng, FRENCH_SYLLABLES, 1 + f % 2, &mut used);
        }

        let mut pairs = Vec::new();
        for a in 0..config.place_words {
            for b in 0..config.place_words {
                if a < b {
                    pairs.push([a, b]);
                }
            }
        }
        rand::seq::SliceRandom::shuffle(pairs.as_mut_slice(), &mut rng);
        lex.keywords = pairs
            .into_iter()
            .take(config.keywords)
            .map(|[a, b]| {
                if rng.random_bool(0.5) {
                    [lex.place(a), lex.place(b)]
                } else {
                    [lex.place(b), lex.place(a)]
                }
            })
            .collect();
        Ok(lex)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn topics(&self) -> &[LatentTopic] {
        &self.topics
    }

    pub fn concept(&self, c: usize) -> u32 {
        (RESERVED as usize + c) as u32
    }

    pub fn concept_of(&self, token: u32) -> Option<usize> {
        let t = token as usize;
        let lo = RESERVED as usize;
        (lo..lo + self.config.concepts).contains(&t).then(|| t - lo)
    }

    pub fn french_role(&self, role: usize, c: usize) -> u32 {
        (RESERVED as usize + self.config.concepts + role * self.config.concepts + c) as u32
    }

    pub fn french_function(&self, f: usize) -> u32 {
        (RESERVED as usize + self.config.concepts * (1 + self.config.roles) + f) as u32
    }

    pub fn place(&self, p: usize) -> u32 {
        (RESERVED as usize
            + self.config.concepts * (1 + self.config.roles)
            + self.config.french_function_words
            + p) as u32
    }

    pub fn keywords(&self) -> &[[u32; 2]] {
        &self.keywords
    }

    pub fn surface(&self, token: u32) -> &str {
        self.surfaces.get(token as usize).map(String::as_str).unwrap_or("<oov>")
    }

    /// Space-joined surface forms.
    pub fn render(&self, tokens: &[u32]) -> String {
        tokens.iter().map(|&t| self.surface(t)).collect::<Vec<_>>().join(" ")
    }

    /// Unit-RMS acoustic signature of a spoken token.
    pub fn signature(&self, token: u32) -> Option<&[f64]> {
        self.signatures.get(token as usize)?.as_deref()
    }

    /// Latent of an utterance: the role-bound concatenation of its concept
    /// latents, unit norm.
    pub fn instance_latent(&self, concepts: &[usize]) -> Vec<f64> {
        let mut z = Vec::with_capacity(concepts.len() * self.config.latent_dim);
        for &c in concepts {
            z.extend_from_slice(&self.topics[c].latent);
        }
        let n = norm(&z);
        z.iter().map(|v| v / n).collect()
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_rms(v: &mut [f64]) {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    for x in v {
        *x /= rms;
    }
}

fn fresh_word(
    rng: &mut ChaCha8Rng,
    syllables: &[&str],
    n: usize,
    used: &mut std::collections::BTreeSet<String>,
) -> String {
    loop {
        let w: String = (0..n).map(|_| syllables[rng.random_range(0..syllables.len())]).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Rejection-samples unit latents until every pair is at least the
/// configured angle apart.
fn sample_topics(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<Vec<LatentTopic>> {
    let max_cos = config.min_topic_angle_deg.to_radians().cos();
    let mut out: Vec<LatentTopic> = Vec::with_capacity(config.concepts);
    let mut attempts = 0usize;
    while out.len() < config.concepts {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "cannot place {} topics {}° apart in {} dimensions",
                config.concepts, config.min_topic_angle_deg, config.latent_dim
            )));
        }
        let mut z: Vec<f64> = (0..config.latent_dim).map(|_| gauss(rng)).collect();
        let n = norm(&z);
        z.iter_mut().for_each(|v| *v /= n);
        if out.iter().all(|t| dot(&t.latent, &z) <= max_cos) {
            out.push(LatentTopic { id: out.len() as u32, latent: z });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_disjoint_and_fits() {
        let cfg = WorldConfig::default();
        let lex = Lexicon::new(&cfg).unwrap();
        let mut ids = std::collections::BTreeSet::new();
        for c in 0..cfg.concepts {
            assert!(ids.insert(lex.concept(c)));
            assert_eq!(lex.concept_of(lex.concept(c)), Some(c));
            for r in 0..cfg.roles {
                assert!(ids.insert(lex.french_role(r, c)));
            }
        }
        for f in 0..cfg.french_function_words {
            assert!(ids.insert(lex.french_function(f)));
        }
        for p in 0..cfg.place_words {
            assert!(ids.insert(lex.place(p)));
        }
        assert_eq!(ids.len() + RESERVED as usize, cfg.tokens_needed());
        assert!(*ids.iter().next_back().unwrap() < cfg.vocab_size as u32);
        let surfaces: std::collections::BTreeSet<_> = ids.iter().map(|&t| lex.surface(t)).collect();
        assert_eq!(surfaces.len(), ids.len());
    }

    #[test]
    fn topics_are_separated() {
        let cfg = WorldConfig::default();
        let lex = Lexicon::new(&cfg).unwrap();
        let max_cos = cfg.min_topic_angle_deg.to_radians().cos();
        for (i, a) in lex.topics().iter().enumerate() {
            assert!((norm(&a.latent) - 1.0).abs() < 1e-12);
            for b in &lex.topics()[i + 1..] {
                assert!(dot(&a.latent, &b.latent) <= max_cos + 1e-12);
            }
        }
    }

    #[test]
    fn small_vocab_rejected() {
        let cfg = WorldConfig { vocab_size: 40, ..WorldConfig::default() };
        assert!(matches!(Lexicon::new(&cfg), Err(Error::Config(_))));
        let cfg = WorldConfig { concepts: 1, roles: 1, ..WorldConfig::default() };
        assert!(Lexicon::new(&cfg).is_err());
    }

    #[test]
    fn keywords_are_distinct_pairs() {
        let lex = Lexicon::new(&WorldConfig::default()).unwrap();
        let mut bags = std::collections::BTreeSet::new();
        for k in lex.keywords() {
            assert_ne!(k[0], k[1]);
            assert!(bags.insert((k[0].min(k[1]), k[0].max(k[1]))));
        }
        assert_eq!(lex.keywords().len(), 10);
    }
}
