//! Synthetic bilingual speech/text data.

mod corpus;
mod io;
mod lexicon;
mod quality;

pub use corpus::{
    gen_corpus, gen_intent_utterances, gen_keyword_utterances, intent_label, target_id, Corpus,
    CorpusConfig, PairedExample, QualityProfile, Task, INTENT_ID_BASE, KEYWORD_DOC_BASE,
    KEYWORD_ID_BASE,
};
pub use io::{load_corpus, read_corpus, save_corpus, write_corpus, CorpusHeader, CORPUS_SCHEMA_VERSION};
pub use lexicon::{
    LatentTopic, Lexicon, WorldConfig, FRAMES_PER_WORD, PROMPT_DOCUMENT, PROMPT_TRANSCRIPTION,
    PROMPT_TRANSLATION,
};
pub use quality::{
    chars_per_second, corrupt_transcription, filter_segments, lexical_diversity, mean_volume_db,
    FilterOutcome, RejectReason, Rejection, HESITANT_CHARS_PER_SECOND, MAX_SEGMENT_S, MIN_QUALITY,
    MIN_SEGMENT_S, NATURAL_CHARS_PER_SECOND, SILENCE_DB,
};
