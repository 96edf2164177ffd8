//! Toy text encoder and the two speech integration architectures.

mod checkpoint;
mod config;
mod dims;
mod encoder;
mod pooling;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use dims::{slice_prefix, MatryoshkaDims};
pub use encoder::{DualEmbedding, SpeechTextModel, EOS_TOKEN};
pub use pooling::attention_pool;


#[cfg(test)]
mod tests;
