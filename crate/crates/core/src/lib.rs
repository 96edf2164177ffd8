pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod halfprec;
pub mod index;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
pub use model::{MatryoshkaDims, ModelConfig, SpeechTextModel};
pub use numeric::{Gradients, Matrix, Params};
pub use train::{LossConfig, TrainRunConfig, Variant};
