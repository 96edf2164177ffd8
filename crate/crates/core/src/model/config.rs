use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::MatryoshkaDims;

/// Sizes of the text encoder and both speech front ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Width `h` of token embeddings and of the transformer residual stream.
    pub hidden: usize,
    /// Output embedding width; equals the largest Matryoshka dimension.
    pub d_max: usize,
    pub dims: MatryoshkaDims,
    pub layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    /// Longest token sequence the text encoder accepts, prompt included.
    pub max_len: usize,
    pub frame_dim: usize,
    /// Emulates concatenating this many speech-encoder layers per frame.
    pub layer_count: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_channels: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            hidden: 64,
            d_max: 64,
            dims: MatryoshkaDims::new(vec![8, 16, 32, 64]).expect("static dims"),
            layers: 2,
            heads: 4,
            ff_hidden: 128,
            max_len: 64,
            frame_dim: 16,
            layer_count: 1,
            conv_kernel: 3,
            conv_stride: 2,
            conv_channels: 64,
            init_seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_hidden", self.ff_hidden),
            ("max_len", self.max_len),
            ("frame_dim", self.frame_dim),
            ("layer_count", self.layer_count),
            ("conv_kernel", self.conv_kernel),
            ("conv_stride", self.conv_stride),
            ("conv_channels", self.conv_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.vocab_size <= super::EOS_TOKEN as usize {
            return Err(Error::Config(format!(
                "model.vocab_size {} leaves no room for the end-of-sequence token {}",
                self.vocab_size,
                super::EOS_TOKEN
            )));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.hidden {} is not divisible by model.heads {}",
                self.hidden, self.heads
            )));
        }
        if self.dims.max() != self.d_max {
            return Err(Error::Config(format!(
                "largest Matryoshka dimension {} must equal d_max {}",
                self.dims.max(),
                self.d_max
            )));
        }
        Ok(())
    }

    /// Width of one frame as fed to the convolution.
    pub fn frame_width(&self) -> usize {
        self.frame_dim * self.layer_count
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Every parameter the model owns with its shape, in name order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let h = self.hidden;
        let mut out = vec![
            ("text.tok_emb".to_string(), (self.vocab_size, h)),
            ("text.pos_emb".to_string(), (self.max_len + 1, h)),
            ("text.out".to_string(), (h, self.d_max)),
        ];
        for l in 0..self.layers {
            for w in ["wq", "wk", "wv", "wo"] {
                out.push((format!("text.b{l}.{w}"), (h, h)));
            }
            out.push((format!("text.b{l}.w1"), (h, self.ff_hidden)));
            out.push((format!("text.b{l}.b1"), (1, self.ff_hidden)));
            out.push((format!("text.b{l}.w2"), (self.ff_hidden, h)));
            out.push((format!("text.b{l}.b2"), (1, h)));
        }
        for prefix in ["lf", "dual"] {
            out.push((
                format!("{prefix}.conv.w"),
                (self.conv_kernel * self.frame_width(), self.conv_channels),
            ));
            out.push((format!("{prefix}.conv.b"), (1, self.conv_channels)));
            out.push((format!("{prefix}.proj"), (self.conv_channels, h)));
        }
        out.push(("dual.pool.q".to_string(), (1, h)));
        for d in self.dims.iter() {
            out.push((head_name(d), (h, d)));
        }
        out.sort();
        out
    }
}

pub(crate) fn head_name(d: usize) -> String {
    format!("dual.head.{d:04}")
}
