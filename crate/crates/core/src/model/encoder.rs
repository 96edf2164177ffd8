use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Params};

use super::config::head_name;
use super::ModelConfig;

/// Text encoder plus the Late-Fusion and Dual speech front ends, sharing one
/// parameter store. Parameter names are prefixed `text.`, `lf.` and `dual.`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechTextModel {
    config: ModelConfig,
    params: Params,
}

/// Per-dimension unit vectors produced by the Dual head.
/// Appended to every text-stack input; its final state is the embedding.
pub const EOS_TOKEN: u32 = 3;

pub type DualEmbedding = Vec<(usize, Vec<f64>)>;

impl SpeechTextModel {
    /// Randomly initialized model. Each parameter draws from its own stream
    /// derived from `config.init_seed` and its name.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Params::new();
        let residual_scale = 1.0 / (2.0 * config.layers as f64).sqrt();
        for (name, (rows, cols)) in config.param_shapes() {
            let std = if name == "text.tok_emb" {
                1.0
            } else if name == "text.pos_emb" {
                0.2
            } else if name.ends_with(".b1")
                || name.ends_with(".b2")
                || name.ends_with("conv.b")
                || name == "dual.pool.q"
            {
                0.0
            } else if name.ends_with(".wo") || name.ends_with(".w2") {
                residual_scale / (rows as f64).sqrt()
            } else {
                1.0 / (rows as f64).sqrt()
            };
            params.insert(name.clone(), random_matrix(config.init_seed, &name, rows, cols, std));
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameters, model expects {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let m = params.require(name)?;
            if m.shape() != *shape {
                return Err(Error::shape(
                    "checkpoint",
                    format!("`{name}` is {:?}, expected {shape:?}", m.shape()),
                ));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn into_params(self) -> Params {
        self.params
    }

    fn check_tokens(&self, ids: &[u32]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::UnknownToken {
                id: bad,
                vocab: self.config.vocab_size,
            });
        }
        if ids.len() > self.config.max_len {
            return Err(Error::Overlength {
                len: ids.len(),
                max: self.config.max_len,
                excess: ids.len() - self.config.max_len,
            });
        }
        Ok(())
    }

    /// Records the text encoder on `tape`. The prompt is placed before the
    /// tokens; the output is the normalized `1 × d_max` final-token state.
    pub fn text_on_tape(&self, tape: &mut Tape<'_>, tokens: &[u32], prompt: &[u32]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot encode an empty token sequence"));
        }
        let ids: Vec<u32> = prompt.iter().chain(tokens).copied().collect();
        self.check_tokens(&ids)?;
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let x = tape.embed("text.tok_emb", &idx)?;
        self.stack_on_tape(tape, x)
    }

    /// Transformer stack over an `(n × h)` input sequence. An end-of-sequence
    /// token is appended and its final state is the pooled output.
    fn stack_on_tape(&self, tape: &mut Tape<'_>, x0: Var) -> Result<Var> {
        let n_in = tape.value(x0).rows();
        if n_in > self.config.max_len {
            return Err(Error::Overlength {
                len: n_in,
                max: self.config.max_len,
                excess: n_in - self.config.max_len,
            });
        }
        let eos = tape.embed("text.tok_emb", &[EOS_TOKEN as usize])?;
        let x0 = tape.concat_rows(&[x0, eos])?;
        let n = n_in + 1;
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.embed("text.pos_emb", &positions)?;
        let mut x = tape.add(x0, pos)?;
        let dh = self.config.head_dim();
        let att_scale = 1.0 / (dh as f64).sqrt();
        for l in 0..self.config.layers {
            let p = |w: &str| format!("text.b{l}.{w}");
            let hn = tape.rms_norm(x);
            let wq = tape.param(&p("wq"))?;
            let wk = tape.param(&p("wk"))?;
            let wv = tape.param(&p("wv"))?;
            let wo = tape.param(&p("wo"))?;
            let q = tape.matmul(hn, wq)?;
            let k = tape.matmul(hn, wk)?;
            let v = tape.matmul(hn, wv)?;
            let mut heads = Vec::with_capacity(self.config.heads);
            for hd in 0..self.config.heads {
                let qh = tape.slice_cols(q, hd * dh, dh)?;
                let kh = tape.slice_cols(k, hd * dh, dh)?;
                let vh = tape.slice_cols(v, hd * dh, dh)?;
                let scores = tape.matmul_t(qh, kh)?;
                let scores = tape.scale(scores, att_scale);
                let att = tape.softmax(scores, true)?;
                heads.push(tape.matmul(att, vh)?);
            }
            let cat = tape.concat_cols(&heads)?;
            let o = tape.matmul(cat, wo)?;
            x = tape.add(x, o)?;

            let hn = tape.rms_norm(x);
            let w1 = tape.param(&p("w1"))?;
            let b1 = tape.param(&p("b1"))?;
            let w2 = tape.param(&p("w2"))?;
            let b2 = tape.param(&p("b2"))?;
            let f = tape.matmul(hn, w1)?;
            let f = tape.add_row(f, b1)?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2)?;
            let f = tape.add_row(f, b2)?;
            x = tape.add(x, f)?;
        }
        let last = tape.slice_rows(x, n - 1, 1)?;
        let last = tape.rms_norm(last);
        let wout = tape.param("text.out")?;
        let out = tape.matmul(last, wout)?;
        Ok(tape.l2_normalize(out))
    }

    /// Convolutional downsampler plus projection into the text embedding
    /// width: `(S × frame_width)` frames to `(ceil(S / stride) × h)`.
    pub fn frontend_on_tape(&self, tape: &mut Tape<'_>, prefix: &str, frames: &Matrix) -> Result<Var> {
        if frames.rows() == 0 {
            return Err(Error::invalid("empty frame sequence"));
        }
        if frames.cols() != self.config.frame_width() {
            return Err(Error::shape(
                "speech frontend",
                format!("frames are {} wide, expected {}", frames.cols(), self.config.frame_width()),
            ));
        }
        // utterance-level gain normalization
        let ms = frames.data().iter().map(|v| v * v).sum::<f64>() / frames.data().len() as f64;
        let x = tape.constant(frames.scaled(1.0 / (ms.sqrt() + 1e-8)));
        let k = self.config.conv_kernel;
        let cols = tape.im2col(x, k, self.config.conv_stride, (k - 1) / 2)?;
        let w = tape.param(&format!("{prefix}.conv.w"))?;
        let b = tape.param(&format!("{prefix}.conv.b"))?;
        let h = tape.matmul(cols, w)?;
        let h = tape.add_row(h, b)?;
        let h = tape.gelu(h);
        let proj = tape.param(&format!("{prefix}.proj"))?;
        tape.matmul(h, proj)
    }

    /// Late fusion: the prompt token embeddings followed by the projected
    /// speech positions, run through the text stack. The prompt comes first
    /// as it does for text queries, so speech positions line up with the
    /// token positions of the transcription.
    pub fn late_fusion_on_tape(&self, tape: &mut Tape<'_>, frames: &Matrix, prompt: &[u32]) -> Result<Var> {
        let speech = self.frontend_on_tape(tape, "lf", frames)?;
        self.check_tokens(prompt)?;
        let seq = if prompt.is_empty() {
            speech
        } else {
            let idx: Vec<usize> = prompt.iter().map(|&t| t as usize).collect();
            let p = tape.embed("text.tok_emb", &idx)?;
            tape.concat_rows(&[p, speech])?
        };
        self.stack_on_tape(tape, seq)
    }

    /// Attention-pooled Dual speech embedding: one normalized vector per
    /// configured dimension, each from its own projection.
    pub fn dual_on_tape(&self, tape: &mut Tape<'_>, frames: &Matrix) -> Result<Vec<(usize, Var)>> {
        let pooled = self.dual_pooled_on_tape(tape, frames)?;
        let mut out = Vec::with_capacity(self.config.dims.len());
        for d in self.config.dims.iter() {
            let w = tape.param(&head_name(d))?;
            let e = tape.matmul(pooled, w)?;
            out.push((d, tape.l2_normalize(e)));
        }
        Ok(out)
    }

    fn dual_pooled_on_tape(&self, tape: &mut Tape<'_>, frames: &Matrix) -> Result<Var> {
        let x = self.frontend_on_tape(tape, "dual", frames)?;
        let q = tape.param("dual.pool.q")?;
        let scores = tape.matmul_t(q, x)?;
        let scores = tape.scale(scores, 1.0 / (self.config.hidden as f64).sqrt());
        let w = tape.softmax(scores, false)?;
        tape.matmul(w, x)
    }

    pub fn encode_text(&self, tokens: &[u32], prompt: &[u32]) -> Result<Vec<f64>> {
        let mut tape = Tape::frozen(&self.params);
        let v = self.text_on_tape(&mut tape, tokens, prompt)?;
        Ok(tape.value(v).data().to_vec())
    }

    pub fn encode_speech_late_fusion(&self, frames: &Matrix, prompt: &[u32]) -> Result<Vec<f64>> {
        let mut tape = Tape::frozen(&self.params);
        let v = self.late_fusion_on_tape(&mut tape, frames, prompt)?;
        Ok(tape.value(v).data().to_vec())
    }

    pub fn encode_speech_dual(&self, frames: &Matrix) -> Result<DualEmbedding> {
        let mut tape = Tape::frozen(&self.params);
        let outs = self.dual_on_tape(&mut tape, frames)?;
        Ok(outs
            .into_iter()
            .map(|(d, v)| (d, tape.value(v).data().to_vec()))
            .collect())
    }

    /// The attention-pooled Dual representation before the per-dim heads.
    pub fn dual_pooled(&self, frames: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::frozen(&self.params);
        let v = self.dual_pooled_on_tape(&mut tape, frames)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Output of a speech front end (`"lf"` or `"dual"`) before fusion or pooling.
    pub fn frontend_output(&self, prefix: &str, frames: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::frozen(&self.params);
        let v = self.frontend_on_tape(&mut tape, prefix, frames)?;
        Ok(tape.value(v).clone())
    }
}

fn random_matrix(seed: u64, name: &str, rows: usize, cols: usize, std: f64) -> Matrix {
    if std == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches")
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
