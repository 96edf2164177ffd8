//! Two-stage few-shot adaptation: contrastive tuning of the Late-Fusion
//! front end on labeled pairs, then a logistic-regression head on frozen
//! embeddings.

use serde::{Deserialize, Serialize};

use super::run::sgd_step;
use crate::autodiff::Tape;
use crate::data::{PairedExample, Task};
use crate::error::{Error, Result};
use crate::model::{slice_prefix, SpeechTextModel};
use crate::numeric::{dot, softmax_in_place, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotConfig {
    pub n_shot: usize,
    pub stage1_steps: usize,
    pub stage1_lr: f64,
    pub stage2_iters: usize,
    pub stage2_lr: f64,
    pub stage2_l2: f64,
    /// Stage 2 starts from the zero-shot classifier, its label similarities
    /// scaled by this factor, and the L2 penalty pulls toward that start.
    /// Zero starts from all-zero weights.
    pub prior_scale: f64,
    /// Prompt task used to embed utterances.
    pub prompt: Task,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            n_shot: 8,
            stage1_steps: 60,
            stage1_lr: 0.3,
            stage2_iters: 300,
            stage2_lr: 2.0,
            stage2_l2: 1e-4,
            prior_scale: 20.0,
            prompt: Task::DocumentRetrieval,
        }
    }
}

pub const SHOT_COUNTS: [usize; 6] = [0, 1, 2, 4, 8, 16];

/// Unordered index pairs for stage 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

/// Pairs every example with every example of the other classes (negatives)
/// and of its own class (positives).
pub fn setfit_pairs(labels: &[u32], classes: usize) -> Result<PairSet> {
    if classes < 2 {
        return Err(Error::invalid(format!("few-shot pairs need at least 2 classes, got {classes}")));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        let slot = counts
            .get_mut(l as usize)
            .ok_or_else(|| Error::invalid(format!("label {l} outside {classes} classes")))?;
        *slot += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no examples")));
    }
    let mut out = PairSet::default();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                out.positives.push((i, j));
            } else {
                out.negatives.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Stage 1: cosine-similarity regression on pairs (target 1 for positives,
/// 0 for negatives, each group averaged separately), updating only the
/// Late-Fusion front end. Returns the per-step loss.
pub fn setfit_stage1(
    model: &mut SpeechTextModel,
    shots: &[PairedExample],
    classes: usize,
    cfg: &FewShotConfig,
) -> Result<Vec<f64>> {
    let labels = intent_labels(shots)?;
    let pairs = setfit_pairs(&labels, classes)?;
    let trainable = |n: &str| n.starts_with("lf.");
    let prompt = [cfg.prompt.prompt()];
    let mut losses = Vec::with_capacity(cfg.stage1_steps);
    for _ in 0..cfg.stage1_steps {
        let grads = {
            let mut tape = Tape::new(model.params(), trainable);
            let mut vars = Vec::with_capacity(shots.len());
            for s in shots {
                vars.push(model.late_fusion_on_tape(&mut tape, &s.frames, &prompt)?);
            }
            let e = tape.concat_rows(&vars)?;
            let (loss, grad) = pair_cosine_loss(tape.value(e), &pairs);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: losses.len(),
                    batch: shots.iter().map(|s| s.id).collect(),
                });
            }
            losses.push(loss);
            tape.backward(&[(e, grad)])?
        };
        sgd_step(model, &grads, cfg.stage1_lr, &trainable)?;
    }
    Ok(losses)
}

fn pair_cosine_loss(e: &Matrix, pairs: &PairSet) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let mut loss = 0.0;
    for (set, target) in [(&pairs.positives, 1.0), (&pairs.negatives, 0.0)] {
        if set.is_empty() {
            continue;
        }
        let w = 1.0 / set.len() as f64;
        for &(i, j) in set.iter() {
            let c = dot(e.row(i), e.row(j));
            loss += w * (c - target) * (c - target);
            let g = 2.0 * w * (c - target);
            let (ri, rj) = (e.row(i).to_vec(), e.row(j).to_vec());
            grad.row_mut(i).iter_mut().zip(&rj).for_each(|(o, v)| *o += g * v);
            grad.row_mut(j).iter_mut().zip(&ri).for_each(|(o, v)| *o += g * v);
        }
    }
    (loss, grad)
}

fn intent_labels(shots: &[PairedExample]) -> Result<Vec<u32>> {
    shots
        .iter()
        .map(|s| {
            s.intent.ok_or_else(|| Error::invalid(format!("example {} has no intent label", s.id)))
        })
        .collect()
}

/// Multiclass logistic regression fitted by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LogisticRegression {
    pub fn fit(x: &Matrix, y: &[u32], classes: usize, iters: usize, lr: f64, l2: f64) -> Result<Self> {
        let init = LogisticRegression { weights: Matrix::zeros(x.cols(), classes), bias: vec![0.0; classes] };
        Self::fit_from(x, y, init, iters, lr, l2)
    }

    /// Gradient descent starting at `init`, with the L2 penalty pulling the
    /// weights back toward `init` rather than toward zero.
    pub fn fit_from(x: &Matrix, y: &[u32], init: LogisticRegression, iters: usize, lr: f64, l2: f64) -> Result<Self> {
        let classes = init.bias.len();
        if init.weights.shape() != (x.cols(), classes) {
            return Err(Error::shape(
                "logistic regression",
                format!("initial weights {:?} for {} features and {classes} classes", init.weights.shape(), x.cols()),
            ));
        }
        if x.rows() != y.len() || x.rows() == 0 {
            return Err(Error::shape("logistic regression", format!("{} rows, {} labels", x.rows(), y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
        }
        let n = x.rows();
        let anchor = init.weights.clone();
        let mut w = init.weights;
        let mut b = init.bias;
        for _ in 0..iters {
            let mut logits = x.matmul(&w)?;
            for r in 0..n {
                let row = logits.row_mut(r);
                row.iter_mut().zip(&b).for_each(|(v, bi)| *v += bi);
                softmax_in_place(row);
                row[y[r] as usize] -= 1.0;
            }
            logits.scale(1.0 / n as f64);
            let mut gw = x.t_matmul(&logits)?;
            gw.axpy(l2, &w)?;
            gw.axpy(-l2, &anchor)?;
            for c in 0..classes {
                b[c] -= lr * (0..n).map(|r| logits.get(r, c)).sum::<f64>();
            }
            w.axpy(-lr, &gw)?;
        }
        Ok(LogisticRegression { weights: w, bias: b })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.bias.len())
            .map(|c| self.bias[c] + x.iter().enumerate().map(|(k, v)| v * self.weights.get(k, c)).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> u32 {
        argmax(&self.scores(x))
    }
}

fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Intent classifier over re-normalized embedding prefixes of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub enum IntentClassifier {
    /// Label with the highest cosine similarity.
    ZeroShot { dim: usize, labels: Matrix },
    Logistic { dim: usize, head: LogisticRegression },
}

impl IntentClassifier {
    pub fn dim(&self) -> usize {
        match self {
            IntentClassifier::ZeroShot { dim, .. } | IntentClassifier::Logistic { dim, .. } => *dim,
        }
    }

    /// Predicts from a full-width embedding.
    pub fn predict(&self, embedding: &[f64]) -> Result<u32> {
        let x = prefix_unit(embedding, self.dim())?;
        Ok(match self {
            IntentClassifier::ZeroShot { labels, .. } => {
                let s: Vec<f64> = labels.row_iter().map(|l| dot(l, &x)).collect();
                argmax(&s)
            }
            IntentClassifier::Logistic { head, .. } => head.predict(&x),
        })
    }
}

pub(crate) fn prefix_unit(e: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim > e.len() {
        return Err(Error::invalid(format!("prefix {dim} of a {}-wide embedding", e.len())));
    }
    let dims = crate::model::MatryoshkaDims::new(vec![dim])?;
    slice_prefix(&e[..dim], dim, &dims, true)
}

/// Stage 2 head on precomputed embeddings; with no shots, the zero-shot
/// label-similarity classifier.
pub fn fit_intent_head(
    shot_embeddings: &[Vec<f64>],
    shot_labels: &[u32],
    label_embeddings: &[Vec<f64>],
    dim: usize,
    cfg: &FewShotConfig,
) -> Result<IntentClassifier> {
    if shot_embeddings.is_empty() {
        let rows: Vec<Vec<f64>> =
            label_embeddings.iter().map(|l| prefix_unit(l, dim)).collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        return Ok(IntentClassifier::ZeroShot { dim, labels: Matrix::from_rows(&refs)? });
    }
    let rows: Vec<Vec<f64>> = shot_embeddings.iter().map(|e| prefix_unit(e, dim)).collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let x = Matrix::from_rows(&refs)?;
    let classes = label_embeddings.len();
    let mut init = Matrix::zeros(dim, classes);
    if cfg.prior_scale != 0.0 {
        for (c, l) in label_embeddings.iter().enumerate() {
            for (k, v) in prefix_unit(l, dim)?.into_iter().enumerate() {
                init.set(k, c, cfg.prior_scale * v);
            }
        }
    }
    let init = LogisticRegression { weights: init, bias: vec![0.0; classes] };
    let head = LogisticRegression::fit_from(&x, shot_labels, init, cfg.stage2_iters, cfg.stage2_lr, cfg.stage2_l2)?;
    Ok(IntentClassifier::Logistic { dim, head })
}

/// Full procedure at one dimension: returns the stage-1 model and the
/// classifier. `n_shot = 0` skips both stages.
pub fn setfit_train(
    model: &SpeechTextModel,
    shots: &[PairedExample],
    label_texts: &[Vec<u32>],
    dim: usize,
    cfg: &FewShotConfig,
) -> Result<(SpeechTextModel, IntentClassifier)> {
    model.config().dims.check(dim)?;
    let mut tuned = model.clone();
    let labels = intent_labels(shots)?;
    if cfg.n_shot > 0 && !shots.is_empty() {
        setfit_stage1(&mut tuned, shots, label_texts.len(), cfg)?;
    }
    let label_emb: Vec<Vec<f64>> =
        label_texts.iter().map(|t| tuned.encode_text(t, &[])).collect::<Result<_>>()?;
    let shot_emb: Vec<Vec<f64>> = if cfg.n_shot == 0 {
        Vec::new()
    } else {
        shots
            .iter()
            .map(|s| tuned.encode_speech_late_fusion(&s.frames, &[cfg.prompt.prompt()]))
            .collect::<Result<_>>()?
    };
    let labels = if cfg.n_shot == 0 { Vec::new() } else { labels };
    let clf = fit_intent_head(&shot_emb, &labels, &label_emb, dim, cfg)?;
    Ok((tuned, clf))
}
