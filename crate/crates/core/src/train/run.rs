use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{info_nce, mrl_loss, prefix, query_alignment_loss, LossConfig, Objective};
use crate::autodiff::{Tape, Var};
use crate::data::{PairedExample, Task};
use crate::error::{Error, Result};
use crate::model::SpeechTextModel;
use crate::numeric::{Gradients, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    TextOnly,
    LateFusion,
    DualRetrieval,
    DualAlignment,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::TextOnly, Variant::LateFusion, Variant::DualRetrieval, Variant::DualAlignment];

    pub fn name(self) -> &'static str {
        match self {
            Variant::TextOnly => "text-only",
            Variant::LateFusion => "late-fusion",
            Variant::DualRetrieval => "dual-retrieval",
            Variant::DualAlignment => "dual-alignment",
        }
    }

    /// Parameter-name prefixes trained by default.
    pub fn default_trainable(self) -> &'static [&'static str] {
        match self {
            Variant::TextOnly => &["text."],
            Variant::LateFusion => &["lf."],
            Variant::DualRetrieval | Variant::DualAlignment => &["dual."],
        }
    }

    pub fn is_speech(self) -> bool {
        self != Variant::TextOnly
    }

    pub fn objective(self) -> Objective {
        match self {
            Variant::DualAlignment => Objective::QueryAlignment,
            _ => Objective::Retrieval,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Token sequences are truncated to this length.
    pub max_len: usize,
    pub seed: u64,
    /// Parameter-name prefixes to train; empty means the variant default.
    pub trainable: Vec<String>,
    /// Tasks expanded from each example. Dual variants drop the prompt.
    pub tasks: Vec<Task>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            epochs: 1,
            batch_size: 16,
            learning_rate: 0.1,
            max_len: 64,
            seed: 17,
            trainable: Vec::new(),
            tasks: Task::ALL.to_vec(),
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for in-batch negatives, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("no training tasks".into()));
        }
        Ok(())
    }

    pub fn trainable_filter(&self, variant: Variant) -> impl Fn(&str) -> bool + Clone {
        let prefixes: Vec<String> = if self.trainable.is_empty() {
            variant.default_trainable().iter().map(|s| s.to_string()).collect()
        } else {
            self.trainable.clone()
        };
        move |name: &str| prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }
}

/// One optimization step of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub per_dim: Vec<(usize, f64)>,
    pub total: f64,
}

/// One training pair: an example, the task it is used for and the id of
/// its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Row {
    pub example: usize,
    pub task: Task,
    pub target: u64,
}

pub(crate) fn expand_rows(variant: Variant, data: &[PairedExample], tasks: &[Task]) -> Vec<Row> {
    let mut rows = Vec::new();
    for (i, e) in data.iter().enumerate() {
        if variant == Variant::DualAlignment {
            rows.push(Row {
                example: i,
                task: Task::TranscriptionRetrieval,
                target: e.id,
            });
            continue;
        }
        for &task in tasks {
            if let Some((target, _)) = e.target(task) {
                rows.push(Row { example: i, task, target });
            }
        }
    }
    rows
}

/// Shuffles `rows` and cuts them into batches in which no target and no
/// example appears twice. Rows that would collide wait for a later batch.
pub(crate) fn make_batches(rows: &[Row], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Row>> {
    let mut order: Vec<Row> = rows.to_vec();
    order.shuffle(rng);
    let mut pending: VecDeque<Row> = order.into();
    let mut out = Vec::new();
    while !pending.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut targets = HashSet::new();
        let mut examples = HashSet::new();
        let mut deferred = VecDeque::new();
        while let Some(r) = pending.pop_front() {
            if batch.len() == batch_size {
                deferred.push_back(r);
                continue;
            }
            if targets.contains(&r.target) || examples.contains(&r.example) {
                deferred.push_back(r);
            } else {
                targets.insert(r.target);
                examples.insert(r.example);
                batch.push(r);
            }
        }
        pending = deferred;
        out.push(batch);
    }
    out
}

/// Target embeddings computed once by the frozen text encoder.
pub(crate) fn target_embeddings(
    model: &SpeechTextModel,
    variant: Variant,
    data: &[PairedExample],
    rows: &[Row],
    max_len: usize,
) -> Result<HashMap<u64, Vec<f64>>> {
    let mut out = HashMap::new();
    for r in rows {
        if out.contains_key(&r.target) {
            continue;
        }
        let e = &data[r.example];
        let toks: &[u32] = if variant == Variant::DualAlignment {
            &e.transcription
        } else {
            e.target(r.task).expect("row built from a valid target").1
        };
        out.insert(r.target, model.encode_text(truncate(toks, max_len), &[])?);
    }
    Ok(out)
}

fn truncate(t: &[u32], max_len: usize) -> &[u32] {
    &t[..t.len().min(max_len)]
}

/// Loss terms of one batch and the seeds to back-propagate.
pub(crate) struct BatchLoss {
    pub total: f64,
    pub per_dim: Vec<(usize, f64)>,
    seeds: Vec<(Var, Matrix)>,
}

/// Loss of one batch and its gradients with respect to the parameters
/// accepted by `trainable`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_gradients(
    model: &SpeechTextModel,
    variant: Variant,
    data: &[PairedExample],
    batch: &[Row],
    targets: &HashMap<u64, Vec<f64>>,
    loss: &LossConfig,
    max_len: usize,
    trainable: &(impl Fn(&str) -> bool + Clone),
) -> Result<(BatchLoss, Gradients)> {
    let t = trainable.clone();
    let mut tape = Tape::new(model.params(), t);
    let bl = batch_loss(model, &mut tape, variant, data, batch, targets, loss, max_len)?;
    if !bl.total.is_finite() {
        return Ok((bl, Gradients::new()));
    }
    let grads = tape.backward(&bl.seeds)?;
    Ok((bl, grads))
}

/// One fixed batch of a variant's objective, for checking gradients.
/// Speech targets are embedded once by `reference`, as during training.
#[derive(Debug, Clone)]
pub struct FixedBatch {
    variant: Variant,
    data: Vec<PairedExample>,
    rows: Vec<Row>,
    targets: HashMap<u64, Vec<f64>>,
    loss: LossConfig,
    max_len: usize,
}

impl FixedBatch {
    pub fn new(
        reference: &SpeechTextModel,
        variant: Variant,
        data: Vec<PairedExample>,
        tasks: &[Task],
        loss: LossConfig,
        max_len: usize,
    ) -> Result<Self> {
        check_dims(reference, variant, &loss)?;
        let rows = expand_rows(variant, &data, tasks);
        if rows.len() < 2 {
            return Err(Error::invalid("a batch needs two or more pairs"));
        }
        let targets = if variant.is_speech() {
            target_embeddings(reference, variant, &data, &rows, max_len)?
        } else {
            HashMap::new()
        };
        Ok(FixedBatch { variant, data, rows, targets, loss, max_len })
    }

    /// Loss and its gradient for every parameter the variant trains by
    /// default (zero where the batch does not reach a parameter).
    pub fn loss_and_gradients(&self, model: &SpeechTextModel) -> Result<(f64, Gradients)> {
        let prefixes = self.variant.default_trainable();
        let trainable = move |n: &str| prefixes.iter().any(|p| n.starts_with(p));
        let (bl, g) = step_gradients(
            model,
            self.variant,
            &self.data,
            &self.rows,
            &self.targets,
            &self.loss,
            self.max_len,
            &trainable,
        )?;
        let mut g = g.filtered(trainable);
        for (name, p) in model.params().iter().filter(|(n, _)| trainable(n)) {
            if g.get(name).is_none() {
                g.insert(name.clone(), Matrix::zeros(p.rows(), p.cols()));
            }
        }
        Ok((bl.total, g))
    }
}

#[allow(clippy::too_many_arguments)]
fn batch_loss(
    model: &SpeechTextModel,
    tape: &mut Tape<'_>,
    variant: Variant,
    data: &[PairedExample],
    batch: &[Row],
    targets: &HashMap<u64, Vec<f64>>,
    loss: &LossConfig,
    max_len: usize,
) -> Result<BatchLoss> {
    let target_matrix = || -> Result<Matrix> {
        let rows: Vec<&[f64]> = batch.iter().map(|r| targets[&r.target].as_slice()).collect();
        Matrix::from_rows(&rows)
    };
    match variant {
        Variant::TextOnly | Variant::LateFusion => {
            let mut qs = Vec::with_capacity(batch.len());
            let mut ds = Vec::new();
            for r in batch {
                let e = &data[r.example];
                let prompt = [r.task.prompt()];
                if variant == Variant::TextOnly {
                    qs.push(model.text_on_tape(tape, truncate(&e.query, max_len), &prompt)?);
                    let toks = e.target(r.task).expect("valid row").1;
                    ds.push(model.text_on_tape(tape, truncate(toks, max_len), &[])?);
                } else {
                    qs.push(model.late_fusion_on_tape(tape, &e.frames, &prompt)?);
                }
            }
            let q = tape.concat_rows(&qs)?;
            let (d, d_val) = if variant == Variant::TextOnly {
                let d = tape.concat_rows(&ds)?;
                (Some(d), tape.value(d).clone())
            } else {
                (None, target_matrix()?)
            };
            let l = mrl_loss(tape.value(q), &d_val, loss)?;
            let mut seeds = vec![(q, l.grad_q)];
            if let Some(d) = d {
                seeds.push((d, l.grad_d));
            }
            Ok(BatchLoss { total: l.loss, per_dim: l.per_dim, seeds })
        }
        Variant::DualRetrieval | Variant::DualAlignment => {
            let mut heads: Vec<Vec<Var>> = vec![Vec::new(); loss.dims.len()];
            for r in batch {
                let outs = model.dual_on_tape(tape, &data[r.example].frames)?;
                for (slot, (d, v)) in outs.into_iter().enumerate() {
                    debug_assert_eq!(d, loss.dims.as_slice()[slot]);
                    heads[slot].push(v);
                }
            }
            let full = target_matrix()?;
            let mut total = 0.0;
            let mut per_dim = Vec::new();
            let mut seeds = Vec::new();
            for (slot, d) in loss.dims.iter().enumerate() {
                let q = tape.concat_rows(&heads[slot])?;
                let (t, _) = prefix(&full, d, loss.normalize_prefix);
                let term = if variant == Variant::DualRetrieval {
                    info_nce(tape.value(q), &t, loss.temperature)?
                } else {
                    query_alignment_loss(tape.value(q), &t)?
                };
                total += term.loss;
                per_dim.push((d, term.loss));
                seeds.push((q, term.grad_q));
            }
            Ok(BatchLoss { total, per_dim, seeds })
        }
    }
}

fn check_dims(model: &SpeechTextModel, variant: Variant, loss: &LossConfig) -> Result<()> {
    loss.validate()?;
    let dims = &model.config().dims;
    let ok = if variant.is_speech() && variant != Variant::LateFusion {
        loss.dims == *dims
    } else {
        loss.dims.is_subset_of(dims)
    };
    if !ok {
        let bad = loss.dims.iter().find(|d| !dims.contains(*d)).unwrap_or(loss.dims.max());
        return Err(Error::UnconfiguredDim { dim: bad, configured: dims.as_slice().to_vec() });
    }
    if loss.objective != variant.objective() {
        return Err(Error::Config(format!(
            "variant {} needs the {:?} objective",
            variant.name(),
            variant.objective()
        )));
    }
    Ok(())
}

/// Trains `model` in place and returns the loss curve. Only parameters
/// passing the run's trainable filter are updated.
pub fn train(
    model: &mut SpeechTextModel,
    variant: Variant,
    data: &[PairedExample],
    run: &TrainRunConfig,
    loss: &LossConfig,
) -> Result<Vec<StepRecord>> {
    run.validate()?;
    check_dims(model, variant, loss)?;
    if data.is_empty() {
        return Err(Error::invalid("no training data"));
    }
    let rows = expand_rows(variant, data, &run.tasks);
    if rows.len() < 2 {
        return Err(Error::invalid("fewer than two training pairs"));
    }
    let trainable = run.trainable_filter(variant);
    let targets = if variant.is_speech() {
        target_embeddings(model, variant, data, &rows, run.max_len)?
    } else {
        HashMap::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut curve = Vec::new();
    let mut step = 0;
    for epoch in 0..run.epochs {
        for batch in make_batches(&rows, run.batch_size, &mut rng) {
            if batch.len() < 2 {
                continue;
            }
            let (bl, grads) = match step_gradients(
                model, variant, data, &batch, &targets, loss, run.max_len, &trainable,
            ) {
                Ok((bl, g)) if bl.total.is_finite() => (bl, g),
                Ok(_) | Err(Error::NonFinite { .. }) => {
                    return Err(Error::Divergence {
                        step,
                        batch: batch.iter().map(|r| data[r.example].id).collect(),
                    })
                }
                Err(e) => return Err(e),
            };
            curve.push(StepRecord { step, epoch, per_dim: bl.per_dim, total: bl.total });
            sgd_step(model, &grads, run.learning_rate, &trainable)?;
            step += 1;
        }
    }
    Ok(curve)
}

pub(crate) fn sgd_step(
    model: &mut SpeechTextModel,
    grads: &Gradients,
    lr: f64,
    trainable: &impl Fn(&str) -> bool,
) -> Result<()> {
    if lr == 0.0 {
        return Ok(());
    }
    for (name, g) in grads.iter() {
        if !trainable(name) {
            continue;
        }
        let p = model
            .params_mut()
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
        p.axpy(-lr, g)?;
    }
    Ok(())
}

/// Mean loss over the whole data set in fixed batches, without updating.
pub fn evaluate_loss(
    model: &SpeechTextModel,
    variant: Variant,
    data: &[PairedExample],
    run: &TrainRunConfig,
    loss: &LossConfig,
) -> Result<f64> {
    check_dims(model, variant, loss)?;
    let rows = expand_rows(variant, data, &run.tasks);
    let targets = if variant.is_speech() {
        target_embeddings(model, variant, data, &rows, run.max_len)?
    } else {
        HashMap::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut sum = 0.0;
    let mut n = 0usize;
    for batch in make_batches(&rows, run.batch_size, &mut rng) {
        if batch.len() < 2 {
            continue;
        }
        let mut tape = Tape::frozen(model.params());
        let bl = batch_loss(model, &mut tape, variant, data, &batch, &targets, loss, run.max_len)?;
        sum += bl.total;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no batch of two or more pairs"));
    }
    Ok(sum / n as f64)
}

/// Loss curve as one JSON record per line.
pub fn write_loss_curve<W: std::io::Write>(mut w: W, curve: &[StepRecord]) -> Result<()> {
    for r in curve {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<loss curve>", e))?;
    }
    Ok(())
}
