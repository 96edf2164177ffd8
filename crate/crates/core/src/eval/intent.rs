use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::macro_f1_recall;
use super::report::EvalReport;
use crate::data::PairedExample;
use crate::error::{Error, Result};
use crate::model::SpeechTextModel;
use crate::train::{fit_intent_head, setfit_stage1, FewShotConfig};

pub fn intent_task(n_shot: usize) -> String {
    format!("intent-{n_shot}-shot")
}

/// Draws `n` examples per class from `pool` with a seeded shuffle.
pub fn sample_shots(pool: &[PairedExample], classes: usize, n: usize, seed: u64) -> Result<Vec<PairedExample>> {
    let mut by_class: Vec<Vec<&PairedExample>> = vec![Vec::new(); classes];
    for e in pool {
        let c = e.intent.ok_or_else(|| Error::invalid(format!("example {} has no intent label", e.id)))? as usize;
        by_class
            .get_mut(c)
            .ok_or_else(|| Error::invalid(format!("intent {c} outside {classes} classes")))?
            .push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * classes);
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < n {
            return Err(Error::invalid(format!(
                "{n}-shot needs {n} examples of class {c}, pool has {}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        out.extend(members.iter().take(n).map(|e| (*e).clone()));
    }
    Ok(out)
}

/// Few-shot intent classification for each shot count and each configured
/// dim. Stage 1 runs once per shot count; stage 2 is fitted per dim on the
/// same tuned encoder.
pub fn eval_intent_fewshot(
    model: &SpeechTextModel,
    pool: &[PairedExample],
    test: &[PairedExample],
    label_texts: &[Vec<u32>],
    shot_counts: &[usize],
    cfg: &FewShotConfig,
    seed: u64,
) -> Result<EvalReport> {
    let classes = label_texts.len();
    let gold: Vec<u32> = test
        .iter()
        .map(|e| e.intent.ok_or_else(|| Error::invalid(format!("test example {} has no intent label", e.id))))
        .collect::<Result<_>>()?;
    let prompt = [cfg.prompt.prompt()];
    let dims = model.config().dims.clone();
    let mut report = EvalReport::default();
    for &n in shot_counts {
        let shots = sample_shots(pool, classes, n, seed.wrapping_add(n as u64))?;
        let mut tuned = model.clone();
        let run_cfg = FewShotConfig { n_shot: n, ..cfg.clone() };
        if n > 0 {
            setfit_stage1(&mut tuned, &shots, classes, &run_cfg)?;
        }
        let label_emb: Vec<Vec<f64>> = label_texts.iter().map(|t| tuned.encode_text(t, &[])).collect::<Result<_>>()?;
        let shot_emb: Vec<Vec<f64>> =
            shots.iter().map(|s| tuned.encode_speech_late_fusion(&s.frames, &prompt)).collect::<Result<_>>()?;
        let shot_labels: Vec<u32> = shots.iter().filter_map(|s| s.intent).collect();
        let test_emb: Vec<Vec<f64>> =
            test.iter().map(|s| tuned.encode_speech_late_fusion(&s.frames, &prompt)).collect::<Result<_>>()?;
        for dim in dims.iter() {
            let clf = fit_intent_head(&shot_emb, &shot_labels, &label_emb, dim, &run_cfg)?;
            let pred: Vec<u32> = test_emb.iter().map(|e| clf.predict(e)).collect::<Result<_>>()?;
            let (f1, recall) = macro_f1_recall(&pred, &gold, classes)?;
            let task = intent_task(n);
            report.set(&task, dim, "f1", f1);
            report.set(&task, dim, "recall", recall);
        }
    }
    report.meta.insert("averaging".into(), "macro".into());
    Ok(report)
}
