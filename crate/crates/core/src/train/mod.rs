//! Objectives, the training loop and few-shot adaptation.

mod fewshot;
mod loss;
mod run;

pub use fewshot::{
    fit_intent_head, setfit_pairs, setfit_stage1, setfit_train, FewShotConfig, IntentClassifier,
    LogisticRegression, PairSet, SHOT_COUNTS,
};
pub(crate) use fewshot::prefix_unit;
pub use loss::{info_nce, mrl_loss, query_alignment_loss, LossConfig, MrlLoss, Objective, PairLoss};
pub use run::{evaluate_loss, train, FixedBatch, write_loss_curve, StepRecord, TrainRunConfig, Variant};

#[cfg(test)]
mod tests;
