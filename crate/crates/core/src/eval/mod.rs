//! Retrieval, keyword-spotting and intent metrics, the embedding energy
//! analysis, and the report format they share.

mod intent;
mod metrics;
mod rank;
mod report;
mod retrieval;

pub use intent::{eval_intent_fewshot, intent_task, sample_shots};
pub use metrics::{macro_f1_recall, ndcg_at_k, Grades, Judgments};
pub use rank::{dims_for_energy, energy_curve, EmbeddingSource, EnergyCurve, ENERGY_TOLERANCE};
pub use report::EvalReport;
pub use retrieval::{
    documents_of, embed_documents, embed_query, eval_keyword_spotting, eval_pipelined, eval_retrieval,
    judgments_of, score_queries, QueryEmbedding, DOCUMENT_TASK, KEYWORD_TASK,
};
