use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Graded relevance of documents for one query.
pub type Grades = BTreeMap<u64, u32>;

/// Relevance judgments: query id to graded documents.
pub type Judgments = BTreeMap<u64, Grades>;

/// nDCG@k with linear gain and log2 discount. An empty ranking scores 0.
pub fn ndcg_at_k(ranking: &[u64], grades: &Grades, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("ndcg_at_k needs k >= 1"));
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| f64::from(grades.get(id).copied().unwrap_or(0)) * discount(i))
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| f64::from(g) * discount(i)).sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

/// Macro-averaged F1 and recall over `classes`. Classes absent from both
/// gold and predictions are skipped.
pub fn macro_f1_recall(predicted: &[u32], gold: &[u32], classes: usize) -> Result<(f64, f64)> {
    if predicted.len() != gold.len() {
        return Err(Error::shape("macro_f1_recall", format!("{} predictions, {} labels", predicted.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(Error::invalid("no labeled predictions"));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&p, &g) in predicted.iter().zip(gold) {
        if p as usize >= classes || g as usize >= classes {
            return Err(Error::invalid(format!("label outside {classes} classes")));
        }
        if p == g {
            tp[g as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fneg[g as usize] += 1;
        }
    }
    let (mut f1_sum, mut rec_sum, mut n) = (0.0, 0.0, 0usize);
    for c in 0..classes {
        if tp[c] + fp[c] + fneg[c] == 0 {
            continue;
        }
        let support = tp[c] + fneg[c];
        let recall = if support == 0 { 0.0 } else { tp[c] as f64 / support as f64 };
        let pred = tp[c] + fp[c];
        let precision = if pred == 0 { 0.0 } else { tp[c] as f64 / pred as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        f1_sum += f1;
        rec_sum += recall;
        n += 1;
    }
    Ok((f1_sum / n as f64, rec_sum / n as f64))
}
