//! Retrieval and distillation objectives with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MatryoshkaDims;
use crate::numeric::{dot, norm, similarity_matrix, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Retrieval,
    QueryAlignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub dims: MatryoshkaDims,
    pub objective: Objective,
    /// Re-normalize each prefix before scoring.
    pub normalize_prefix: bool,
}

impl LossConfig {
    pub fn retrieval(dims: MatryoshkaDims) -> Self {
        Self {
            temperature: 0.05,
            dims,
            objective: Objective::Retrieval,
            normalize_prefix: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Value and gradients of a two-sided embedding loss.
#[derive(Clone, Debug)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_q: Matrix,
    pub grad_d: Matrix,
    /// Set when the batch has a single row and the loss is trivially zero.
    pub degenerate: bool,
}

/// In-batch InfoNCE: row `i` of `docs` is the positive for query `i`, every
/// other row a negative.
pub fn info_nce(q: &Matrix, docs: &Matrix, temperature: f64) -> Result<PairLoss> {
    let n = q.rows();
    if n < 1 {
        return Err(Error::invalid("InfoNCE needs at least one pair"));
    }
    if docs.rows() != n {
        return Err(Error::shape(
            "info_nce",
            format!("{n} queries vs {} documents", docs.rows()),
        ));
    }
    if temperature <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    if n == 1 {
        return Ok(PairLoss {
            loss: 0.0,
            grad_q: Matrix::zeros(1, q.cols()),
            grad_d: Matrix::zeros(1, docs.cols()),
            degenerate: true,
        });
    }
    let s = similarity_matrix(q, docs)?;
    let mut dlogits = Matrix::zeros(n, n);
    let mut loss = 0.0;
    for i in 0..n {
        let row = s.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
        let sum: f64 = row.iter().map(|&v| (v / temperature - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[i] / temperature;
        let out = dlogits.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            out[j] = (v / temperature - lse).exp();
        }
        out[i] -= 1.0;
    }
    let scale = 1.0 / (n as f64 * temperature);
    dlogits.scale(scale);
    let grad_q = dlogits.matmul(docs)?;
    let grad_d = dlogits.t_matmul(q)?;
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "info_nce loss",
            row: 0,
        });
    }
    Ok(PairLoss {
        loss,
        grad_q,
        grad_d,
        degenerate: false,
    })
}

/// Joint loss over Matryoshka prefixes plus the per-dimension terms.
#[derive(Clone, Debug)]
pub struct MrlLoss {
    pub loss: f64,
    pub per_dim: Vec<(usize, f64)>,
    pub grad_q: Matrix,
    pub grad_d: Matrix,
}

/// Sum over `cfg.dims` of InfoNCE on the leading columns of both sides.
pub fn mrl_loss(q_full: &Matrix, d_full: &Matrix, cfg: &LossConfig) -> Result<MrlLoss> {
    cfg.validate()?;
    if q_full.cols() != d_full.cols() {
        return Err(Error::shape(
            "mrl_loss",
            format!("query width {} vs document width {}", q_full.cols(), d_full.cols()),
        ));
    }
    if cfg.dims.max() > q_full.cols() {
        return Err(Error::UnconfiguredDim {
            dim: cfg.dims.max(),
            configured: vec![q_full.cols()],
        });
    }
    let mut grad_q = Matrix::zeros(q_full.rows(), q_full.cols());
    let mut grad_d = Matrix::zeros(d_full.rows(), d_full.cols());
    let mut per_dim = Vec::with_capacity(cfg.dims.len());
    let mut loss = 0.0;
    for m in cfg.dims.iter() {
        let (qm, q_norms) = prefix(q_full, m, cfg.normalize_prefix);
        let (dm, d_norms) = prefix(d_full, m, cfg.normalize_prefix);
        let term = info_nce(&qm, &dm, cfg.temperature)?;
        loss += term.loss;
        per_dim.push((m, term.loss));
        prefix_backward(&mut grad_q, &qm, &q_norms, &term.grad_q);
        prefix_backward(&mut grad_d, &dm, &d_norms, &term.grad_d);
    }
    Ok(MrlLoss {
        loss,
        per_dim,
        grad_q,
        grad_d,
    })
}

/// Leading `m` columns, optionally row-normalized. Returns the pre-normalization
/// row norms (`None` when not normalizing).
pub(crate) fn prefix(full: &Matrix, m: usize, normalize: bool) -> (Matrix, Option<Vec<f64>>) {
    let mut p = full.prefix_cols(m).expect("prefix width checked by caller");
    if !normalize {
        return (p, None);
    }
    let mut norms = Vec::with_capacity(p.rows());
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let n = norm(row);
        norms.push(n);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    (p, Some(norms))
}

/// Adds the gradient w.r.t. the full matrix given the gradient w.r.t. its
/// (possibly normalized) prefix `y`.
pub(crate) fn prefix_backward(acc: &mut Matrix, y: &Matrix, norms: &Option<Vec<f64>>, gy: &Matrix) {
    for r in 0..y.rows() {
        let g = gy.row(r);
        let out = &mut acc.row_mut(r)[..y.cols()];
        match norms {
            None => out.iter_mut().zip(g).for_each(|(o, v)| *o += v),
            Some(ns) => {
                let n = ns[r];
                if n == 0.0 {
                    continue;
                }
                let yr = y.row(r);
                let s = dot(yr, g);
                for ((o, &gi), &yi) in out.iter_mut().zip(g).zip(yr) {
                    *o += (gi - yi * s) / n;
                }
            }
        }
    }
}

/// Distillation loss: per row `(1 - cos(s, t)) + mean |s - t|`, averaged
/// over rows.
pub fn query_alignment_loss(speech: &Matrix, text: &Matrix) -> Result<PairLoss> {
    if speech.shape() != text.shape() {
        return Err(Error::shape(
            "query_alignment_loss",
            format!("{:?} vs {:?}", speech.shape(), text.shape()),
        ));
    }
    let (n, d) = speech.shape();
    if n == 0 || d == 0 {
        return Err(Error::invalid("query alignment needs a nonempty batch"));
    }
    let mut loss = 0.0;
    let mut gs = Matrix::zeros(n, d);
    let mut gt = Matrix::zeros(n, d);
    let inv_n = 1.0 / n as f64;
    let inv_d = 1.0 / d as f64;
    for r in 0..n {
        let s = speech.row(r);
        let t = text.row(r);
        let ns = norm(s);
        let nt = norm(t);
        if ns == 0.0 || nt == 0.0 {
            return Err(Error::invalid(format!(
                "zero-norm row {r} in query alignment (cosine undefined)"
            )));
        }
        let st = dot(s, t);
        let cos = st / (ns * nt);
        let l1: f64 = s.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() * inv_d;
        loss += 1.0 - cos + l1;
        let gsr = gs.row_mut(r);
        for k in 0..d {
            let dcos_ds = t[k] / (ns * nt) - cos * s[k] / (ns * ns);
            gsr[k] = inv_n * (-dcos_ds + sign(s[k] - t[k]) * inv_d);
        }
        let gtr = gt.row_mut(r);
        for k in 0..d {
            let dcos_dt = s[k] / (ns * nt) - cos * t[k] / (nt * nt);
            gtr[k] = inv_n * (-dcos_dt - sign(s[k] - t[k]) * inv_d);
        }
    }
    Ok(PairLoss {
        loss: loss * inv_n,
        grad_q: gs,
        grad_d: gt,
        degenerate: false,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn info_nce_examples() {
        let one = info_nce(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]]), 0.05).unwrap();
        assert_eq!(one.loss, 0.0);
        assert!(one.degenerate);

        let i2 = Matrix::identity(2);
        let l = info_nce(&i2, &i2, 1.0).unwrap().loss;
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);

        // each query is equidistant from both documents
        let q = m(&[&[0.0, 1.0], &[0.0, -1.0]]);
        let d = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let l = info_nce(&q, &d, 0.05).unwrap().loss;
        assert!((l - 2f64.ln()).abs() < 1e-12);

        assert!(info_nce(&Matrix::zeros(0, 2), &Matrix::zeros(0, 2), 1.0).is_err());
        assert!(info_nce(&i2, &Matrix::zeros(3, 2), 1.0).is_err());
    }

    #[test]
    fn alignment_examples() {
        let a = m(&[&[0.6, 0.8], &[1.0, 0.0]]);
        assert!(query_alignment_loss(&a, &a).unwrap().loss.abs() < 1e-15);
        let l = query_alignment_loss(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]])).unwrap().loss;
        assert!((l - 2.0).abs() < 1e-15);
        let l = query_alignment_loss(&m(&[&[-1.0, 0.0]]), &m(&[&[1.0, 0.0]])).unwrap().loss;
        assert!((l - 3.0).abs() < 1e-15);
        assert!(query_alignment_loss(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, 0.0]])).is_err());
    }

    #[test]
    fn temperature_must_be_positive() {
        let dims = MatryoshkaDims::new(vec![2]).unwrap();
        let mut cfg = LossConfig::retrieval(dims);
        cfg.temperature = 0.0;
        let i2 = Matrix::identity(2);
        assert!(mrl_loss(&i2, &i2, &cfg).is_err());
    }
}
