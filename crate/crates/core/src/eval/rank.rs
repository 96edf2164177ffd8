//! Cumulative energy ratio of embedding covariance spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sym_eigenvalues, Matrix};

/// Tolerance when comparing a cumulative ratio against a requested ratio.
pub const ENERGY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    Queries,
    Documents,
    Pooled,
}

impl EmbeddingSource {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingSource::Queries => "queries",
            EmbeddingSource::Documents => "documents",
            EmbeddingSource::Pooled => "pooled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCurve {
    pub dim: usize,
    /// `ratios[k - 1]` is R(k).
    pub ratios: Vec<f64>,
    pub source: EmbeddingSource,
}

impl EnergyCurve {
    /// R(k) for `k` in `1..=dim`.
    pub fn r(&self, k: usize) -> f64 {
        self.ratios[k - 1]
    }
}

/// Energy curve of the first `dim` columns of `embeddings`: eigenvalues of
/// the covariance `XᵀX / (n - 1)`, with rows mean-centered when `center`.
pub fn energy_curve(embeddings: &Matrix, dim: usize, center: bool, source: EmbeddingSource) -> Result<EnergyCurve> {
    if dim == 0 || dim > embeddings.cols() {
        return Err(Error::invalid(format!("dim {dim} outside 1..={}", embeddings.cols())));
    }
    let n = embeddings.rows();
    if n < dim + 1 {
        return Err(Error::invalid(format!("energy curve at dim {dim} needs at least {} rows, got {n}", dim + 1)));
    }
    let mut x = embeddings.prefix_cols(dim)?;
    if center {
        let mut mean = vec![0.0; dim];
        for r in x.row_iter() {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for r in 0..n {
            x.row_mut(r).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        }
    }
    let mut cov = x.t_matmul(&x)?;
    cov.scale(1.0 / (n - 1) as f64);
    let spectrum = sym_eigenvalues(&cov)?;
    let scale = spectrum.values().first().copied().unwrap_or(0.0).abs().max(1.0);
    let mut values = Vec::with_capacity(dim);
    for &v in spectrum.values() {
        if v < -ENERGY_TOLERANCE * scale {
            return Err(Error::invalid(format!("covariance has negative eigenvalue {v}")));
        }
        values.push(v.max(0.0));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("embeddings have zero variance"));
    }
    let mut acc = 0.0;
    let mut ratios: Vec<f64> = values
        .iter()
        .map(|v| {
            acc += v;
            (acc / total).min(1.0)
        })
        .collect();
    // the running sum can land an ulp away from the total
    ratios[dim - 1] = 1.0;
    Ok(EnergyCurve { dim, ratios, source })
}

/// Smallest `k / dim` whose cumulative ratio reaches `ratio` (within
/// `ENERGY_TOLERANCE`).
pub fn dims_for_energy(curve: &EnergyCurve, ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("ratio must be in (0, 1], got {ratio}")));
    }
    let k = curve
        .ratios
        .iter()
        .position(|&r| r >= ratio - ENERGY_TOLERANCE)
        .map(|i| i + 1)
        .unwrap_or(curve.dim);
    Ok(k as f64 / curve.dim as f64)
}
