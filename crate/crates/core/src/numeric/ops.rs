use crate::error::{Error, Result};

use super::matrix::{dot, Matrix};

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if let Some(row) = m.first_non_finite_row() {
        return Err(Error::NonFinite {
            context: "softmax_rows input",
            row,
        });
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Result of [`l2_normalize_rows`]: the normalized matrix plus the indices of
/// rows that were entirely zero and therefore left as zero rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub matrix: Matrix,
    pub zero_rows: Vec<usize>,
}

pub fn l2_normalize_rows(m: &Matrix) -> Normalized {
    let mut matrix = m.clone();
    let mut zero_rows = Vec::new();
    for r in 0..matrix.rows() {
        let row = matrix.row_mut(r);
        let n = dot(row, row).sqrt();
        if n == 0.0 {
            zero_rows.push(r);
            continue;
        }
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Normalized { matrix, zero_rows }
}

/// Normalizes a single vector in place; returns `false` for a zero vector.
pub fn normalize_in_place(v: &mut [f64]) -> bool {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    true
}

/// `out[i][j] = <q_i, d_j>`.
pub fn similarity_matrix(q: &Matrix, d: &Matrix) -> Result<Matrix> {
    if q.cols() != d.cols() {
        return Err(Error::shape(
            "similarity_matrix",
            format!("query width {} vs document width {}", q.cols(), d.cols()),
        ));
    }
    q.matmul_t(d)
}
