use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::Matrix;

const SYMMETRY_TOL: f64 = 1e-9;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix, sorted in descending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    values: Vec<f64>,
}

impl EigenSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps over every off-diagonal pair until the off-diagonal Frobenius norm
/// drops below `1e-12` times the matrix norm, with at most 100 sweeps.
pub fn sym_eigenvalues(cov: &Matrix) -> Result<EigenSpectrum> {
    let n = cov.rows();
    if cov.cols() != n {
        return Err(Error::shape(
            "sym_eigenvalues",
            format!("matrix is {}x{}, expected square", n, cov.cols()),
        ));
    }
    if let Some(row) = cov.first_non_finite_row() {
        return Err(Error::NonFinite {
            context: "sym_eigenvalues input",
            row,
        });
    }
    for i in 0..n {
        for j in i + 1..n {
            let diff = (cov.get(i, j) - cov.get(j, i)).abs();
            if diff > SYMMETRY_TOL {
                return Err(Error::NotSymmetric { i, j, diff });
            }
        }
    }

    // Work on the symmetrized copy so rounding asymmetry cannot accumulate.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (cov.get(i, j) + cov.get(j, i));
        }
    }
    let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a, n);
        if off <= OFF_DIAGONAL_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, n, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a, n) > OFF_DIAGONAL_TOL * scale {
        return Err(Error::invalid(format!(
            "Jacobi iteration did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let mut values: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(EigenSpectrum { values })
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Annihilates `a[p][q]` with a Givens rotation applied on both sides.
fn rotate(a: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = c * akp - s * akq;
        a[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = c * apk - s * aqk;
        a[q * n + k] = s * apk + c * aqk;
    }
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spectrum(rows: &[&[f64]]) -> Vec<f64> {
        sym_eigenvalues(&Matrix::from_rows(rows).unwrap())
            .unwrap()
            .values
    }

    #[test]
    fn two_by_two_examples() {
        assert_eq!(spectrum(&[&[2.0, 0.0], &[0.0, 1.0]]), vec![2.0, 1.0]);
        let v = spectrum(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] + 1.0).abs() < 1e-12);
        let v = spectrum(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert!((v[0] - 3.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_non_square() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.1, 1.0]]).unwrap();
        assert!(matches!(sym_eigenvalues(&m), Err(Error::NotSymmetric { .. })));
        assert!(sym_eigenvalues(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn empty_and_scalar() {
        assert!(sym_eigenvalues(&Matrix::zeros(0, 0)).unwrap().is_empty());
        assert_eq!(spectrum(&[&[-4.0]]), vec![-4.0]);
    }

    proptest! {
        #[test]
        fn trace_preserved_and_sorted(n in 1usize..12, seed in prop::collection::vec(-3.0f64..3.0, 144)) {
            let mut m = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = seed[i * 12 + j];
                    m.set(i, j, v);
                    m.set(j, i, v);
                }
            }
            let s = sym_eigenvalues(&m).unwrap();
            let tr = m.trace();
            prop_assert!((s.sum() - tr).abs() <= 1e-8 * tr.abs().max(1.0));
            prop_assert!(s.values().windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(s.len(), n);
        }
    }
}
