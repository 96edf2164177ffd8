use crate::error::{Error, Result};
use crate::numeric::{dot, softmax_in_place, Matrix};

/// `softmax(q·xᵀ / √d) · x` for a `(s × d)` sequence and a `1 × d` query.
pub fn attention_pool(x: &Matrix, q: &[f64]) -> Result<Vec<f64>> {
    let (s, d) = x.shape();
    if s == 0 {
        return Err(Error::invalid("attention pooling over an empty sequence"));
    }
    if q.len() != d {
        return Err(Error::shape(
            "attention_pool",
            format!("query width {} vs sequence width {d}", q.len()),
        ));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut w: Vec<f64> = x.row_iter().map(|r| dot(q, r) * scale).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "attention_pool scores",
            row: 0,
        });
    }
    softmax_in_place(&mut w);
    let mut out = vec![0.0; d];
    for (wi, row) in w.iter().zip(x.row_iter()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += wi * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_rows_pool_to_that_row() {
        let x = Matrix::from_rows(&[[0.3, -1.0], [0.3, -1.0], [0.3, -1.0]]).unwrap();
        let p = attention_pool(&x, &[5.0, 2.0]).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_query_is_mean() {
        let x = Matrix::from_rows(&[[0.0, 2.0], [0.0, 0.0]]).unwrap();
        assert_eq!(attention_pool(&x, &[0.0, 0.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn two_way_softmax_by_hand() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let p = attention_pool(&x, &[10.0, 0.0]).unwrap();
        // scores ±10/√2, so the first weight is σ(20/√2)
        let w1 = 1.0 / (1.0 + (-20.0 / 2f64.sqrt()).exp());
        assert!((p[0] - (2.0 * w1 - 1.0)).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(attention_pool(&Matrix::zeros(0, 2), &[0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn output_in_convex_hull(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..8),
            q in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let x = Matrix::from_rows(&rows).unwrap();
            let p = attention_pool(&x, &q).unwrap();
            for c in 0..4 {
                let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p[c] >= lo - 1e-12 && p[c] <= hi + 1e-12);
            }
        }
    }
}
