use crate::error::{Error, Result};

use super::params::{Gradients, Params};

/// Compares analytic gradients of `f` against central differences.
///
/// Returns the maximum over every parameter entry of
/// `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn grad_check<F>(mut f: F, params: &Params, eps: f64) -> Result<f64>
where
    F: FnMut(&Params) -> Result<(f64, Gradients)>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("grad_check eps {eps} outside (0, 1e-2]")));
    }
    let (base, analytic) = f(params)?;
    if !base.is_finite() {
        return Err(Error::invalid("grad_check: non-finite loss at base point"));
    }
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let n = params.require(name)?.data().len();
        let grad = analytic.get(name).ok_or_else(|| {
            Error::invalid(format!("grad_check: no analytic gradient for `{name}`"))
        })?;
        if grad.data().len() != n {
            return Err(Error::shape(
                "grad_check",
                format!("gradient for `{name}` has {} entries, parameter {n}", grad.data().len()),
            ));
        }
        for i in 0..n {
            let orig = params.require(name)?.data()[i];
            set(&mut probe, name, i, orig + eps);
            let plus = f(&probe)?.0;
            set(&mut probe, name, i, orig - eps);
            let minus = f(&probe)?.0;
            set(&mut probe, name, i, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::invalid(format!(
                    "grad_check: non-finite loss perturbing `{name}`[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[i] - numeric).abs() / (numeric.abs() + 1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn set(p: &mut Params, name: &str, i: usize, v: f64) {
    if let Some(m) = p.get_mut(name) {
        m.data_mut()[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    #[test]
    fn square_function() {
        let mut p = Params::new();
        p.insert("x", Matrix::row_vector(&[3.0]));
        let err = grad_check(
            |p| {
                let x = p.require("x")?.data()[0];
                let mut g = Params::new();
                g.insert("x", Matrix::row_vector(&[2.0 * x]));
                Ok((x * x, g))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut p = Params::new();
        p.insert("x", Matrix::row_vector(&[3.0]));
        let err = grad_check(
            |p| {
                let x = p.require("x")?.data()[0];
                let mut g = Params::new();
                g.insert("x", Matrix::row_vector(&[x]));
                Ok((x * x, g))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        let mut p = Params::new();
        p.insert("x", Matrix::row_vector(&[0.0]));
        let f = |p: &Params| {
            let x = p.require("x")?.data()[0];
            let mut g = Params::new();
            g.insert("x", Matrix::row_vector(&[1.0]));
            Ok((if x == 0.0 { 0.0 } else { f64::NAN }, g))
        };
        assert!(grad_check(f, &p, 0.5).is_err());
        assert!(grad_check(f, &p, 1e-4).is_err());
    }
}
