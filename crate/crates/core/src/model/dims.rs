use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::normalize_in_place;

/// Strictly increasing set of nested embedding prefix sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MatryoshkaDims(Vec<usize>);

impl MatryoshkaDims {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("Matryoshka dimension set is empty"));
        }
        if dims[0] == 0 {
            return Err(Error::invalid("Matryoshka dimensions must be positive"));
        }
        if dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "Matryoshka dimensions must be strictly increasing, got {dims:?}"
            )));
        }
        Ok(Self(dims))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("nonempty by construction")
    }

    pub fn min(&self) -> usize {
        self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, d: usize) -> bool {
        self.0.binary_search(&d).is_ok()
    }

    pub fn check(&self, d: usize) -> Result<()> {
        if self.contains(d) {
            Ok(())
        } else {
            Err(Error::UnconfiguredDim {
                dim: d,
                configured: self.0.clone(),
            })
        }
    }

    /// True when every dimension of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &MatryoshkaDims) -> bool {
        self.iter().all(|d| other.contains(d))
    }
}

impl TryFrom<Vec<usize>> for MatryoshkaDims {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MatryoshkaDims> for Vec<usize> {
    fn from(d: MatryoshkaDims) -> Self {
        d.0
    }
}

/// First `d` coordinates of `e`, re-normalized to unit length when
/// `renormalize` is set.
pub fn slice_prefix(e: &[f64], d: usize, dims: &MatryoshkaDims, renormalize: bool) -> Result<Vec<f64>> {
    dims.check(d)?;
    if d > e.len() {
        return Err(Error::shape(
            "slice_prefix",
            format!("prefix {d} of a vector of length {}", e.len()),
        ));
    }
    let mut v = e[..d].to_vec();
    if renormalize {
        normalize_in_place(&mut v);
    }
    Ok(v)
}
