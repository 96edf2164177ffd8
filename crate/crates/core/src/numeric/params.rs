use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Named parameter matrices, ordered by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Params(BTreeMap<String, Matrix>);

/// Gradients keyed by the name of the parameter they belong to.
pub type Gradients = Params;

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Matrix) -> Option<Matrix> {
        self.0.insert(name.into(), m)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.0.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.0
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Matrix> {
        self.0.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.0.values().map(|m| m.data().len()).sum()
    }

    /// Adds `g` into the entry `name`, creating a zero entry first if needed.
    pub fn accumulate(&mut self, name: &str, g: &Matrix) -> Result<()> {
        match self.0.get_mut(name) {
            Some(acc) => acc.add_assign(g),
            None => {
                self.0.insert(name.to_string(), g.clone());
                Ok(())
            }
        }
    }

    /// Merges every entry of `other` into `self`.
    pub fn merge(&mut self, other: &Params) -> Result<()> {
        for (k, v) in other.iter() {
            self.accumulate(k, v)?;
        }
        Ok(())
    }

    /// Keeps only entries whose name satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Params {
        Params(
            self.0
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    /// Little-endian bytes of every parameter in name order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (k, v) in &self.0 {
            out.extend_from_slice(k.as_bytes());
            for x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }
}

impl FromIterator<(String, Matrix)> for Params {
    fn from_iter<I: IntoIterator<Item = (String, Matrix)>>(iter: I) -> Self {
        Params(iter.into_iter().collect())
    }
}
