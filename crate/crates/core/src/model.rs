use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression coefficients followed by the intercept, `[beta; q]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn zeros(n_features: usize) -> Self {
        ModelVector(vec![0.0; n_features + 1])
    }

    pub fn from_parts(coeffs: &[f64], intercept: f64) -> Self {
        let mut v = coeffs.to_vec();
        v.push(intercept);
        ModelVector(v)
    }

    /// Wraps a full `[beta; q]` vector. It must hold at least the intercept.
    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::config("model vector needs at least an intercept"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("model vector has non-finite entries"));
        }
        Ok(ModelVector(v))
    }

    pub fn n_features(&self) -> usize {
        self.0.len() - 1
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn intercept(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dist_sq(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl AsRef<[f64]> for ModelVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}
