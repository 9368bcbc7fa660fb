//! Dense parameter-space algebra.
//!
//! Every model, update, gradient and aggregate in the simulator is a flat
//! [`ParamVector`]. Reductions run sequentially in index order so results are
//! bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`ParamVector::cos_sim`].
pub const ZERO_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |acc, (a, b)| acc + a * b))
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, a| acc + a * a)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Cosine similarity, or `-1` when either vector is (numerically) zero so
    /// that vanishing updates never pass a direction test.
    pub fn cos_sim(&self, other: &ParamVector) -> Result<f64> {
        let dot = self.dot(other)?;
        let (na, nb) = (self.norm(), other.norm());
        if na < ZERO_NORM_TOL || nb < ZERO_NORM_TOL {
            return Ok(-1.0);
        }
        Ok((dot / (na * nb)).clamp(-1.0, 1.0))
    }

    /// `min(1, tau/‖a‖)·a`. Vectors already inside the ball are returned
    /// unchanged, which makes the operation exactly idempotent.
    pub fn clip_norm(&self, tau: f64) -> Result<ParamVector> {
        if !(tau > 0.0) {
            return Err(Error::config("tau", format!("must be > 0, got {tau}")));
        }
        let norm = self.norm();
        if norm <= tau {
            return Ok(self.clone());
        }
        let scale = tau / norm;
        let mut out = ParamVector(self.0.iter().map(|v| v * scale).collect());
        // Rounding can leave the result a hair above tau; shrink until it is not.
        let mut shrink = scale;
        while out.norm() > tau {
            shrink *= 1.0 - f64::EPSILON;
            out = ParamVector(self.0.iter().map(|v| v * shrink).collect());
        }
        Ok(out)
    }

    /// `alpha·x + y`.
    pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
        x.check_len(y)?;
        Ok(ParamVector(
            x.0.iter().zip(&y.0).map(|(a, b)| alpha * a + b).collect(),
        ))
    }

    /// In-place `self += alpha·x`.
    pub fn add_scaled(&mut self, alpha: f64, x: &ParamVector) -> Result<()> {
        self.check_len(x)?;
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, alpha: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b))
            .sqrt())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}
