//! Probability vectors, the numerically safe softmax, and KL divergence.
//!
//! Every model output in this crate is a [`ProbVector`]: a point on the
//! `m`-class probability simplex. The watermarked output transform in
//! [`crate::watermark`] is proven to map simplex points to simplex points,
//! so the invariant is checked at construction and then relied upon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Components must sum to 1 within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Floating-point slack allowed on the `[0, 1]` component bounds.
const COMPONENT_SLACK: f64 = 1e-12;

/// Probabilities are clamped to this floor before any logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// A point on the probability simplex: components in `[0, 1]` summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    /// Builds a probability vector, checking the simplex invariant.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::validate(&values)?;
        Ok(Self { values })
    }

    /// Builds without validating. Reserved for code paths whose output is
    /// proven to satisfy the invariant; debug builds still check.
    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(Self::validate(&values).is_ok(), "simplex invariant broken");
        Self { values }
    }

    fn validate(values: &[f64]) -> Result<()> {
        if values.is_empty() {
            return Err(Error::InvalidInput("probability vector is empty".into()));
        }
        let mut sum = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(-COMPONENT_SLACK..=1.0 + COMPONENT_SLACK).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "probability component {i} = {v} outside [0, 1]"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probability components sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Component slice.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of classes `m`.
    pub fn class_count(&self) -> usize {
        self.values.len()
    }

    /// Component for one class. Panics if `class` is out of range.
    pub fn get(&self, class: usize) -> f64 {
        self.values[class]
    }

    /// Index of the largest component; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Consumes the vector, returning its components.
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Softmax of a logit vector, computed with max-subtraction so large logits
/// cannot overflow: `q_i = exp(z_i - max) / Σ_j exp(z_j - max)`.
///
/// Requires at least two classes and finite logits.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "softmax needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    let mut max = f64::NEG_INFINITY;
    for (i, &z) in logits.iter().enumerate() {
        if !z.is_finite() {
            return Err(Error::InvalidInput(format!("logit {i} = {z} is not finite")));
        }
        if z > max {
            max = z;
        }
    }
    let mut values: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = values.iter().sum();
    for v in &mut values {
        *v /= sum;
    }
    Ok(ProbVector::new_unchecked(values))
}

/// KL divergence `KL(target ‖ model) = Σ_i t_i · ln(t_i / s_i)`.
///
/// Zero target components contribute zero (`0 · ln 0 = 0`); model
/// components are clamped at [`LOG_FLOOR`] before the logarithm.
pub fn kl_divergence(target: &ProbVector, model: &ProbVector) -> Result<f64> {
    if target.class_count() != model.class_count() {
        return Err(Error::DimensionMismatch {
            expected: target.class_count(),
            got: model.class_count(),
        });
    }
    let mut total = 0.0;
    for (&t, &s) in target.values().iter().zip(model.values()) {
        if t > 0.0 {
            total += t * (t.ln() - s.max(LOG_FLOOR).ln());
        }
    }
    Ok(total)
}
