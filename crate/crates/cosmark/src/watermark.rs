//! Watermark keys and the cosine-signal output transform.
//!
//! A watermark is defined by a key `K = (i*, f_w, v)`: a target class, an
//! angular frequency, and a unit projection vector. The signal value for an
//! input `x` is `cos(f_w · vᵀx)` on the target class and its exact negation
//! on every other class. The modified softmax blends that signal into a
//! model's probability output so the result is still a probability vector:
//!
//! ```text
//! q̂_i = (q_i + ε (1 + a_i))            / (1 + 2ε)   for i = i*
//! q̂_i = (q_i + ε (1 + a_i) / (m − 1))  / (1 + 2ε)   otherwise
//! ```
//!
//! Training against the modified output uses the cross-entropy of `q̂`, whose
//! gradient with respect to the logits factors through the softmax Jacobian
//! because `q̂` is affine in `q`.

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{softmax, ProbVector, LOG_FLOOR};

/// Default upper cap on the signal amplitude ε. Beyond this the perturbation
/// dominates the output and classification accuracy collapses.
pub const DEFAULT_EPSILON_CAP: f64 = 0.5;

/// Unit-norm tolerance for projection vectors.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// A watermark key: target class `i*`, angular frequency `f_w` (radians per
/// unit of projection value), and a unit projection vector `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkKey {
    /// Class index carrying the positive-phase signal.
    pub target_class: usize,
    /// Angular frequency of the cosine along the projection axis.
    pub frequency: f64,
    /// Unit vector defining the projection `p(x) = vᵀx`.
    pub projection: Vec<f64>,
}

impl WatermarkKey {
    /// Builds a key after checking the invariants.
    pub fn new(target_class: usize, frequency: f64, projection: Vec<f64>) -> Result<Self> {
        let key = Self { target_class, frequency, projection };
        key.validate()?;
        Ok(key)
    }

    /// Draws a key whose projection vector is uniform on the unit sphere
    /// (normalized isotropic Gaussian sample).
    pub fn sample<R: Rng>(target_class: usize, frequency: f64, dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("projection dimension must be positive".into()));
        }
        let mut projection = vec![0.0; dim];
        loop {
            for v in &mut projection {
                *v = rng.sample(StandardNormal);
            }
            let norm = projection.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for v in &mut projection {
                    *v /= norm;
                }
                break;
            }
            // A zero draw has probability zero; resample if it ever happens.
        }
        Self::new(target_class, frequency, projection)
    }

    /// Checks the key invariants: positive finite frequency and a unit-norm,
    /// finite projection vector.
    pub fn validate(&self) -> Result<()> {
        if !self.frequency.is_finite() || self.frequency <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "watermark frequency must be positive and finite, got {}",
                self.frequency
            )));
        }
        if self.projection.is_empty() {
            return Err(Error::InvalidInput("projection vector is empty".into()));
        }
        if self.projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("projection vector has non-finite components".into()));
        }
        let norm = self.projection.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "projection vector norm {norm} deviates from 1 beyond {NORM_TOLERANCE}"
            )));
        }
        Ok(())
    }

    /// Dimension of the projection vector.
    pub fn dim(&self) -> usize {
        self.projection.len()
    }
}

/// A key plus the signal amplitude ε applied at training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub key: WatermarkKey,
    /// Signal amplitude, `0 ≤ ε ≤ cap`.
    pub epsilon: f64,
}

impl WatermarkConfig {
    /// Builds a config enforcing the default amplitude cap of
    /// [`DEFAULT_EPSILON_CAP`].
    pub fn new(key: WatermarkKey, epsilon: f64) -> Result<Self> {
        Self::with_cap(key, epsilon, DEFAULT_EPSILON_CAP)
    }

    /// Builds a config with an explicit amplitude cap.
    pub fn with_cap(key: WatermarkKey, epsilon: f64, cap: f64) -> Result<Self> {
        key.validate()?;
        if !epsilon.is_finite() || epsilon < 0.0 || epsilon > cap {
            return Err(Error::InvalidInput(format!(
                "watermark amplitude {epsilon} outside [0, {cap}]"
            )));
        }
        Ok(Self { key, epsilon })
    }
}

/// Projection value `p(x) = vᵀx`.
pub fn project(x: &[f64], key: &WatermarkKey) -> Result<f64> {
    if x.len() != key.projection.len() {
        return Err(Error::DimensionMismatch { expected: key.projection.len(), got: x.len() });
    }
    Ok(x.iter().zip(&key.projection).map(|(a, b)| a * b).sum())
}

/// Signal value for a precomputed projection: `cos(f_w · p)` on the target
/// class, and its exact negation elsewhere. Evaluating one cosine and
/// negating it keeps `a_{i*} + a_{j≠i*} = 0` exact, which the simplex proof
/// of the modified softmax relies on.
pub fn signal_at(projection: f64, class: usize, key: &WatermarkKey) -> f64 {
    let c = (key.frequency * projection).cos();
    if class == key.target_class {
        c
    } else {
        -c
    }
}

/// Signal value `a_class(x)` in `[-1, 1]`.
pub fn signal(x: &[f64], class: usize, cfg: &WatermarkConfig) -> Result<f64> {
    let p = project(x, &cfg.key)?;
    Ok(signal_at(p, class, &cfg.key))
}

/// The watermarked output transform. Maps a probability vector to a
/// probability vector (components in `[0, 1]`, summing to 1). With `ε = 0`
/// the input is returned bit-identically via the passthrough branch.
pub fn modified_softmax(q: &ProbVector, x: &[f64], cfg: &WatermarkConfig) -> Result<ProbVector> {
    let m = q.class_count();
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 classes, got {m}")));
    }
    if cfg.key.target_class >= m {
        return Err(Error::InvalidInput(format!(
            "target class {} out of range for {m} classes",
            cfg.key.target_class
        )));
    }
    if cfg.epsilon == 0.0 {
        return Ok(q.clone());
    }
    let p = project(x, &cfg.key)?;
    let a_target = (cfg.key.frequency * p).cos();
    let eps = cfg.epsilon;
    let denom = 1.0 + 2.0 * eps;
    let share = (m - 1) as f64;
    let values = q
        .values()
        .iter()
        .enumerate()
        .map(|(i, &qi)| {
            let bump = if i == cfg.key.target_class {
                eps * (1.0 + a_target)
            } else {
                // 1 + a_j with a_j = -a_target: the exact negation branch.
                eps * (1.0 - a_target) / share
            };
            // The result is in [0, 1] mathematically; the clamp only guards
            // against last-ulp rounding overshoot.
            ((qi + bump) / denom).clamp(0.0, 1.0)
        })
        .collect();
    Ok(ProbVector::new_unchecked(values))
}

/// Cross-entropy of the watermarked output against a class label:
/// `-ln(q̂_label)`, with `q̂` clamped at [`LOG_FLOOR`] before the logarithm.
pub fn watermarked_cross_entropy(
    q: &ProbVector,
    x: &[f64],
    label: usize,
    cfg: &WatermarkConfig,
) -> Result<f64> {
    if label >= q.class_count() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            q.class_count()
        )));
    }
    let qh = modified_softmax(q, x, cfg)?;
    Ok(-qh.get(label).max(LOG_FLOOR).ln())
}

/// Analytic gradient of [`watermarked_cross_entropy`] with respect to the
/// logits. Because `q̂` is affine in `q` with coefficients independent of the
/// logits, the chain rule factors through the softmax Jacobian:
///
/// ```text
/// ∂L/∂z_k = q_label / (q̂_label · (1 + 2ε)) · (q_k − δ_{k,label})
/// ```
///
/// With `ε = 0` this is exactly the classic softmax cross-entropy gradient
/// `q − y`. In the clamped region (`q̂_label ≤ LOG_FLOOR`) the loss is
/// constant, so the gradient is zero.
pub fn grad_watermarked_cross_entropy(
    logits: &[f64],
    x: &[f64],
    label: usize,
    cfg: &WatermarkConfig,
) -> Result<Vec<f64>> {
    let q = softmax(logits)?;
    if label >= q.class_count() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            q.class_count()
        )));
    }
    let qh = modified_softmax(&q, x, cfg)?;
    let qh_label = qh.get(label);
    if qh_label <= LOG_FLOOR {
        return Ok(vec![0.0; q.class_count()]);
    }
    let scale = q.get(label) / (qh_label * (1.0 + 2.0 * cfg.epsilon));
    Ok(q
        .values()
        .iter()
        .enumerate()
        .map(|(k, &qk)| {
            let indicator = if k == label { 1.0 } else { 0.0 };
            scale * (qk - indicator)
        })
        .collect())
}
