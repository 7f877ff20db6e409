//! Dataset curation and key drawing for desk-scale experiments.
//!
//! Distilled sine-feature students at desk scale are sensitive to two kinds
//! of bad luck that paper-scale models shrug off: blob layouts where two
//! class centers nearly coincide (the overlap zone injects broadband power
//! into the target-class output), and projection directions with a short
//! data range (which push the embedded frequency up and shrink the set of
//! hidden units able to align with it). Both are screened out here by
//! deterministic rejection rules so that experiment outcomes stay a pure
//! function of the config and master seed.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cosmark::datagen::{make_blobs, split, BlobParams, Dataset};
use cosmark::spectrum::quantile;
use cosmark::watermark::project;
use cosmark::WatermarkKey;

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// Shape and curation parameters for experiment datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Number of classes.
    pub classes: usize,
    /// Feature dimension. Desk-scale distillation relies on sine-feature
    /// students, whose hidden units align with a random projection easily
    /// only in low dimension — keep this at 3 unless students are retuned.
    pub dims: usize,
    /// Examples per class.
    pub per_class: usize,
    /// Gaussian spread of each blob.
    pub spread: f64,
    /// Minimum pairwise distance between empirical class centers; layouts
    /// below it are regenerated from a derived seed.
    pub min_center_separation: f64,
    /// Upper bound on layout regeneration attempts.
    pub max_layout_attempts: u32,
    /// Fractions for the teacher/student/test split (must sum to 1).
    pub split: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            dims: 3,
            per_class: 2000,
            spread: 0.04,
            min_center_separation: 0.3,
            max_layout_attempts: 64,
            split: (0.4, 0.5, 0.1),
        }
    }
}

impl DataConfig {
    /// Validates field ranges.
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("data.classes must be at least 2".into()));
        }
        if self.dims == 0 {
            return Err(Error::Config("data.dims must be positive".into()));
        }
        if self.per_class == 0 {
            return Err(Error::Config("data.per_class must be positive".into()));
        }
        if !(self.spread.is_finite() && self.spread > 0.0) {
            return Err(Error::Config("data.spread must be positive and finite".into()));
        }
        if !(self.min_center_separation.is_finite() && self.min_center_separation >= 0.0) {
            return Err(Error::Config(
                "data.min_center_separation must be nonnegative and finite".into(),
            ));
        }
        if self.max_layout_attempts == 0 {
            return Err(Error::Config("data.max_layout_attempts must be positive".into()));
        }
        let (a, b, c) = self.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0 && (a + b + c - 1.0).abs() < 1e-9) {
            return Err(Error::Config(
                "data.split fractions must be positive and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

/// A curated dataset with its provenance and the teacher/student/test split.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    /// Full generated dataset.
    pub full: Dataset,
    /// Teacher-training split.
    pub teacher: Dataset,
    /// Distillation (transfer) split.
    pub student: Dataset,
    /// Held-out accuracy split.
    pub test: Dataset,
    /// Seed that produced the accepted layout.
    pub data_seed: u64,
    /// Number of rejected layouts before acceptance.
    pub layout_attempts: u32,
    /// Empirical class centers of the full dataset.
    pub centers: Vec<Vec<f64>>,
    /// Classes ordered most-isolated first.
    pub isolation_order: Vec<usize>,
}

/// Empirical per-class mean of the features.
pub fn class_centers(data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("class centers need labeled data".into()))?;
    let mut sums = vec![vec![0.0; data.dim()]; data.class_count];
    let mut counts = vec![0usize; data.class_count];
    for (x, &c) in data.features.iter().zip(labels) {
        for (s, v) in sums[c].iter_mut().zip(x) {
            *s += v;
        }
        counts[c] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= c.max(1) as f64;
        }
    }
    Ok(sums)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest pairwise distance between class centers.
pub fn min_center_distance(centers: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            best = best.min(euclidean(&centers[i], &centers[j]));
        }
    }
    best
}

/// Classes sorted by distance to their nearest other center, most isolated
/// first; ties fall back to class index for determinism.
pub fn isolation_order(centers: &[Vec<f64>]) -> Vec<usize> {
    let mut iso: Vec<(usize, f64)> = (0..centers.len())
        .map(|i| {
            let nearest = (0..centers.len())
                .filter(|&j| j != i)
                .map(|j| euclidean(&centers[i], &centers[j]))
                .fold(f64::INFINITY, f64::min);
            (i, nearest)
        })
        .collect();
    iso.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("distances are finite").then(a.0.cmp(&b.0)));
    iso.into_iter().map(|(i, _)| i).collect()
}

/// Generates, screens, and splits an experiment dataset.
///
/// Layouts are drawn from seeds derived off the master seed until the class
/// centers are pairwise separated by at least `min_center_separation`; the
/// accepted seed and the attempt count are recorded in the result.
pub fn build_experiment_data(config: &DataConfig, master_seed: u64) -> Result<ExperimentData> {
    config.validate()?;
    for attempt in 0..config.max_layout_attempts {
        let data_seed = derive_seed(master_seed, "blob-layout", u64::from(attempt));
        let full = make_blobs(&BlobParams {
            classes: config.classes,
            dims: config.dims,
            per_class: config.per_class,
            spread: config.spread,
            seed: data_seed,
        })?;
        let centers = class_centers(&full)?;
        if min_center_distance(&centers) < config.min_center_separation {
            continue;
        }
        let split_seed = derive_seed(master_seed, "split", 0);
        let (teacher, student, test) = split(&full, config.split, split_seed)?;
        let order = isolation_order(&centers);
        return Ok(ExperimentData {
            full,
            teacher,
            student,
            test,
            data_seed,
            layout_attempts: attempt,
            centers,
            isolation_order: order,
        });
    }
    Err(Error::LayoutRejected {
        min_separation: config.min_center_separation,
        attempts: config.max_layout_attempts,
    })
}

/// How each experiment key picks its embedded frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyPolicy {
    /// Rescale to the data: place `periods` full cycles across the central
    /// 95% of the projection-value range.
    Auto { periods: f64 },
    /// Use this angular frequency as given.
    Fixed { frequency: f64 },
}

impl FrequencyPolicy {
    /// Validates field ranges.
    pub fn validate(&self) -> Result<()> {
        match *self {
            FrequencyPolicy::Auto { periods } => {
                if !(periods.is_finite() && periods > 0.0) {
                    return Err(Error::Config("frequency periods must be positive".into()));
                }
            }
            FrequencyPolicy::Fixed { frequency } => {
                if !(frequency.is_finite() && frequency > 0.0) {
                    return Err(Error::Config("fixed frequency must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Human-readable statement of the rescaling rule, recorded in reports.
    pub fn rule_note(&self) -> String {
        match *self {
            FrequencyPolicy::Auto { periods } => format!(
                "frequency set so that >= {periods} signal periods span the central 95% \
                 projection range"
            ),
            FrequencyPolicy::Fixed { frequency } => {
                format!("frequency fixed at {frequency} (no rescaling)")
            }
        }
    }
}

/// Screening rules for drawing experiment keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPolicy {
    /// Frequency selection rule.
    pub frequency: FrequencyPolicy,
    /// Maximum |v·v′| against previously drawn keys; low-dimensional unit
    /// vectors collide easily, and a near-parallel "independent" key reads
    /// the true signal.
    pub max_projection_dot: f64,
    /// Minimum central-95% projection range of the data along the drawn
    /// direction. Short ranges force high frequencies that desk-scale
    /// students cannot align with. Ignored under a fixed frequency.
    pub min_projection_range: f64,
    /// Upper bound on rejection-sampling attempts per key.
    pub max_attempts: u32,
}

impl Default for KeyPolicy {
    fn default() -> Self {
        Self {
            frequency: FrequencyPolicy::Auto { periods: 6.0 },
            max_projection_dot: 0.5,
            min_projection_range: 0.72,
            max_attempts: 1000,
        }
    }
}

impl KeyPolicy {
    /// Validates field ranges.
    pub fn validate(&self) -> Result<()> {
        self.frequency.validate()?;
        if !(self.max_projection_dot > 0.0 && self.max_projection_dot <= 1.0) {
            return Err(Error::Config("keys.max_projection_dot must be in (0, 1]".into()));
        }
        if !(self.min_projection_range.is_finite() && self.min_projection_range >= 0.0) {
            return Err(Error::Config(
                "keys.min_projection_range must be nonnegative and finite".into(),
            ));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("keys.max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Central-95% spread of the data projected on a unit direction.
pub fn projection_range(features: &[Vec<f64>], projection: &[f64]) -> Result<f64> {
    let stub = WatermarkKey::new(0, 1.0, projection.to_vec())?;
    let values: Vec<f64> =
        features.iter().map(|x| project(x, &stub)).collect::<cosmark::Result<_>>()?;
    Ok(quantile(&values, 0.975)? - quantile(&values, 0.025)?)
}

/// Draws one screened key: separated from `existing` projections, with an
/// adequate projection range, and the frequency resolved per policy.
pub fn draw_key(
    policy: &KeyPolicy,
    features: &[Vec<f64>],
    existing: &[WatermarkKey],
    target_class: usize,
    dims: usize,
    rng: &mut ChaCha8Rng,
) -> Result<WatermarkKey> {
    policy.validate()?;
    for _ in 0..policy.max_attempts {
        let proto = WatermarkKey::sample(target_class, 1.0, dims, rng)?;
        let clash = existing.iter().any(|k| {
            let dot: f64 = k.projection.iter().zip(&proto.projection).map(|(a, b)| a * b).sum();
            dot.abs() > policy.max_projection_dot
        });
        if clash {
            continue;
        }
        let frequency = match policy.frequency {
            FrequencyPolicy::Fixed { frequency } => frequency,
            FrequencyPolicy::Auto { periods } => {
                let range = projection_range(features, &proto.projection)?;
                if range < policy.min_projection_range {
                    continue;
                }
                2.0 * std::f64::consts::PI * periods / range
            }
        };
        return Ok(WatermarkKey::new(target_class, frequency, proto.projection)?);
    }
    Err(Error::Config(format!(
        "no key satisfying the screening rules in {} attempts (dims = {dims}; \
         the separation/range screens may be unsatisfiable)",
        policy.max_attempts
    )))
}
