//! Seeded synthetic classification data: Gaussian blobs, splits, and query
//! sampling.
//!
//! Generated features are min-max normalized per dimension into `[0, 1]`,
//! matching the normalization contract the training code expects. All
//! randomness flows through a caller-supplied seed, so identical parameters
//! reproduce identical datasets byte for byte.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which half of the experiment a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    /// Freshly generated, not yet split.
    Full,
    /// Teacher-training half.
    Teacher,
    /// Student-distillation half.
    Student,
    /// Held-out evaluation set.
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SplitTag::Full => "full",
            SplitTag::Teacher => "teacher",
            SplitTag::Student => "student",
            SplitTag::Test => "test",
        };
        f.write_str(s)
    }
}

/// A feature matrix with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-per-example feature matrix; entries in `[0, 1]`.
    pub features: Vec<Vec<f64>>,
    /// Class labels aligned with `features`, absent for unlabeled data.
    pub labels: Option<Vec<usize>>,
    /// Provenance tag.
    pub split_tag: SplitTag,
    /// Number of classes `m` the labels are drawn from.
    pub class_count: usize,
}

impl Dataset {
    /// Number of examples.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    /// True when the dataset holds no examples.
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Feature dimension `n`; zero for an empty dataset.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Checks structural invariants: rectangular features, aligned labels,
    /// labels below the class count, features in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidInput(format!(
                "class count must be at least 2, got {}",
                self.class_count
            )));
        }
        let dim = self.dim();
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "feature row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "feature [{i}][{j}] = {v} outside [0, 1]"
                    )));
                }
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.features.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.features.len(),
                    got: labels.len(),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.class_count) {
                return Err(Error::InvalidInput(format!(
                    "label {bad} out of range for {} classes",
                    self.class_count
                )));
            }
        }
        Ok(())
    }

    /// Subset of examples carrying one label; keeps order.
    pub fn filter_by_label(&self, class: usize) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("cannot filter an unlabeled dataset".into()))?;
        if class >= self.class_count {
            return Err(Error::InvalidInput(format!(
                "class {class} out of range for {} classes",
                self.class_count
            )));
        }
        let keep: Vec<usize> =
            labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect();
        Ok(Dataset {
            features: keep.iter().map(|&i| self.features[i].clone()).collect(),
            labels: Some(vec![class; keep.len()]),
            split_tag: self.split_tag,
            class_count: self.class_count,
        })
    }

    /// The same examples without labels (for distillation queries).
    pub fn without_labels(&self) -> Dataset {
        Dataset { labels: None, ..self.clone() }
    }
}

/// Parameters for [`make_blobs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    /// Number of classes `m ≥ 2`.
    pub classes: usize,
    /// Feature dimension `n ≥ 2`.
    pub dims: usize,
    /// Examples generated per class.
    pub per_class: usize,
    /// Gaussian spread σ of each cluster before normalization.
    pub spread: f64,
    /// Generation seed.
    pub seed: u64,
}

impl Default for BlobParams {
    /// Desk-scale defaults: large enough that distillation is nontrivial,
    /// small enough for minute-scale experiment runs.
    fn default() -> Self {
        Self { classes: 10, dims: 32, per_class: 1000, spread: 0.12, seed: 0 }
    }
}

/// Generates Gaussian clusters with centers drawn uniformly in
/// `[0.2, 0.8]ⁿ`, one cluster per class, then min-max normalizes every
/// dimension over the full set so all features land in `[0, 1]`.
pub fn make_blobs(params: &BlobParams) -> Result<Dataset> {
    if params.classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {}",
            params.classes
        )));
    }
    if params.dims < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 dims, got {}", params.dims)));
    }
    if params.per_class == 0 {
        return Err(Error::InvalidInput("per-class count must be positive".into()));
    }
    if !params.spread.is_finite() || params.spread < 0.0 {
        return Err(Error::InvalidInput(format!("spread {} must be ≥ 0", params.spread)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let total = params.classes * params.per_class;
    let mut features = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for class in 0..params.classes {
        let center: Vec<f64> = (0..params.dims).map(|_| rng.random_range(0.2..0.8)).collect();
        for _ in 0..params.per_class {
            let point: Vec<f64> = center
                .iter()
                .map(|&c| c + params.spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.push(point);
            labels.push(class);
        }
    }

    // Min-max normalize each dimension over the full set.
    for j in 0..params.dims {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &features {
            lo = lo.min(row[j]);
            hi = hi.max(row[j]);
        }
        let range = hi - lo;
        for row in &mut features {
            // A collapsed dimension maps to the midpoint.
            row[j] = if range > 1e-12 { (row[j] - lo) / range } else { 0.5 };
            // Guard the upper bound against rounding overshoot.
            row[j] = row[j].clamp(0.0, 1.0);
        }
    }

    let data = Dataset {
        features,
        labels: Some(labels),
        split_tag: SplitTag::Full,
        class_count: params.classes,
    };
    data.validate()?;
    Ok(data)
}

/// Splits a dataset into disjoint, exhaustive teacher / student / test
/// subsets by a seeded shuffle. Fractions must sum to 1 and every resulting
/// subset must be nonempty.
pub fn split(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fs, fe) = fractions;
    for f in [ft, fs, fe] {
        if !f.is_finite() || f < 0.0 {
            return Err(Error::InvalidInput(format!("split fraction {f} must be ≥ 0")));
        }
    }
    if ((ft + fs + fe) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions sum to {}, expected 1",
            ft + fs + fe
        )));
    }
    let total = data.len();
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_teacher = (total as f64 * ft).round() as usize;
    let n_student = (total as f64 * fs).round() as usize;
    if n_teacher + n_student > total {
        return Err(Error::InvalidInput("split fractions overflow the dataset".into()));
    }
    let n_test = total - n_teacher - n_student;
    if n_teacher == 0 || n_student == 0 || n_test == 0 {
        return Err(Error::InvalidInput(format!(
            "split produces an empty subset (sizes {n_teacher}/{n_student}/{n_test})"
        )));
    }

    let take = |idx: &[usize], tag: SplitTag| Dataset {
        features: idx.iter().map(|&i| data.features[i].clone()).collect(),
        labels: data.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        split_tag: tag,
        class_count: data.class_count,
    };
    let teacher = take(&order[..n_teacher], SplitTag::Teacher);
    let student = take(&order[n_teacher..n_teacher + n_student], SplitTag::Student);
    let test = take(&order[n_teacher + n_student..], SplitTag::Test);
    Ok((teacher, student, test))
}

/// Uniform sample of `count` examples without replacement.
pub fn sample_queries(data: &Dataset, count: usize, seed: u64) -> Result<Dataset> {
    if count > data.len() {
        return Err(Error::InsufficientData { needed: count, got: data.len() });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.truncate(count);
    Ok(Dataset {
        features: order.iter().map(|&i| data.features[i].clone()).collect(),
        labels: data.labels.as_ref().map(|l| order.iter().map(|&i| l[i]).collect()),
        split_tag: data.split_tag,
        class_count: data.class_count,
    })
}
