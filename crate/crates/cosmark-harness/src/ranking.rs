//! Average precision and the analytic random-ranking baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored model in a ranking task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    /// Stable identifier, also used in the ranking CSV.
    pub student_id: String,
    /// True when the student was distilled from an ensemble containing the
    /// watermarked teacher under evaluation.
    pub is_positive: bool,
    /// Extraction score for the key under evaluation.
    pub p_snr: f64,
}

/// A full ranking task for one watermark key: all scored students plus the
/// resulting average precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTask {
    /// Index of the key this task ranks for.
    pub key_index: usize,
    /// All scored students, in stable job order.
    pub entries: Vec<RankEntry>,
    /// Average precision of positives under descending `p_snr`.
    pub ap: f64,
}

impl RankingTask {
    /// Builds a task from scored entries, computing the AP.
    pub fn new(key_index: usize, entries: Vec<RankEntry>) -> Result<Self> {
        let scores: Vec<f64> = entries.iter().map(|e| e.p_snr).collect();
        let labels: Vec<bool> = entries.iter().map(|e| e.is_positive).collect();
        let ap = average_precision(&scores, &labels)?;
        Ok(Self { key_index, entries, ap })
    }
}

/// Average precision of a ranking by descending score.
///
/// Positives and negatives are ranked together by score; AP is the mean of
/// precision-at-rank over the positive positions. Ties are broken by stable
/// input order: among equal scores, the earlier entry ranks higher. Scores
/// must be finite except that `+∞` (the zero-noise-floor SNR sentinel) is
/// allowed and ranks above everything else.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Config(format!(
            "ranking needs one label per score: {} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Config(format!("score at index {i} is NaN")));
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("NaN rejected above"));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if labels[idx] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

/// Expected average precision of a uniformly random ranking of `positives`
/// relevant items among `total` items.
///
/// With `P` positives among `T` items, the expectation in closed form is
/// `E[AP] = (H_T + (P−1)·(T−H_T)/(T−1)) / T`, where `H_T` is the T-th
/// harmonic number; `P = T` and `T = 1` both give 1.
pub fn random_baseline_ap(positives: usize, total: usize) -> Result<f64> {
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "random baseline needs at least one positive".into(),
        ));
    }
    if positives > total {
        return Err(Error::Config(format!(
            "positives ({positives}) exceed total items ({total})"
        )));
    }
    if total == 1 {
        return Ok(1.0);
    }
    let t = total as f64;
    let p = positives as f64;
    let harmonic: f64 = (1..=total).map(|i| 1.0 / i as f64).sum();
    Ok((harmonic + (p - 1.0) * (t - harmonic) / (t - 1.0)) / t)
}

/// Mean of a nonempty slice.
pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n−1 denominator); zero for fewer than two
/// values.
pub(crate) fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
