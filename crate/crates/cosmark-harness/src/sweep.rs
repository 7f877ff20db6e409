//! Amplitude and frequency sweeps over the single-watermark experiment.
//!
//! Each cell of a sweep is one full [`run_single_watermark_experiment`] with
//! a single knob overridden, so cells inherit the experiment's purity: the
//! whole table is a function of the base config, the grid, and the master
//! seed. Rows carry the summary statistics the corresponding study plots;
//! the full per-cell reports ride along for drill-down.

use serde::{Deserialize, Serialize};

use crate::data::FrequencyPolicy;
use crate::error::{Error, Result};
use crate::experiment::{run_single_watermark_experiment, ExperimentConfig, SingleWatermarkReport};
use crate::ranking::{mean, sample_std};

/// One cell of the amplitude sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeRow {
    /// Watermark amplitude of this cell.
    pub epsilon: f64,
    /// Ensemble size of this cell.
    pub ensemble_size: usize,
    /// Mean test accuracy of the watermarked teachers.
    pub mean_marked_accuracy: f64,
    /// Mean test accuracy of the unwatermarked pool.
    pub unwatermarked_mean_accuracy: f64,
    /// Mean AP across keys.
    pub mean_ap: f64,
    /// AP spread across keys.
    pub ap_std: f64,
    /// Mean extraction score of matched students.
    pub mean_positive_p_snr: f64,
}

/// Amplitude-sweep table plus the underlying reports (row-aligned).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSweep {
    /// Rows in grid order: ensemble sizes outer, amplitudes inner.
    pub rows: Vec<AmplitudeRow>,
    /// The full report behind each row.
    pub runs: Vec<SingleWatermarkReport>,
}

/// Runs the single-watermark experiment over an ε × N grid.
///
/// The base config supplies everything else; its own `epsilon` and
/// `ensemble_size` are ignored in favor of the grid.
pub fn sweep_amplitude(
    config: &ExperimentConfig,
    epsilons: &[f64],
    ensemble_sizes: &[usize],
) -> Result<AmplitudeSweep> {
    if epsilons.is_empty() || ensemble_sizes.is_empty() {
        return Err(Error::Config("amplitude sweep needs a nonempty epsilon and N grid".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len() * ensemble_sizes.len());
    let mut runs = Vec::with_capacity(rows.capacity());
    for &n in ensemble_sizes {
        for &epsilon in epsilons {
            let cfg =
                ExperimentConfig { epsilon, ensemble_size: n, ..config.clone() };
            let report = run_single_watermark_experiment(&cfg)?;
            rows.push(AmplitudeRow {
                epsilon,
                ensemble_size: n,
                mean_marked_accuracy: report.mean_marked_accuracy,
                unwatermarked_mean_accuracy: report.gate.unwatermarked_mean,
                mean_ap: report.mean_ap,
                ap_std: report.ap_std,
                mean_positive_p_snr: report.mean_positive_p_snr,
            });
            runs.push(report);
        }
    }
    Ok(AmplitudeSweep { rows, runs })
}

/// One cell of the frequency sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    /// Frequency rule of this cell.
    pub policy: FrequencyPolicy,
    /// Angular frequencies the drawn keys actually got under the rule.
    pub resolved_frequencies: Vec<f64>,
    /// Ensemble size of this cell.
    pub ensemble_size: usize,
    /// Mean extraction score of matched students.
    pub mean_positive_p_snr: f64,
    /// Sample standard deviation of matched-student scores.
    pub positive_p_snr_std: f64,
    /// Mean AP across keys.
    pub mean_ap: f64,
}

/// Frequency-sweep table plus the underlying reports (row-aligned).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySweep {
    /// Rows in grid order: ensemble sizes outer, policies inner.
    pub rows: Vec<FrequencyRow>,
    /// The full report behind each row.
    pub runs: Vec<SingleWatermarkReport>,
}

/// Runs the single-watermark experiment over a frequency-policy × N grid.
///
/// Policies express frequencies either as data-relative period counts
/// ([`FrequencyPolicy::Auto`]) or as fixed angular frequencies; the rule in
/// force and the resolved per-key frequencies are recorded per row.
pub fn sweep_frequency(
    config: &ExperimentConfig,
    policies: &[FrequencyPolicy],
    ensemble_sizes: &[usize],
) -> Result<FrequencySweep> {
    if policies.is_empty() || ensemble_sizes.is_empty() {
        return Err(Error::Config("frequency sweep needs a nonempty policy and N grid".into()));
    }
    let mut rows = Vec::with_capacity(policies.len() * ensemble_sizes.len());
    let mut runs = Vec::with_capacity(rows.capacity());
    for &n in ensemble_sizes {
        for &policy in policies {
            let mut cfg = ExperimentConfig { ensemble_size: n, ..config.clone() };
            cfg.keys.frequency = policy;
            let report = run_single_watermark_experiment(&cfg)?;
            let positives: Vec<f64> = report
                .rankings
                .iter()
                .flat_map(|r| r.entries.iter().filter(|e| e.is_positive).map(|e| e.p_snr))
                .collect();
            rows.push(FrequencyRow {
                policy,
                resolved_frequencies: report.keys.iter().map(|k| k.frequency).collect(),
                ensemble_size: n,
                mean_positive_p_snr: mean(&positives),
                positive_p_snr_std: sample_std(&positives),
                mean_ap: report.mean_ap,
            });
            runs.push(report);
        }
    }
    Ok(FrequencySweep { rows, runs })
}
