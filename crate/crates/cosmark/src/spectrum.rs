//! Sinusoid least-squares fitting, an unevenly-sampled periodogram, and the
//! filtering + signal-to-noise extraction pipeline.
//!
//! The power spectrum is the floating-mean (generalized) form: for a paired
//! series `D = {(p_l, q_l)}` and angular frequency `f`,
//!
//! ```text
//! P_D(f) = ½ [χ²₀(D) − χ²_f(D)]
//! ```
//!
//! where `χ²_f` is the residual of the best least-squares fit of
//! `α + β·cos(f·p + γ)` and `χ²₀` the residual of the best constant fit.
//! The fit is solved explicitly in the linear basis `{1, cos(f·p), sin(f·p)}`
//! rather than via the classical closed form, so downstream bound checking
//! can manipulate the same χ² quantities exactly.
//!
//! Per-frequency fits are independent; [`periodogram`] evaluates them on the
//! rayon pool under the `parallel` feature while [`periodogram_seq`] is the
//! always-compiled sequential twin. Within one frequency the accumulation
//! order is fixed, so both paths return bit-identical spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_slice, map_slice_seq};
use crate::prob::ProbVector;
use crate::watermark::{project, WatermarkKey};

/// Minimum number of pairs for a three-parameter fit.
pub const MIN_FIT_POINTS: usize = 3;

/// Minimum allowed periodogram grid size for extraction.
pub const MIN_GRID_SIZE: usize = 16;

/// A set of (projection value, scalar output) pairs.
///
/// In the extraction pipeline the outputs are target-class probabilities in
/// `[0, 1]`; the fitting routines themselves accept any finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    pairs: Vec<(f64, f64)>,
}

impl PairedSeries {
    /// Builds a series from raw pairs, rejecting non-finite entries.
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(p, q)) in pairs.iter().enumerate() {
            if !p.is_finite() || !q.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "pair {i} = ({p}, {q}) is not finite"
                )));
            }
        }
        Ok(Self { pairs })
    }

    /// Pairs each input's projection `vᵀx` with the given scalar output.
    pub fn from_projected(inputs: &[Vec<f64>], values: &[f64], key: &WatermarkKey) -> Result<Self> {
        if inputs.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: values.len() });
        }
        let mut pairs = Vec::with_capacity(inputs.len());
        for (x, &q) in inputs.iter().zip(values) {
            pairs.push((project(x, key)?, q));
        }
        Self::new(pairs)
    }

    /// Number of pairs.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// True when the series holds no pairs.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pair slice.
    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }
}

/// Best least-squares sinusoid `α + β·cos(f·p + γ)` for one frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    /// Constant offset α.
    pub alpha: f64,
    /// Nonnegative amplitude β.
    pub beta: f64,
    /// Phase γ, normalized to `[0, 2π)`.
    pub gamma: f64,
    /// Residual sum of squares χ²_f.
    pub chi_sq: f64,
    /// Angular frequency the fit was evaluated at.
    pub frequency: f64,
}

impl SinusoidFit {
    /// Evaluates the fitted sinusoid at a projection value.
    pub fn evaluate(&self, p: f64) -> f64 {
        self.alpha + self.beta * (self.frequency * p + self.gamma).cos()
    }
}

/// Residual sum of squares of the best constant fit: `Σ (q_l − mean)²`.
pub fn constant_fit_residual(series: &PairedSeries) -> f64 {
    let n = series.len();
    if n == 0 {
        return 0.0;
    }
    let mean = series.pairs().iter().map(|&(_, q)| q).sum::<f64>() / n as f64;
    series.pairs().iter().map(|&(_, q)| (q - mean) * (q - mean)).sum()
}

/// Fits `α + β·cos(f·p + γ)` by linear least squares in the basis
/// `{1, cos(f·p), sin(f·p)}`.
///
/// The 3×3 normal equations are solved through an SVD with small singular
/// values zeroed, so rank-deficient designs (e.g. projections collapsing to
/// a point) return the minimum-norm solution instead of failing. The
/// residual is accumulated in a second pass over the data rather than by
/// algebraic shortcut, keeping `chi_sq` exact and nonnegative.
pub fn fit_sinusoid(series: &PairedSeries, frequency: f64) -> Result<SinusoidFit> {
    if series.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { needed: MIN_FIT_POINTS, got: series.len() });
    }
    if !frequency.is_finite() || frequency <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "fit frequency must be positive and finite, got {frequency}"
        )));
    }

    let n = series.len();
    let mut cos_vals = Vec::with_capacity(n);
    let mut sin_vals = Vec::with_capacity(n);
    // Accumulate the Gram matrix of {1, cos, sin} and the right-hand side.
    let (mut sc, mut ss) = (0.0, 0.0);
    let (mut scc, mut sss, mut scs) = (0.0, 0.0, 0.0);
    let (mut sq, mut sqc, mut sqs) = (0.0, 0.0, 0.0);
    for &(p, q) in series.pairs() {
        let (s, c) = (frequency * p).sin_cos();
        cos_vals.push(c);
        sin_vals.push(s);
        sc += c;
        ss += s;
        scc += c * c;
        sss += s * s;
        scs += c * s;
        sq += q;
        sqc += q * c;
        sqs += q * s;
    }
    let l = n as f64;
    let gram = nalgebra::Matrix3::new(l, sc, ss, sc, scc, scs, ss, scs, sss);
    let rhs = nalgebra::Vector3::new(sq, sqc, sqs);
    let svd = gram.svd(true, true);
    // Relative cutoff: singular values this far below the largest are
    // treated as zero, yielding the pseudo-inverse (minimum-norm) solution.
    let cutoff = svd.singular_values.amax() * 1e-12;
    let theta = svd
        .solve(&rhs, cutoff.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(format!("singular fit system: {e}")))?;
    let (a, c_coef, s_coef) = (theta[0], theta[1], theta[2]);

    // α + C·cos(fp) + S·sin(fp) = α + β·cos(fp + γ) with
    // C = β·cos(γ), S = −β·sin(γ).
    let beta = (c_coef * c_coef + s_coef * s_coef).sqrt();
    let mut gamma = (-s_coef).atan2(c_coef);
    if gamma < 0.0 {
        gamma += 2.0 * std::f64::consts::PI;
    }
    if gamma >= 2.0 * std::f64::consts::PI {
        gamma = 0.0;
    }

    let mut chi_sq = 0.0;
    for (i, &(_, q)) in series.pairs().iter().enumerate() {
        let r = q - (a + c_coef * cos_vals[i] + s_coef * sin_vals[i]);
        chi_sq += r * r;
    }

    Ok(SinusoidFit { alpha: a, beta, gamma, chi_sq, frequency })
}

/// Power spectrum samples over a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    /// Strictly increasing, positive angular frequencies.
    pub frequencies: Vec<f64>,
    /// `P_D(f)` per grid point; nonnegative, each `≤ chi0 / 2`.
    pub powers: Vec<f64>,
    /// Best-constant-fit residual χ²₀ of the analyzed series.
    pub chi0: f64,
}

/// Builds a grid of `size` evenly spaced frequencies over `(0, max]`.
pub fn even_grid(max_frequency: f64, size: usize) -> Result<Vec<f64>> {
    if !max_frequency.is_finite() || max_frequency <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "grid maximum must be positive and finite, got {max_frequency}"
        )));
    }
    if size == 0 {
        return Err(Error::InvalidInput("grid size must be positive".into()));
    }
    Ok((0..size)
        .map(|k| max_frequency * ((k + 1) as f64 / size as f64))
        .collect())
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("frequency grid is empty".into()));
    }
    let mut prev = 0.0;
    for (i, &f) in grid.iter().enumerate() {
        if !f.is_finite() || f <= prev {
            return Err(Error::InvalidInput(format!(
                "frequency grid must be positive and strictly increasing (entry {i} = {f})"
            )));
        }
        prev = f;
    }
    Ok(())
}

fn periodogram_impl(series: &PairedSeries, grid: &[f64], parallel: bool) -> Result<Periodogram> {
    validate_grid(grid)?;
    if series.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { needed: MIN_FIT_POINTS, got: series.len() });
    }
    let chi0 = constant_fit_residual(series);
    let power_at = |f: &f64| -> f64 {
        // The fit cannot fail here: the series length and frequency were
        // validated above, and the SVD solve accepts rank-deficient systems.
        let fit = fit_sinusoid(series, *f).expect("validated fit");
        let raw = 0.5 * (chi0 - fit.chi_sq);
        // The sinusoid family contains every constant, so χ²_f ≤ χ²₀ up to
        // solver round-off; anything below −1e−9 would be a solver bug.
        debug_assert!(raw >= -1e-9, "periodogram power {raw} below round-off floor");
        raw.max(0.0)
    };
    let powers =
        if parallel { map_slice(grid, power_at) } else { map_slice_seq(grid, power_at) };
    Ok(Periodogram { frequencies: grid.to_vec(), powers, chi0 })
}

/// Evaluates the periodogram over a frequency grid, fanning per-frequency
/// fits out over the rayon pool when the `parallel` feature is enabled.
pub fn periodogram(series: &PairedSeries, grid: &[f64]) -> Result<Periodogram> {
    periodogram_impl(series, grid, true)
}

/// Sequential twin of [`periodogram`]; bit-identical results.
pub fn periodogram_seq(series: &PairedSeries, grid: &[f64]) -> Result<Periodogram> {
    periodogram_impl(series, grid, false)
}

/// Confidence-threshold policy for selecting extraction pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPolicy {
    /// Threshold at the median of the observed values.
    Median,
    /// Threshold at the first quartile (linear interpolation).
    FirstQuartile,
    /// Fixed threshold independent of the data.
    Absolute(f64),
}

/// Which side of the threshold survives filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterDirection {
    /// Keep pairs with output strictly above the threshold (confidence
    /// floor, the default).
    KeepAbove,
    /// Keep pairs with output strictly below the threshold (confidence
    /// ceiling variant).
    KeepBelow,
}

/// Linear-interpolation quantile (the common "type 7" rule):
/// `h = (n−1)·level`, interpolating between the surrounding order statistics.
pub fn quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("quantile of empty data".into()));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidInput(format!("quantile level {level} outside [0, 1]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("quantile of non-finite data".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Resolves a filter policy to a concrete threshold for the observed values.
pub fn filter_threshold(values: &[f64], policy: FilterPolicy) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("filter threshold of empty data".into()));
    }
    match policy {
        FilterPolicy::Median => quantile(values, 0.5),
        FilterPolicy::FirstQuartile => quantile(values, 0.25),
        FilterPolicy::Absolute(t) => {
            if !t.is_finite() {
                return Err(Error::InvalidInput(format!("absolute threshold {t} not finite")));
            }
            Ok(t)
        }
    }
}

/// Extraction parameters: filtering, grid shape, and detection window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Confidence-threshold policy applied to target-class outputs.
    pub filter: FilterPolicy,
    /// Side of the threshold that survives.
    pub direction: FilterDirection,
    /// Number of evenly spaced grid frequencies over `(0, max_frequency]`.
    pub grid_size: usize,
    /// Upper end of the frequency grid; defaults to `2·f_w` when absent.
    pub max_frequency: Option<f64>,
    /// Detection window width, expressed in grid bins (odd values center
    /// the window on `f_w`).
    pub window_bins: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            filter: FilterPolicy::FirstQuartile,
            direction: FilterDirection::KeepAbove,
            grid_size: 512,
            max_frequency: None,
            window_bins: 5,
        }
    }
}

impl ExtractionConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_size < MIN_GRID_SIZE {
            return Err(Error::InvalidInput(format!(
                "grid size {} below minimum {MIN_GRID_SIZE}",
                self.grid_size
            )));
        }
        if self.window_bins == 0 || self.window_bins >= self.grid_size {
            return Err(Error::InvalidInput(format!(
                "window of {} bins must be in [1, grid size)",
                self.window_bins
            )));
        }
        if let Some(f) = self.max_frequency {
            if !f.is_finite() || f <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "max frequency {f} must be positive and finite"
                )));
            }
        }
        Ok(())
    }
}

/// Windowed signal-to-noise summary of a periodogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// Mean power inside the detection window.
    pub p_signal: f64,
    /// Mean power outside the detection window.
    pub p_noise: f64,
    /// `p_signal / p_noise`; `+∞` when the noise floor is exactly zero
    /// (serialized as null, see `noise_floor_zero`).
    #[serde(with = "infinity_as_null")]
    pub p_snr: f64,
    /// Window center (the key frequency `f_w`).
    #[serde(rename = "f_w")]
    pub window_center: f64,
    /// Window width δ in frequency units.
    #[serde(rename = "delta")]
    pub window_width: f64,
    /// Upper end `F` of the analyzed grid.
    #[serde(rename = "F")]
    pub max_frequency: f64,
    /// Number of pairs surviving the confidence filter.
    pub survivors: usize,
    /// True when every out-of-window power is zero and `p_snr` is the
    /// infinity sentinel.
    pub noise_floor_zero: bool,
}

/// JSON has no infinity literal, so the SNR sentinel maps to `null` on the
/// wire and back to `+∞` on read.
mod infinity_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            serializer.serialize_some(value)
        } else {
            serializer.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(deserializer)?.unwrap_or(f64::INFINITY))
    }
}

/// Full extraction outcome: the SNR summary plus the spectrum and threshold
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub report: SnrReport,
    pub periodogram: Periodogram,
    /// Concrete confidence threshold the filter policy resolved to.
    pub threshold: f64,
}

fn extract_impl(
    inputs: &[Vec<f64>],
    outputs: &[ProbVector],
    key: &WatermarkKey,
    cfg: &ExtractionConfig,
    sequential: bool,
) -> Result<Extraction> {
    key.validate()?;
    cfg.validate()?;
    if inputs.len() != outputs.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), got: outputs.len() });
    }
    if inputs.is_empty() {
        return Err(Error::InsufficientData { needed: MIN_FIT_POINTS, got: 0 });
    }
    for q in outputs {
        if key.target_class >= q.class_count() {
            return Err(Error::InvalidInput(format!(
                "target class {} out of range for {} classes",
                key.target_class,
                q.class_count()
            )));
        }
    }

    let target: Vec<f64> = outputs.iter().map(|q| q.get(key.target_class)).collect();
    let threshold = filter_threshold(&target, cfg.filter)?;
    let mut pairs = Vec::with_capacity(inputs.len());
    for (x, &q) in inputs.iter().zip(&target) {
        let keep = match cfg.direction {
            FilterDirection::KeepAbove => q > threshold,
            FilterDirection::KeepBelow => q < threshold,
        };
        if keep {
            pairs.push((project(x, key)?, q));
        }
    }
    let survivors = pairs.len();
    if survivors < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { needed: MIN_FIT_POINTS, got: survivors });
    }
    let series = PairedSeries::new(pairs)?;

    let max_frequency = cfg.max_frequency.unwrap_or(2.0 * key.frequency);
    let grid = even_grid(max_frequency, cfg.grid_size)?;
    let pg = if sequential { periodogram_seq(&series, &grid)? } else { periodogram(&series, &grid)? };

    let delta = max_frequency / cfg.grid_size as f64;
    let half_width = cfg.window_bins as f64 * delta / 2.0;
    let (mut signal_sum, mut signal_count) = (0.0, 0usize);
    let (mut noise_sum, mut noise_count) = (0.0, 0usize);
    for (&f, &p) in pg.frequencies.iter().zip(&pg.powers) {
        if (f - key.frequency).abs() <= half_width {
            signal_sum += p;
            signal_count += 1;
        } else {
            noise_sum += p;
            noise_count += 1;
        }
    }
    if signal_count == 0 {
        return Err(Error::InvalidInput(format!(
            "detection window around {} lies outside the grid (0, {max_frequency}]",
            key.frequency
        )));
    }
    if noise_count == 0 {
        return Err(Error::InvalidInput(
            "detection window covers the whole grid; no noise bins remain".into(),
        ));
    }
    let p_signal = signal_sum / signal_count as f64;
    let p_noise = noise_sum / noise_count as f64;
    let noise_floor_zero = p_noise == 0.0;
    let p_snr = if noise_floor_zero { f64::INFINITY } else { p_signal / p_noise };

    Ok(Extraction {
        report: SnrReport {
            p_signal,
            p_noise,
            p_snr,
            window_center: key.frequency,
            window_width: cfg.window_bins as f64 * delta,
            max_frequency,
            survivors,
            noise_floor_zero,
        },
        periodogram: pg,
        threshold,
    })
}

/// Runs the extraction pipeline: project inputs through the key, filter by
/// target-class confidence, build the periodogram over `(0, F]`, and compare
/// mean power inside the detection window `[f_w − δ/2, f_w + δ/2]` against
/// the mean power outside it.
pub fn extract_signal(
    inputs: &[Vec<f64>],
    outputs: &[ProbVector],
    key: &WatermarkKey,
    cfg: &ExtractionConfig,
) -> Result<Extraction> {
    extract_impl(inputs, outputs, key, cfg, false)
}

/// Sequential twin of [`extract_signal`]; bit-identical results.
pub fn extract_signal_seq(
    inputs: &[Vec<f64>],
    outputs: &[ProbVector],
    key: &WatermarkKey,
    cfg: &ExtractionConfig,
) -> Result<Extraction> {
    extract_impl(inputs, outputs, key, cfg, true)
}
