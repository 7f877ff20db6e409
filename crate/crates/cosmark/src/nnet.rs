//! Tiny from-scratch classifiers, watermarked training, ensembles, and
//! KL-based student distillation.
//!
//! Two architectures are supported: plain softmax regression and a
//! one-hidden-layer tanh MLP — the smallest families where distillation is
//! meaningful. Training is mini-batch SGD with momentum and a constant
//! learning rate; the parameters with the best held-out metric across epochs
//! are returned. Training itself is single-threaded so a seed pins the
//! parameter trajectory bit for bit; batch prediction fans out over the
//! rayon pool under the `parallel` feature.

use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::par::{map_slice, map_slice_seq};
use crate::prob::{kl_divergence, softmax, ProbVector, LOG_FLOOR};
use crate::watermark::{grad_watermarked_cross_entropy, modified_softmax, WatermarkConfig};

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Linear logits: `z = W·x + b`.
    SoftmaxRegression,
    /// One hidden tanh layer: `z = W₂·tanh(W₁·x + b₁) + b₂`.
    Mlp { hidden_size: usize },
    /// One hidden sine layer: `z = W₂·sin(W₁·x + b₁) + b₂`.
    ///
    /// Initialization draws each hidden unit's weight vector with a random
    /// direction and a magnitude uniform in `(0, frequency_scale]`, and its
    /// bias uniform in `(−π, π]`, so the feature bank spans oscillations from
    /// near-linear up to `frequency_scale` radians per unit input right from
    /// the start. A tanh layer at standard init is effectively linear and
    /// needs its first-layer weights to grow orders of magnitude before it
    /// can express a mid-band oscillation; gradient descent reaches such
    /// weights far too slowly for that family to fit oscillatory structure
    /// on a small budget.
    SineMlp { hidden_size: usize, frequency_scale: f64 },
}

impl Architecture {
    /// Total number of parameters for the given input/output dimensions.
    pub fn param_count(&self, input_dim: usize, class_count: usize) -> usize {
        match *self {
            Architecture::SoftmaxRegression => class_count * input_dim + class_count,
            Architecture::Mlp { hidden_size }
            | Architecture::SineMlp { hidden_size, .. } => {
                hidden_size * input_dim + hidden_size + class_count * hidden_size + class_count
            }
        }
    }

    fn hidden_size(&self) -> Option<usize> {
        match *self {
            Architecture::SoftmaxRegression => None,
            Architecture::Mlp { hidden_size } | Architecture::SineMlp { hidden_size, .. } => {
                Some(hidden_size)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_size() == Some(0) {
            return Err(Error::InvalidInput("hidden layer size must be positive".into()));
        }
        if let Architecture::SineMlp { frequency_scale, .. } = *self {
            if !frequency_scale.is_finite() || frequency_scale <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "sine feature frequency scale must be positive and finite, got {frequency_scale}"
                )));
            }
        }
        Ok(())
    }
}

/// A classifier: architecture, packed parameters, and an optional watermark
/// applied at inference.
///
/// Parameter packing is row-major per layer: softmax regression stores
/// `W (m×n), b (m)`; the MLP stores `W₁ (h×n), b₁ (h), W₂ (m×h), b₂ (m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    architecture: Architecture,
    input_dim: usize,
    class_count: usize,
    params: Vec<f64>,
    /// When present, every prediction passes through the watermarked output
    /// transform — the watermark is applied at inference as well as during
    /// training.
    pub watermark: Option<WatermarkConfig>,
}

impl Model {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn init(architecture: Architecture, input_dim: usize, class_count: usize, rng: &mut impl Rng) -> Result<Self> {
        architecture.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidInput("input dimension must be positive".into()));
        }
        if class_count < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        let mut params = vec![0.0; architecture.param_count(input_dim, class_count)];
        match architecture {
            Architecture::SoftmaxRegression => {
                glorot(&mut params[..class_count * input_dim], input_dim, class_count, rng);
            }
            Architecture::Mlp { hidden_size } => {
                let w1 = hidden_size * input_dim;
                glorot(&mut params[..w1], input_dim, hidden_size, rng);
                let w2_start = w1 + hidden_size;
                let w2_end = w2_start + class_count * hidden_size;
                glorot(&mut params[w2_start..w2_end], hidden_size, class_count, rng);
            }
            Architecture::SineMlp { hidden_size, frequency_scale } => {
                for j in 0..hidden_size {
                    let row = &mut params[j * input_dim..(j + 1) * input_dim];
                    let mut norm_sq = 0.0;
                    for w in row.iter_mut() {
                        *w = rng.sample::<f64, _>(rand_distr::StandardNormal);
                        norm_sq += *w * *w;
                    }
                    // Degenerate all-zero draws are astronomically unlikely;
                    // fall back to the first axis rather than divide by zero.
                    if norm_sq == 0.0 {
                        row[0] = 1.0;
                        norm_sq = 1.0;
                    }
                    let magnitude = (1.0 - rng.random_range(0.0..1.0)) * frequency_scale;
                    let scale = magnitude / norm_sq.sqrt();
                    for w in row.iter_mut() {
                        *w *= scale;
                    }
                    params[hidden_size * input_dim + j] =
                        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                }
                let w2_start = hidden_size * input_dim + hidden_size;
                let w2_end = w2_start + class_count * hidden_size;
                glorot(&mut params[w2_start..w2_end], hidden_size, class_count, rng);
            }
        }
        Ok(Self { architecture, input_dim, class_count, params, watermark: None })
    }

    /// Rebuilds a model from stored parts (checkpoint loading).
    pub fn from_parts(
        architecture: Architecture,
        input_dim: usize,
        class_count: usize,
        params: Vec<f64>,
        watermark: Option<WatermarkConfig>,
    ) -> Result<Self> {
        architecture.validate()?;
        if class_count < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        let expected = architecture.param_count(input_dim, class_count);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        if let Some(wm) = &watermark {
            if wm.key.target_class >= class_count {
                return Err(Error::InvalidInput(format!(
                    "watermark target class {} out of range for {class_count} classes",
                    wm.key.target_class
                )));
            }
            if wm.key.dim() != input_dim {
                return Err(Error::DimensionMismatch { expected: input_dim, got: wm.key.dim() });
            }
        }
        Ok(Self { architecture, input_dim, class_count, params, watermark })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Packed parameter slice (see the type docs for the layout).
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Raw logits `z(x)`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        Ok(match self.architecture {
            Architecture::SoftmaxRegression => {
                linear_forward(&self.params, x, self.input_dim, self.class_count)
            }
            Architecture::Mlp { hidden_size } | Architecture::SineMlp { hidden_size, .. } => {
                let hidden = self.hidden_activations(x, hidden_size);
                let offset = hidden_size * self.input_dim + hidden_size;
                linear_forward(&self.params[offset..], &hidden, hidden_size, self.class_count)
            }
        })
    }

    fn hidden_activations(&self, x: &[f64], hidden_size: usize) -> Vec<f64> {
        let mut hidden = linear_forward(&self.params, x, self.input_dim, hidden_size);
        let sine = matches!(self.architecture, Architecture::SineMlp { .. });
        for h in &mut hidden {
            *h = if sine { h.sin() } else { h.tanh() };
        }
        hidden
    }

    /// Softmax output without the watermark transform.
    pub fn predict_plain(&self, x: &[f64]) -> Result<ProbVector> {
        softmax(&self.logits(x)?)
    }

    /// Deployed output: softmax, then the watermarked transform when this
    /// model carries a watermark.
    pub fn predict(&self, x: &[f64]) -> Result<ProbVector> {
        let q = self.predict_plain(x)?;
        match &self.watermark {
            Some(wm) => modified_softmax(&q, x, wm),
            None => Ok(q),
        }
    }

    /// Batch prediction, parallel under the `parallel` feature.
    pub fn predict_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
        map_slice(inputs, |x| self.predict(x)).into_iter().collect()
    }

    /// Sequential twin of [`Model::predict_batch`]; bit-identical results.
    pub fn predict_batch_seq(&self, inputs: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
        map_slice_seq(inputs, |x| self.predict(x)).into_iter().collect()
    }
}

fn glorot(weights: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in weights {
        *w = rng.random_range(-limit..limit);
    }
}

/// `W·x + b` where `weights` packs `W (rows×cols)` row-major followed by `b`.
fn linear_forward(weights: &[f64], x: &[f64], cols: usize, rows: usize) -> Vec<f64> {
    let bias_offset = rows * cols;
    (0..rows)
        .map(|r| {
            let row = &weights[r * cols..(r + 1) * cols];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            dot + weights[bias_offset + r]
        })
        .collect()
}

/// A nonempty collection of models whose outputs are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Model>,
}

impl Ensemble {
    /// Builds an ensemble, requiring every member to share `(n, m)`.
    pub fn new(members: Vec<Model>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidInput("ensemble must be nonempty".into()))?;
        let (n, m) = (first.input_dim(), first.class_count());
        for member in &members {
            if member.input_dim() != n {
                return Err(Error::DimensionMismatch { expected: n, got: member.input_dim() });
            }
            if member.class_count() != m {
                return Err(Error::DimensionMismatch { expected: m, got: member.class_count() });
            }
        }
        Ok(Self { members })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn class_count(&self) -> usize {
        self.members[0].class_count()
    }

    /// Arithmetic mean of member outputs; watermarked members contribute
    /// their watermarked outputs. A mean of simplex points is a simplex
    /// point.
    pub fn predict(&self, x: &[f64]) -> Result<ProbVector> {
        let mut mean = vec![0.0; self.class_count()];
        for member in &self.members {
            let q = member.predict(x)?;
            for (acc, &v) in mean.iter_mut().zip(q.values()) {
                *acc += v;
            }
        }
        let n = self.members.len() as f64;
        for v in &mut mean {
            *v /= n;
        }
        ProbVector::new(mean)
    }

    /// Batch ensemble prediction, parallel under the `parallel` feature.
    pub fn predict_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
        map_slice(inputs, |x| self.predict(x)).into_iter().collect()
    }

    /// Sequential twin of [`Ensemble::predict_batch`].
    pub fn predict_batch_seq(&self, inputs: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
        map_slice_seq(inputs, |x| self.predict(x)).into_iter().collect()
    }
}

/// SGD hyperparameters shared by teacher training and distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of passes over the training data (≥ 1).
    pub epochs: usize,
    /// Mini-batch size (≥ 1).
    pub batch_size: usize,
    /// Constant learning rate (> 0).
    pub learning_rate: f64,
    /// Momentum coefficient in `[0, 1)`.
    pub momentum: f64,
    /// Fraction of the data held out for best-epoch selection. Zero keeps
    /// the final-epoch parameters instead.
    pub holdout_fraction: f64,
    /// Seed pinning initialization, the holdout split, and batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.5,
            momentum: 0.9,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must be in [0, 1)", self.momentum)));
        }
        if !self.holdout_fraction.is_finite() || !(0.0..=0.5).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout fraction {} must be in [0, 0.5]",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// Distillation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillLoss {
    /// `KL(ensemble ‖ student)` at temperature 1.
    Kl,
    /// Equal-weight sum of the KL term and cross-entropy against ground
    /// truth; requires labeled student data.
    KlPlusCe,
}

/// Gradient of `KL(target ‖ softmax(z))` with respect to the student logits:
/// simply `q_student − q_target`.
pub fn grad_kl_logits(student: &ProbVector, target: &ProbVector) -> Result<Vec<f64>> {
    if student.class_count() != target.class_count() {
        return Err(Error::DimensionMismatch {
            expected: target.class_count(),
            got: student.class_count(),
        });
    }
    Ok(student.values().iter().zip(target.values()).map(|(s, t)| s - t).collect())
}

/// Trains a classifier on labeled data with mini-batch SGD + momentum.
///
/// With a watermark config the objective is the watermarked cross-entropy
/// (and the returned model carries the watermark, so it also emits
/// watermarked outputs at inference). With `wm = None` the objective is
/// plain softmax cross-entropy. At `ε = 0` the two trajectories coincide bit
/// for bit for the same seed.
///
/// Returns the parameters with the best held-out accuracy across epochs.
pub fn train_teacher(
    data: &Dataset,
    architecture: Architecture,
    cfg: &TrainConfig,
    wm: Option<WatermarkConfig>,
) -> Result<Model> {
    cfg.validate()?;
    data.validate()?;
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("teacher training requires labels".into()))?;
    if let Some(wm) = &wm {
        if wm.key.target_class >= data.class_count {
            return Err(Error::InvalidInput(format!(
                "watermark target class {} out of range for {} classes",
                wm.key.target_class, data.class_count
            )));
        }
        if wm.key.dim() != data.dim() {
            return Err(Error::DimensionMismatch { expected: data.dim(), got: wm.key.dim() });
        }
    }

    let wm_ref = wm.as_ref();
    let grad = |model: &Model, idx: usize, out: &mut Vec<f64>| -> Result<()> {
        let x = &data.features[idx];
        let label = labels[idx];
        let logits = model.logits(x)?;
        *out = match wm_ref {
            Some(wm) => grad_watermarked_cross_entropy(&logits, x, label, wm)?,
            None => {
                let mut g = softmax(&logits)?.into_values();
                g[label] -= 1.0;
                g
            }
        };
        Ok(())
    };
    // Higher is better: held-out accuracy of the deployed (possibly
    // watermarked) predictions.
    let score = |model: &Model, holdout: &[usize]| -> Result<f64> {
        let mut hits = 0usize;
        for &idx in holdout {
            if model.predict(&data.features[idx])?.argmax() == labels[idx] {
                hits += 1;
            }
        }
        Ok(hits as f64 / holdout.len() as f64)
    };

    let mut model = sgd_loop(data, architecture, cfg, grad, score)?;
    model.watermark = wm;
    Ok(model)
}

/// Distills a student from an ensemble of teachers.
///
/// Ensemble outputs are precomputed once over the student data and used as
/// soft targets; the student minimizes `KL(ensemble ‖ student)` (temperature
/// 1), optionally mixed equally with cross-entropy against ground-truth
/// labels. Returns the parameters with the best held-out objective across
/// epochs.
pub fn distill(
    ensemble: &Ensemble,
    data: &Dataset,
    architecture: Architecture,
    cfg: &TrainConfig,
    loss: DistillLoss,
) -> Result<Model> {
    cfg.validate()?;
    data.validate()?;
    if data.dim() != ensemble.input_dim() {
        return Err(Error::DimensionMismatch { expected: ensemble.input_dim(), got: data.dim() });
    }
    let labels = match loss {
        DistillLoss::Kl => None,
        DistillLoss::KlPlusCe => Some(data.labels.as_ref().ok_or_else(|| {
            Error::Config("the mixed KL + cross-entropy loss requires labeled student data".into())
        })?),
    };

    // Soft targets are fixed for the whole run; compute them once.
    let targets = ensemble.predict_batch(&data.features)?;

    let grad = |model: &Model, idx: usize, out: &mut Vec<f64>| -> Result<()> {
        let student = softmax(&model.logits(&data.features[idx])?)?;
        let mut g = grad_kl_logits(&student, &targets[idx])?;
        if let Some(labels) = labels {
            // Equal-weight mix: ½(q_s − q̄) + ½(q_s − y).
            let label = labels[idx];
            for (k, gk) in g.iter_mut().enumerate() {
                let y = if k == label { 1.0 } else { 0.0 };
                *gk = 0.5 * *gk + 0.5 * (student.get(k) - y);
            }
        }
        *out = g;
        Ok(())
    };
    // Lower is better: held-out distillation objective. Negate so the
    // shared loop can maximize.
    let score = |model: &Model, holdout: &[usize]| -> Result<f64> {
        let mut total = 0.0;
        for &idx in holdout {
            let student = softmax(&model.logits(&data.features[idx])?)?;
            let mut value = kl_divergence(&targets[idx], &student)?;
            if let Some(labels) = labels {
                let ce = -student.get(labels[idx]).max(LOG_FLOOR).ln();
                value = 0.5 * value + 0.5 * ce;
            }
            total += value;
        }
        Ok(-(total / holdout.len() as f64))
    };

    sgd_loop(data, architecture, cfg, grad, score)
}

/// Shared SGD loop. `grad` fills the per-sample logit gradient; `score`
/// evaluates a to-be-maximized metric on holdout indices.
fn sgd_loop(
    data: &Dataset,
    architecture: Architecture,
    cfg: &TrainConfig,
    grad: impl Fn(&Model, usize, &mut Vec<f64>) -> Result<()>,
    score: impl Fn(&Model, &[usize]) -> Result<f64>,
) -> Result<Model> {
    let total = data.len();
    let holdout_len = if cfg.holdout_fraction > 0.0 {
        ((total as f64 * cfg.holdout_fraction).round() as usize).clamp(1, total.saturating_sub(1))
    } else {
        0
    };
    if total - holdout_len == 0 {
        return Err(Error::InsufficientData { needed: 2, got: total });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let (holdout, train) = order.split_at(holdout_len);
    let holdout = holdout.to_vec();
    let mut train = train.to_vec();

    let mut model = Model::init(architecture, data.dim(), data.class_count, &mut rng)?;
    let mut velocity = vec![0.0; model.params.len()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut sample_grad = Vec::new();

    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size) {
            let mut batch_grad = vec![0.0; model.params.len()];
            for &idx in batch {
                // Inputs were validated up front, so a mid-epoch gradient
                // failure means the parameters blew up numerically.
                grad(&model, idx, &mut sample_grad).map_err(|e| Error::TrainingFailure {
                    epoch,
                    reason: e.to_string(),
                })?;
                accumulate_param_grad(&model, &data.features[idx], &sample_grad, &mut batch_grad);
            }
            let scale = 1.0 / batch.len() as f64;
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&batch_grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * scale * g;
                *p += *v;
            }
        }

        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingFailure {
                epoch,
                reason: "non-finite parameter after update".into(),
            });
        }
        if !holdout.is_empty() {
            let metric = score(&model, &holdout).map_err(|e| Error::TrainingFailure {
                epoch,
                reason: e.to_string(),
            })?;
            if !metric.is_finite() {
                return Err(Error::TrainingFailure {
                    epoch,
                    reason: format!("non-finite held-out metric {metric}"),
                });
            }
            // Strictly better keeps the earliest best epoch on ties.
            if best.as_ref().is_none_or(|(b, _)| metric > *b) {
                best = Some((metric, model.params.clone()));
            }
        }
    }

    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(model)
}

/// Backpropagates a logit-space gradient into parameter space and adds it
/// to `acc`.
fn accumulate_param_grad(model: &Model, x: &[f64], logit_grad: &[f64], acc: &mut [f64]) {
    let n = model.input_dim;
    let m = model.class_count;
    match model.architecture {
        Architecture::SoftmaxRegression => {
            for (c, &g) in logit_grad.iter().enumerate() {
                let row = &mut acc[c * n..(c + 1) * n];
                for (a, &xv) in row.iter_mut().zip(x) {
                    *a += g * xv;
                }
                acc[m * n + c] += g;
            }
        }
        Architecture::Mlp { hidden_size } | Architecture::SineMlp { hidden_size, .. } => {
            let h = hidden_size;
            let sine = matches!(model.architecture, Architecture::SineMlp { .. });
            let pre = linear_forward(&model.params, x, n, h);
            let hidden: Vec<f64> =
                pre.iter().map(|&z| if sine { z.sin() } else { z.tanh() }).collect();
            let w2_offset = h * n + h;
            // Output layer: dW₂ = g·aᵀ, db₂ = g.
            for (c, &g) in logit_grad.iter().enumerate() {
                let row = &mut acc[w2_offset + c * h..w2_offset + (c + 1) * h];
                for (a, &hv) in row.iter_mut().zip(&hidden) {
                    *a += g * hv;
                }
                acc[w2_offset + m * h + c] += g;
            }
            // Hidden layer: dh_j = (Σ_c g_c W₂[c][j]) · act'(z_j), with
            // act' = 1 − a² for tanh and cos(z) for sine.
            for j in 0..h {
                let mut back = 0.0;
                for (c, &g) in logit_grad.iter().enumerate() {
                    back += g * model.params[w2_offset + c * h + j];
                }
                let deriv =
                    if sine { pre[j].cos() } else { 1.0 - hidden[j] * hidden[j] };
                let dh = back * deriv;
                let row = &mut acc[j * n..(j + 1) * n];
                for (a, &xv) in row.iter_mut().zip(x) {
                    *a += dh * xv;
                }
                acc[h * n + j] += dh;
            }
        }
    }
}

/// Fraction of examples whose argmax prediction matches the label; argmax
/// ties resolve to the lowest class index.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("accuracy requires labels".into()))?;
    if data.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty dataset".into()));
    }
    let mut hits = 0usize;
    for (x, &label) in data.features.iter().zip(labels) {
        if model.predict(x)?.argmax() == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_blobs, split, BlobParams};
    use crate::watermark::WatermarkKey;

    fn blob_data(seed: u64) -> Dataset {
        make_blobs(&BlobParams { classes: 3, dims: 8, per_class: 150, spread: 0.08, seed }).unwrap()
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig { epochs: 30, batch_size: 16, learning_rate: 0.5, seed, ..TrainConfig::default() }
    }

    /// Labels form stripes along a fixed direction: class = sign of
    /// cos(f·u·x). Fitting this requires expressing a mid-band oscillation.
    fn striped_data(frequency: f64, count: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = [0.8f64, 0.6];
        let mut features = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let p = u[0] * x[0] + u[1] * x[1];
            labels.push(usize::from((frequency * p).cos() > 0.0));
            features.push(x);
        }
        Dataset {
            features,
            labels: Some(labels),
            split_tag: crate::datagen::SplitTag::Full,
            class_count: 2,
        }
    }

    #[test]
    fn sine_features_fit_oscillatory_labels_where_tanh_cannot() {
        let train = striped_data(40.0, 1200, 5);
        let test = striped_data(40.0, 400, 6);
        let cfg =
            TrainConfig { epochs: 200, learning_rate: 0.25, seed: 9, ..TrainConfig::default() };
        let sine = train_teacher(
            &train,
            Architecture::SineMlp { hidden_size: 64, frequency_scale: 50.0 },
            &cfg,
            None,
        )
        .unwrap();
        let tanh = train_teacher(&train, Architecture::Mlp { hidden_size: 64 }, &cfg, None).unwrap();
        let sine_acc = accuracy(&sine, &test).unwrap();
        let tanh_acc = accuracy(&tanh, &test).unwrap();
        assert!(
            sine_acc > 0.9,
            "sine features should resolve ~9 stripes across the unit square, got {sine_acc}"
        );
        assert!(
            tanh_acc < 0.8,
            "a tanh layer at standard init should stay near chance on stripes \
             within this budget, got {tanh_acc}"
        );
    }

    #[test]
    fn sine_feature_training_is_deterministic() {
        let data = blob_data(3);
        let arch = Architecture::SineMlp { hidden_size: 12, frequency_scale: 25.0 };
        let a = train_teacher(&data, arch, &quick_cfg(4), None).unwrap();
        let b = train_teacher(&data, arch, &quick_cfg(4), None).unwrap();
        assert_eq!(a.params(), b.params(), "same seed must give bit-identical sine-net parameters");
    }

    #[test]
    fn sine_feature_scale_must_be_positive_and_finite() {
        let arch = Architecture::SineMlp { hidden_size: 8, frequency_scale: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = Model::init(arch, 4, 3, &mut rng).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "zero frequency scale must be rejected");
    }

    #[test]
    fn softmax_regression_learns_separable_blobs() {
        for seed in 0..5 {
            let data = make_blobs(&BlobParams {
                classes: 2,
                dims: 4,
                per_class: 200,
                spread: 0.05,
                seed,
            })
            .unwrap();
            let (train, _, test) = split(&data, (0.6, 0.2, 0.2), seed).unwrap();
            let model =
                train_teacher(&train, Architecture::SoftmaxRegression, &quick_cfg(seed), None)
                    .unwrap();
            let acc = accuracy(&model, &test).unwrap();
            assert!(acc > 0.98, "seed {seed}: accuracy {acc}");
        }
    }

    #[test]
    fn training_is_bit_deterministic_per_seed() {
        let data = blob_data(3);
        let cfg = quick_cfg(9);
        let a = train_teacher(&data, Architecture::SoftmaxRegression, &cfg, None).unwrap();
        let b = train_teacher(&data, Architecture::SoftmaxRegression, &cfg, None).unwrap();
        assert_eq!(a.params(), b.params());

        let c = train_teacher(
            &data,
            Architecture::Mlp { hidden_size: 16 },
            &cfg,
            None,
        )
        .unwrap();
        let d = train_teacher(&data, Architecture::Mlp { hidden_size: 16 }, &cfg, None).unwrap();
        assert_eq!(c.params(), d.params());
    }

    #[test]
    fn zero_epsilon_watermark_matches_plain_training_bit_for_bit() {
        let data = blob_data(5);
        let cfg = quick_cfg(2);
        let key = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            WatermarkKey::sample(0, 40.0, 8, &mut rng).unwrap()
        };
        let wm = WatermarkConfig::new(key, 0.0).unwrap();
        let plain = train_teacher(&data, Architecture::SoftmaxRegression, &cfg, None).unwrap();
        let watermarked =
            train_teacher(&data, Architecture::SoftmaxRegression, &cfg, Some(wm)).unwrap();
        assert_eq!(plain.params(), watermarked.params());
    }

    #[test]
    fn watermarked_teacher_stays_close_in_accuracy() {
        let data = blob_data(7);
        let (train, _, test) = split(&data, (0.6, 0.2, 0.2), 7).unwrap();
        let cfg = quick_cfg(1);
        let plain = train_teacher(&train, Architecture::SoftmaxRegression, &cfg, None).unwrap();
        let key = {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            WatermarkKey::sample(0, 40.0, 8, &mut rng).unwrap()
        };
        let wm = WatermarkConfig::new(key, 0.05).unwrap();
        let marked = train_teacher(&train, Architecture::SoftmaxRegression, &cfg, Some(wm)).unwrap();
        let gap = accuracy(&plain, &test).unwrap() - accuracy(&marked, &test).unwrap();
        assert!(gap <= 0.01, "accuracy gap {gap}");
    }

    #[test]
    fn ensemble_prediction_averages_members() {
        let data = blob_data(11);
        let cfg = quick_cfg(3);
        let m1 = train_teacher(&data, Architecture::SoftmaxRegression, &cfg, None).unwrap();
        let m2 = train_teacher(
            &data,
            Architecture::SoftmaxRegression,
            &TrainConfig { seed: 4, ..cfg.clone() },
            None,
        )
        .unwrap();
        let x = data.features[0].clone();
        let q1 = m1.predict(&x).unwrap();
        let q2 = m2.predict(&x).unwrap();
        let ens = Ensemble::new(vec![m1, m2]).unwrap();
        let q = ens.predict(&x).unwrap();
        for k in 0..3 {
            assert!((q.get(k) - 0.5 * (q1.get(k) + q2.get(k))).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_ensemble_is_identity() {
        let data = blob_data(13);
        let model = train_teacher(&data, Architecture::SoftmaxRegression, &quick_cfg(5), None)
            .unwrap();
        let x = data.features[10].clone();
        let direct = model.predict(&x).unwrap();
        let ens = Ensemble::new(vec![model]).unwrap();
        assert_eq!(ens.predict(&x).unwrap(), direct);
    }

    #[test]
    fn ensemble_rejects_mismatched_members() {
        let a = blob_data(1);
        let b = make_blobs(&BlobParams { classes: 3, dims: 6, per_class: 50, spread: 0.1, seed: 2 })
            .unwrap();
        let ma = train_teacher(&a, Architecture::SoftmaxRegression, &quick_cfg(1), None).unwrap();
        let mb = train_teacher(&b, Architecture::SoftmaxRegression, &quick_cfg(1), None).unwrap();
        assert!(Ensemble::new(vec![ma, mb]).is_err());
        assert!(Ensemble::new(vec![]).is_err());
    }

    #[test]
    fn distilled_student_tracks_its_teacher() {
        let data = blob_data(17);
        let (teacher_half, student_half, test) = split(&data, (0.4, 0.4, 0.2), 17).unwrap();
        let teacher =
            train_teacher(&teacher_half, Architecture::SoftmaxRegression, &quick_cfg(6), None)
                .unwrap();
        let teacher_acc = accuracy(&teacher, &test).unwrap();
        let ens = Ensemble::new(vec![teacher]).unwrap();
        let student = distill(
            &ens,
            &student_half.without_labels(),
            Architecture::SoftmaxRegression,
            &TrainConfig { epochs: 60, ..quick_cfg(7) },
            DistillLoss::Kl,
        )
        .unwrap();
        let student_acc = accuracy(&student, &test).unwrap();
        assert!(
            teacher_acc - student_acc <= 0.02,
            "teacher {teacher_acc} vs student {student_acc}"
        );

        // After convergence the per-point squared gap on any class is small.
        let targets = ens.predict_batch(&student_half.features).unwrap();
        let outputs = student.predict_batch(&student_half.features).unwrap();
        let mut l_se = 0.0;
        for (t, s) in targets.iter().zip(&outputs) {
            let d = t.get(0) - s.get(0);
            l_se += d * d;
        }
        let per_point = l_se / student_half.len() as f64;
        assert!(per_point < 1e-2, "per-point squared error {per_point}");
    }

    #[test]
    fn mixed_loss_requires_labels() {
        let data = blob_data(19);
        let model = train_teacher(&data, Architecture::SoftmaxRegression, &quick_cfg(8), None)
            .unwrap();
        let ens = Ensemble::new(vec![model]).unwrap();
        let err = distill(
            &ens,
            &data.without_labels(),
            Architecture::SoftmaxRegression,
            &quick_cfg(9),
            DistillLoss::KlPlusCe,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let m = 5;
            let target = softmax(
                &(0..m).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>(),
            )
            .unwrap();
            let logits: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let student = softmax(&logits).unwrap();
            let analytic = grad_kl_logits(&student, &target).unwrap();
            let h = 1e-5;
            for k in 0..m {
                let mut plus = logits.clone();
                plus[k] += h;
                let mut minus = logits.clone();
                minus[k] -= h;
                let lp = kl_divergence(&target, &softmax(&plus).unwrap()).unwrap();
                let lm = kl_divergence(&target, &softmax(&minus).unwrap()).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(analytic[k].abs()).max(1e-3);
                assert!(((analytic[k] - fd) / denom).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sine_backprop_matches_finite_differences_in_parameter_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let arch = Architecture::SineMlp { hidden_size: 4, frequency_scale: 12.0 };
        let model = Model::init(arch, 3, 3, &mut rng).unwrap();
        let x = vec![0.3, -0.7, 0.5];
        let target = softmax(&[0.4, -0.2, 0.9]).unwrap();

        let student = model.predict_plain(&x).unwrap();
        let logit_grad = grad_kl_logits(&student, &target).unwrap();
        let mut analytic = vec![0.0; model.params().len()];
        accumulate_param_grad(&model, &x, &logit_grad, &mut analytic);

        let h = 1e-6;
        let loss_at = |params: &[f64]| {
            let m = Model::from_parts(arch, 3, 3, params.to_vec(), None).unwrap();
            kl_divergence(&target, &m.predict_plain(&x).unwrap()).unwrap()
        };
        for k in 0..model.params().len() {
            let mut plus = model.params().to_vec();
            plus[k] += h;
            let mut minus = model.params().to_vec();
            minus[k] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let denom = fd.abs().max(analytic[k].abs()).max(1e-4);
            assert!(
                ((analytic[k] - fd) / denom).abs() < 1e-5,
                "sine-net param gradient {k}: analytic {} vs finite difference {fd}",
                analytic[k]
            );
        }
    }

    #[test]
    fn divergent_training_reports_the_epoch() {
        // A near-overflow learning rate pushes the parameters past f64::MAX
        // within a few momentum-amplified batches.
        let data = blob_data(29);
        let cfg = TrainConfig { learning_rate: 1e308, epochs: 10, ..quick_cfg(1) };
        let err = train_teacher(&data, Architecture::SoftmaxRegression, &cfg, None)
            .unwrap_err();
        assert!(matches!(err, Error::TrainingFailure { .. }), "got {err:?}");
    }

    #[test]
    fn accuracy_requires_labels_and_data() {
        let data = blob_data(31);
        let model = train_teacher(&data, Architecture::SoftmaxRegression, &quick_cfg(2), None)
            .unwrap();
        assert!(accuracy(&model, &data.without_labels()).is_err());
    }

    #[test]
    fn constant_predictor_scores_chance_level() {
        // Zero weights predict class 0 everywhere (argmax tie → lowest
        // index); balanced 3-class data then scores 1/3.
        let data = blob_data(37);
        let params = vec![0.0; Architecture::SoftmaxRegression.param_count(8, 3)];
        let model =
            Model::from_parts(Architecture::SoftmaxRegression, 8, 3, params, None).unwrap();
        let acc = accuracy(&model, &data).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn batch_prediction_matches_sequential() {
        let data = blob_data(41);
        let model = train_teacher(&data, Architecture::Mlp { hidden_size: 12 }, &quick_cfg(3), None)
            .unwrap();
        let par = model.predict_batch(&data.features[..64]).unwrap();
        let seq = model.predict_batch_seq(&data.features[..64]).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn train_config_validation() {
        let data = blob_data(43);
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { holdout_fraction: 0.9, ..TrainConfig::default() },
        ] {
            assert!(train_teacher(&data, Architecture::SoftmaxRegression, &bad, None).is_err());
        }
    }
}
