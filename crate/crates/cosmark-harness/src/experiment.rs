//! End-to-end ranking experiments: train teacher pools, distill students,
//! extract watermark scores, and rank.
//!
//! Every experiment is a pure function of its config: all randomness flows
//! from the master seed through [`derive_seed`] with a distinct domain per
//! stage, so adding a stage or resizing one pool never perturbs the others.
//! Independent train/distill jobs run on a worker pool (rayon when the
//! `parallel` feature is on); results are aggregated in fixed job order, so
//! the parallel and sequential schedules produce identical reports.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cosmark::datagen::{sample_queries, Dataset};
use cosmark::nnet::{
    accuracy, distill, train_teacher, Architecture, DistillLoss, Ensemble, Model, TrainConfig,
};
use cosmark::spectrum::{
    extract_signal, ExtractionConfig, FilterDirection, FilterPolicy,
};
use cosmark::{WatermarkConfig, WatermarkKey};
use rand::SeedableRng;

use crate::data::{build_experiment_data, DataConfig, ExperimentData, KeyPolicy};
use crate::error::{Error, Result};
use crate::ranking::{mean, sample_std, RankEntry, RankingTask};
use crate::seeds::derive_seed;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs independent jobs on the worker pool, preserving input order in the
/// output. The closure must be deterministic per item; under the `parallel`
/// feature items run concurrently but are collected back in order, so both
/// schedules aggregate identically.
fn map_jobs<I, T, F>(items: Vec<I>, f: F) -> Result<Vec<T>>
where
    I: Send,
    T: Send,
    F: Fn(I) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Student (distilled model) architecture and training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    /// Hidden width of the sine-feature student.
    pub hidden_size: usize,
    /// The student's hidden-layer frequency scale is this factor times the
    /// largest key frequency in the experiment, so the initial feature bank
    /// spans every embedded oscillation.
    pub frequency_scale_factor: f64,
    /// SGD parameters; the seed field is overridden per job.
    pub train: TrainConfig,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            hidden_size: 192,
            frequency_scale_factor: 1.3,
            train: TrainConfig { epochs: 240, learning_rate: 0.3, ..TrainConfig::default() },
        }
    }
}

/// Full parameter set for one ranking experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Root of all derived randomness.
    pub master_seed: u64,
    /// Ensemble size N: one watermarked member plus N − 1 unwatermarked
    /// (single-watermark), or N distinct-key members (multi-watermark).
    pub ensemble_size: usize,
    /// Watermark amplitude ε.
    pub epsilon: f64,
    /// Number of watermark keys (one marked teacher each).
    pub watermark_count: usize,
    /// Size of the shared unwatermarked teacher pool.
    pub unwatermarked_count: usize,
    /// Positive students distilled per watermarked ensemble.
    pub students_per_ensemble: usize,
    /// Negative students distilled from an all-unwatermarked ensemble.
    pub plain_student_count: usize,
    /// Negative students trained directly on ground-truth labels.
    pub independent_student_count: usize,
    /// Dataset shape and curation screens.
    pub data: DataConfig,
    /// Key drawing screens and the frequency rule.
    pub keys: KeyPolicy,
    /// Teacher model family.
    pub teacher_architecture: Architecture,
    /// Teacher SGD parameters; the seed field is overridden per job.
    pub teacher_train: TrainConfig,
    /// Student architecture and training.
    pub student: StudentConfig,
    /// Distillation objective for ensemble-distilled students.
    pub distill_loss: DistillLoss,
    /// Extraction query count (drawn from the full dataset without labels).
    pub query_count: usize,
    /// Spectral extraction parameters.
    pub extraction: ExtractionConfig,
    /// Accuracy-gate tolerance α: a watermarked teacher should cost at most
    /// this much absolute accuracy.
    pub accuracy_tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            ensemble_size: 1,
            epsilon: 0.1,
            watermark_count: 4,
            unwatermarked_count: 8,
            students_per_ensemble: 4,
            plain_student_count: 4,
            independent_student_count: 4,
            data: DataConfig::default(),
            keys: KeyPolicy::default(),
            teacher_architecture: Architecture::SoftmaxRegression,
            teacher_train: TrainConfig::default(),
            student: StudentConfig::default(),
            distill_loss: DistillLoss::Kl,
            query_count: 4000,
            extraction: ExtractionConfig {
                filter: FilterPolicy::Absolute(0.2),
                direction: FilterDirection::KeepBelow,
                ..ExtractionConfig::default()
            },
            accuracy_tolerance: 0.01,
        }
    }
}

impl ExperimentConfig {
    /// Validates field ranges and cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.keys.validate()?;
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if self.watermark_count == 0 {
            return Err(Error::Config("watermark_count must be at least 1".into()));
        }
        if self.students_per_ensemble == 0 {
            return Err(Error::Config("students_per_ensemble must be at least 1".into()));
        }
        if self.unwatermarked_count < self.ensemble_size {
            return Err(Error::Config(format!(
                "unwatermarked_count ({}) must be at least ensemble_size ({}) so the \
                 all-unwatermarked control ensemble can match the watermarked ones",
                self.unwatermarked_count, self.ensemble_size
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon {} must be nonnegative and finite",
                self.epsilon
            )));
        }
        if self.student.hidden_size == 0 {
            return Err(Error::Config("student.hidden_size must be positive".into()));
        }
        if !(self.student.frequency_scale_factor.is_finite()
            && self.student.frequency_scale_factor > 0.0)
        {
            return Err(Error::Config(
                "student.frequency_scale_factor must be positive and finite".into(),
            ));
        }
        if self.query_count < 16 {
            return Err(Error::Config(format!(
                "query_count {} is too small for spectral extraction",
                self.query_count
            )));
        }
        if !(self.accuracy_tolerance.is_finite() && self.accuracy_tolerance >= 0.0) {
            return Err(Error::Config(
                "accuracy_tolerance must be nonnegative and finite".into(),
            ));
        }
        Ok(())
    }
}

/// One watermarked teacher's accuracy-gate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEntry {
    /// Key index of the watermarked teacher.
    pub key_index: usize,
    /// Test accuracy of the watermarked teacher.
    pub marked_accuracy: f64,
    /// Test accuracy of its unwatermarked twin (same seed, ε = 0).
    pub twin_accuracy: f64,
    /// `twin_accuracy − marked_accuracy`: what the watermark cost.
    pub absolute_drop: f64,
    /// Absolute-form gate: `absolute_drop > tolerance`.
    pub exceeds_absolute: bool,
    /// `pool_mean − marked_accuracy` against the whole unwatermarked pool.
    pub pool_deviation: f64,
    /// Pool-form gate: `pool_deviation > tolerance`.
    pub exceeds_pool: bool,
}

/// Accuracy-gate outcome for all watermarked teachers in one experiment.
///
/// Two forms are evaluated and both reported: the absolute form compares
/// each watermarked teacher with its same-seed unwatermarked twin; the pool
/// form compares it with the mean accuracy of every unwatermarked teacher
/// trained in the experiment. Violations are reported, never silently
/// dropped — the experiment proceeds with the teacher included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    /// Gate tolerance α.
    pub tolerance: f64,
    /// Per-teacher evaluations, in key order.
    pub entries: Vec<GateEntry>,
    /// Mean test accuracy over all unwatermarked teachers (pool + twins).
    pub unwatermarked_mean: f64,
    /// Key indices whose absolute-form gate failed.
    pub absolute_violations: Vec<usize>,
    /// Key indices whose pool-form gate failed.
    pub pool_violations: Vec<usize>,
}

/// Outcome of a single-watermark ranking experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleWatermarkReport {
    /// Master seed the run derives from.
    pub master_seed: u64,
    /// Accepted blob-layout seed.
    pub data_seed: u64,
    /// Layouts rejected before acceptance.
    pub layout_attempts: u32,
    /// Human-readable statement of the frequency rescaling rule in force.
    pub frequency_note: String,
    /// The drawn watermark keys, in key order.
    pub keys: Vec<WatermarkKey>,
    /// Accuracy-gate evaluation of every watermarked teacher.
    pub gate: GateReport,
    /// One ranking task per key: every student scored with that key.
    pub rankings: Vec<RankingTask>,
    /// Mean average precision across keys.
    pub mean_ap: f64,
    /// Sample standard deviation of AP across keys.
    pub ap_std: f64,
    /// Mean extraction score of matched (positive) students on their own key.
    pub mean_positive_p_snr: f64,
    /// Mean test accuracy of the watermarked teachers.
    pub mean_marked_accuracy: f64,
}

/// Everything an experiment trained, by job name, plus the query sample the
/// scores were extracted on — enough to checkpoint a run and regenerate any
/// periodogram.
#[derive(Debug, Clone)]
pub struct ExperimentModels {
    /// Teachers in job order (pool, then marked/twin pairs).
    pub teachers: Vec<(String, Model)>,
    /// Students in job order (the stable order of every ranking).
    pub students: Vec<(String, Model)>,
    /// Extraction inputs.
    pub queries: Vec<Vec<f64>>,
}

/// Shared first stages: curated data, screened keys, query sample.
struct Stage0 {
    data: ExperimentData,
    keys: Vec<WatermarkKey>,
    queries: Vec<Vec<f64>>,
}

fn stage0(config: &ExperimentConfig, explicit_keys: Option<&[WatermarkKey]>) -> Result<Stage0> {
    let data = build_experiment_data(&config.data, config.master_seed)?;
    let keys = match explicit_keys {
        Some(keys) => {
            for (second, key) in keys.iter().enumerate() {
                key.validate()?;
                if key.dim() != config.data.dims {
                    return Err(Error::Config(format!(
                        "explicit key {second} has dimension {}, data has {}",
                        key.dim(),
                        config.data.dims
                    )));
                }
                if let Some(first) = keys[..second].iter().position(|k| k == key) {
                    return Err(Error::DuplicateKey { first, second });
                }
            }
            keys.to_vec()
        }
        None => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, "key-draw", 0));
            let mut keys: Vec<WatermarkKey> = Vec::with_capacity(config.watermark_count);
            for k in 0..config.watermark_count {
                // Most isolated classes first: a target class whose blob
                // abuts another injects broadband boundary noise into the
                // very output channel the signal rides on.
                let target = data.isolation_order[k % config.data.classes];
                keys.push(draw_screened(config, &data, &keys, target, &mut rng)?);
            }
            keys
        }
    };
    let query_seed = derive_seed(config.master_seed, "queries", 0);
    let queries = sample_queries(&data.full, config.query_count, query_seed)?.features;
    Ok(Stage0 { data, keys, queries })
}

fn draw_screened(
    config: &ExperimentConfig,
    data: &ExperimentData,
    existing: &[WatermarkKey],
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<WatermarkKey> {
    crate::data::draw_key(
        &config.keys,
        &data.teacher.features,
        existing,
        target,
        config.data.dims,
        rng,
    )
}

fn train_job(
    data: &Dataset,
    architecture: Architecture,
    base: &TrainConfig,
    seed: u64,
    wm: Option<WatermarkConfig>,
    job: &str,
) -> Result<Model> {
    let cfg = TrainConfig { seed, ..base.clone() };
    train_teacher(data, architecture, &cfg, wm)
        .map_err(|source| Error::Training { job: job.to_string(), source })
}

fn distill_job(
    ensemble: &Ensemble,
    data: &Dataset,
    architecture: Architecture,
    base: &TrainConfig,
    seed: u64,
    loss: DistillLoss,
    job: &str,
) -> Result<Model> {
    let cfg = TrainConfig { seed, ..base.clone() };
    distill(ensemble, data, architecture, &cfg, loss)
        .map_err(|source| Error::Training { job: job.to_string(), source })
}

/// Scores one student against every key, in key order.
fn score_student(
    student: &Model,
    queries: &[Vec<f64>],
    keys: &[WatermarkKey],
    extraction: &ExtractionConfig,
    job: &str,
) -> Result<Vec<f64>> {
    let outputs = student
        .predict_batch(queries)
        .map_err(|source| Error::Training { job: format!("{job} (predict)"), source })?;
    keys.iter()
        .map(|key| {
            extract_signal(queries, &outputs, key, extraction)
                .map(|e| e.report.p_snr)
                .map_err(|source| Error::Training { job: format!("{job} (extract)"), source })
        })
        .collect()
}

fn gate_report(
    config: &ExperimentConfig,
    test: &Dataset,
    marked: &[Model],
    twins: &[Model],
    plains: &[Model],
) -> Result<GateReport> {
    let acc = |m: &Model| -> Result<f64> { Ok(accuracy(m, test)?) };
    let marked_acc: Vec<f64> = marked.iter().map(&acc).collect::<Result<_>>()?;
    let twin_acc: Vec<f64> = twins.iter().map(&acc).collect::<Result<_>>()?;
    let plain_acc: Vec<f64> = plains.iter().map(&acc).collect::<Result<_>>()?;
    let pool: Vec<f64> = plain_acc.iter().chain(&twin_acc).copied().collect();
    let pool_mean = mean(&pool);
    let tol = config.accuracy_tolerance;
    let entries: Vec<GateEntry> = marked_acc
        .iter()
        .zip(&twin_acc)
        .enumerate()
        .map(|(k, (&m, &t))| GateEntry {
            key_index: k,
            marked_accuracy: m,
            twin_accuracy: t,
            absolute_drop: t - m,
            exceeds_absolute: t - m > tol,
            pool_deviation: pool_mean - m,
            exceeds_pool: pool_mean - m > tol,
        })
        .collect();
    Ok(GateReport {
        tolerance: tol,
        absolute_violations: entries
            .iter()
            .filter(|e| e.exceeds_absolute)
            .map(|e| e.key_index)
            .collect(),
        pool_violations: entries
            .iter()
            .filter(|e| e.exceeds_pool)
            .map(|e| e.key_index)
            .collect(),
        unwatermarked_mean: pool_mean,
        entries,
    })
}

/// Runs one single-watermark ranking experiment.
///
/// Trains an unwatermarked teacher pool and one watermarked teacher per key
/// (plus a same-seed unwatermarked twin for the accuracy gate), forms one
/// ensemble per key with exactly one watermarked member, distills
/// `students_per_ensemble` positive students per ensemble, adds negatives
/// (students of the other keys' ensembles, students of an all-unwatermarked
/// ensemble, and independents trained on ground truth), scores every student
/// against every key by windowed spectral SNR, and computes one ranking task
/// per key plus mAP ± std across keys.
pub fn run_single_watermark_experiment(
    config: &ExperimentConfig,
) -> Result<SingleWatermarkReport> {
    run_single_watermark_experiment_full(config).map(|(report, _)| report)
}

/// [`run_single_watermark_experiment`] variant that also returns the trained
/// models and the query sample, for checkpointing runs to disk.
pub fn run_single_watermark_experiment_full(
    config: &ExperimentConfig,
) -> Result<(SingleWatermarkReport, ExperimentModels)> {
    config.validate()?;
    let Stage0 { data, keys, queries } = stage0(config, None)?;
    let n = config.ensemble_size;
    let w = config.watermark_count;

    // --- teachers ------------------------------------------------------
    // Job list: plains 0..P, then per key (marked, twin) sharing a seed so
    // the twin isolates exactly the watermark's effect on accuracy.
    let mut teacher_jobs: Vec<(String, u64, Option<WatermarkConfig>)> = Vec::new();
    for i in 0..config.unwatermarked_count {
        let seed = derive_seed(config.master_seed, "plain-teacher", i as u64);
        teacher_jobs.push((format!("plain-teacher-{i}"), seed, None));
    }
    for (k, key) in keys.iter().enumerate() {
        let seed = derive_seed(config.master_seed, "marked-teacher", k as u64);
        let wm = WatermarkConfig::new(key.clone(), config.epsilon)?;
        teacher_jobs.push((format!("marked-teacher-{k}"), seed, Some(wm)));
        teacher_jobs.push((format!("twin-teacher-{k}"), seed, None));
    }
    let teacher_data = &data.teacher;
    let trained: Vec<(String, Model)> = map_jobs(teacher_jobs, |(job, seed, wm)| {
        let model = train_job(
            teacher_data,
            config.teacher_architecture,
            &config.teacher_train,
            seed,
            wm,
            &job,
        )?;
        Ok((job, model))
    })?;
    let plains: Vec<Model> =
        trained[..config.unwatermarked_count].iter().map(|(_, m)| m.clone()).collect();
    let mut marked = Vec::with_capacity(w);
    let mut twins = Vec::with_capacity(w);
    for pair in trained[config.unwatermarked_count..].chunks(2) {
        marked.push(pair[0].1.clone());
        twins.push(pair[1].1.clone());
    }
    let gate = gate_report(config, &data.test, &marked, &twins, &plains)?;

    // --- students ------------------------------------------------------
    // All students share one architecture whose feature bank covers the
    // highest key frequency, so positives and negatives differ only in what
    // they were distilled from.
    let f_cover = keys.iter().map(|k| k.frequency).fold(0.0_f64, f64::max);
    let student_arch = Architecture::SineMlp {
        hidden_size: config.student.hidden_size,
        frequency_scale: config.student.frequency_scale_factor * f_cover,
    };
    let distill_data = match config.distill_loss {
        DistillLoss::Kl => data.student.without_labels(),
        DistillLoss::KlPlusCe => data.student.clone(),
    };

    let mut ensembles = Vec::with_capacity(w);
    for m in &marked {
        let mut members = vec![m.clone()];
        members.extend(plains[..n - 1].iter().cloned());
        ensembles.push(Ensemble::new(members)?);
    }
    let control_ensemble = Ensemble::new(plains[..n].to_vec())?;

    // Job list: per-key positives, control-ensemble students, independents —
    // ids in this order define the stable student order of every ranking.
    enum StudentJob {
        Distilled { ensemble_index: Option<usize> },
        Independent,
    }
    let mut student_jobs: Vec<(String, u64, StudentJob)> = Vec::new();
    for k in 0..w {
        for s in 0..config.students_per_ensemble {
            let index = (k * config.students_per_ensemble + s) as u64;
            student_jobs.push((
                format!("student-{k}-{s}"),
                derive_seed(config.master_seed, "student", index),
                StudentJob::Distilled { ensemble_index: Some(k) },
            ));
        }
    }
    for s in 0..config.plain_student_count {
        student_jobs.push((
            format!("control-student-{s}"),
            derive_seed(config.master_seed, "control-student", s as u64),
            StudentJob::Distilled { ensemble_index: None },
        ));
    }
    for s in 0..config.independent_student_count {
        student_jobs.push((
            format!("independent-student-{s}"),
            derive_seed(config.master_seed, "independent-student", s as u64),
            StudentJob::Independent,
        ));
    }

    let students: Vec<(String, Option<usize>, Model)> =
        map_jobs(student_jobs, |(job, seed, kind)| {
            let (source, model) = match kind {
                StudentJob::Distilled { ensemble_index } => {
                    let ensemble = match ensemble_index {
                        Some(k) => &ensembles[k],
                        None => &control_ensemble,
                    };
                    (
                        ensemble_index,
                        distill_job(
                            ensemble,
                            &distill_data,
                            student_arch,
                            &config.student.train,
                            seed,
                            config.distill_loss,
                            &job,
                        )?,
                    )
                }
                StudentJob::Independent => (
                    None,
                    train_job(
                        &data.student,
                        student_arch,
                        &config.student.train,
                        seed,
                        None,
                        &job,
                    )?,
                ),
            };
            Ok((job, source, model))
        })?;

    // --- extraction and ranking -----------------------------------------
    let score_rows: Vec<Vec<f64>> = map_jobs(
        students.iter().collect::<Vec<_>>(),
        |(job, _, model)| score_student(model, &queries, &keys, &config.extraction, job),
    )?;

    let mut rankings = Vec::with_capacity(w);
    for k in 0..w {
        let entries: Vec<RankEntry> = students
            .iter()
            .zip(&score_rows)
            .map(|((id, source, _), row)| RankEntry {
                student_id: id.clone(),
                is_positive: *source == Some(k),
                p_snr: row[k],
            })
            .collect();
        rankings.push(RankingTask::new(k, entries)?);
    }

    let aps: Vec<f64> = rankings.iter().map(|r| r.ap).collect();
    let positive_scores: Vec<f64> = rankings
        .iter()
        .flat_map(|r| r.entries.iter().filter(|e| e.is_positive).map(|e| e.p_snr))
        .collect();
    let marked_accs: Vec<f64> = gate.entries.iter().map(|e| e.marked_accuracy).collect();

    let report = SingleWatermarkReport {
        master_seed: config.master_seed,
        data_seed: data.data_seed,
        layout_attempts: data.layout_attempts,
        frequency_note: config.keys.frequency.rule_note(),
        keys,
        mean_ap: mean(&aps),
        ap_std: sample_std(&aps),
        mean_positive_p_snr: mean(&positive_scores),
        mean_marked_accuracy: mean(&marked_accs),
        gate,
        rankings,
    };
    let models = ExperimentModels {
        teachers: trained,
        students: students.into_iter().map(|(job, _, model)| (job, model)).collect(),
        queries,
    };
    Ok((report, models))
}

/// Repeated single-watermark runs over several master seeds.
///
/// The per-run reports each carry the AP spread **across watermarks**
/// (`ap_std`); this aggregate adds the spread of `mean_ap` **across runs**.
/// Both are legitimate readings of "mAP ± std", so both are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedRuns {
    /// One full report per master seed, in input order.
    pub runs: Vec<SingleWatermarkReport>,
    /// Mean of the per-run mean APs.
    pub mean_ap: f64,
    /// Sample standard deviation of mean AP across runs.
    pub ap_std_over_runs: f64,
}

/// Runs the single-watermark experiment once per master seed.
pub fn run_repeated(config: &ExperimentConfig, master_seeds: &[u64]) -> Result<RepeatedRuns> {
    if master_seeds.is_empty() {
        return Err(Error::Config("run_repeated needs at least one master seed".into()));
    }
    let mut runs = Vec::with_capacity(master_seeds.len());
    for &seed in master_seeds {
        let cfg = ExperimentConfig { master_seed: seed, ..config.clone() };
        runs.push(run_single_watermark_experiment(&cfg)?);
    }
    let means: Vec<f64> = runs.iter().map(|r| r.mean_ap).collect();
    Ok(RepeatedRuns { mean_ap: mean(&means), ap_std_over_runs: sample_std(&means), runs })
}

/// Per-key summary of a multi-watermark experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyCrosstalk {
    /// Key index.
    pub key_index: usize,
    /// Mean extraction score over students whose ensemble carried this key.
    pub own_mean_p_snr: f64,
    /// Mean extraction score over students whose ensemble did not.
    pub cross_mean_p_snr: f64,
    /// `own_mean_p_snr / cross_mean_p_snr`.
    pub separation_ratio: f64,
}

/// Outcome of a multi-watermark experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiWatermarkReport {
    /// Master seed the run derives from.
    pub master_seed: u64,
    /// Accepted blob-layout seed.
    pub data_seed: u64,
    /// Frequency rescaling rule in force.
    pub frequency_note: String,
    /// All keys, one per watermarked teacher.
    pub keys: Vec<WatermarkKey>,
    /// Member teacher indices of each distilled ensemble.
    pub ensembles: Vec<Vec<usize>>,
    /// Accuracy-gate evaluation of every watermarked teacher.
    pub gate: GateReport,
    /// One ranking task per key (positives: students whose ensemble carried
    /// the key).
    pub rankings: Vec<RankingTask>,
    /// Mean average precision across keys.
    pub mean_ap: f64,
    /// Sample standard deviation of AP across keys.
    pub ap_std: f64,
    /// Own-vs-cross extraction summary per key.
    pub crosstalk: Vec<KeyCrosstalk>,
}

/// Runs a multi-watermark experiment: every teacher carries a distinct key,
/// ensembles of `ensemble_size` teachers are assembled round-robin, and each
/// key must remain extractable exactly from the students whose ensemble
/// carried it.
///
/// `explicit_keys` overrides the drawn keys (their count must then equal
/// `watermark_count`); exact duplicates are rejected.
pub fn run_multi_watermark_experiment(
    config: &ExperimentConfig,
    explicit_keys: Option<&[WatermarkKey]>,
) -> Result<MultiWatermarkReport> {
    run_multi_watermark_experiment_full(config, explicit_keys).map(|(report, _)| report)
}

/// [`run_multi_watermark_experiment`] variant that also returns the trained
/// models and the query sample, for checkpointing runs to disk.
pub fn run_multi_watermark_experiment_full(
    config: &ExperimentConfig,
    explicit_keys: Option<&[WatermarkKey]>,
) -> Result<(MultiWatermarkReport, ExperimentModels)> {
    config.validate()?;
    let w = config.watermark_count;
    let n = config.ensemble_size;
    if n > w {
        return Err(Error::Config(format!(
            "multi-watermark ensembles draw {n} distinct-key members from {w} teachers; \
             raise watermark_count or lower ensemble_size"
        )));
    }
    if let Some(keys) = explicit_keys {
        if keys.len() != w {
            return Err(Error::Config(format!(
                "{} explicit keys given, watermark_count is {w}",
                keys.len()
            )));
        }
    }
    let Stage0 { data, keys, queries } = stage0(config, explicit_keys)?;

    // --- teachers (every one watermarked) --------------------------------
    let mut teacher_jobs: Vec<(String, u64, Option<WatermarkConfig>)> = Vec::new();
    for (k, key) in keys.iter().enumerate() {
        let seed = derive_seed(config.master_seed, "marked-teacher", k as u64);
        let wm = WatermarkConfig::new(key.clone(), config.epsilon)?;
        teacher_jobs.push((format!("marked-teacher-{k}"), seed, Some(wm)));
        teacher_jobs.push((format!("twin-teacher-{k}"), seed, None));
    }
    let teacher_data = &data.teacher;
    let trained: Vec<(String, Model)> = map_jobs(teacher_jobs, |(job, seed, wm)| {
        let model = train_job(
            teacher_data,
            config.teacher_architecture,
            &config.teacher_train,
            seed,
            wm,
            &job,
        )?;
        Ok((job, model))
    })?;
    let mut marked = Vec::with_capacity(w);
    let mut twins = Vec::with_capacity(w);
    for pair in trained.chunks(2) {
        marked.push(pair[0].1.clone());
        twins.push(pair[1].1.clone());
    }
    let gate = gate_report(config, &data.test, &marked, &twins, &[])?;

    // --- round-robin ensembles -------------------------------------------
    // Member sets [k, k+1, …, k+N−1] mod W; duplicates collapse (W = N
    // yields a single ensemble containing every teacher).
    let mut member_sets: Vec<Vec<usize>> = Vec::new();
    for start in 0..w {
        let mut set: Vec<usize> = (0..n).map(|j| (start + j) % w).collect();
        set.sort_unstable();
        if !member_sets.contains(&set) {
            member_sets.push(set);
        }
    }
    let ensembles: Vec<Ensemble> = member_sets
        .iter()
        .map(|set| Ensemble::new(set.iter().map(|&t| marked[t].clone()).collect()))
        .collect::<cosmark::Result<_>>()?;

    // --- students ---------------------------------------------------------
    let f_cover = keys.iter().map(|k| k.frequency).fold(0.0_f64, f64::max);
    let student_arch = Architecture::SineMlp {
        hidden_size: config.student.hidden_size,
        frequency_scale: config.student.frequency_scale_factor * f_cover,
    };
    let distill_data = match config.distill_loss {
        DistillLoss::Kl => data.student.without_labels(),
        DistillLoss::KlPlusCe => data.student.clone(),
    };
    let mut student_jobs: Vec<(String, u64, usize)> = Vec::new();
    for (e, set) in member_sets.iter().enumerate() {
        for s in 0..config.students_per_ensemble {
            let index = (e * config.students_per_ensemble + s) as u64;
            let members = set.iter().map(ToString::to_string).collect::<Vec<_>>().join("+");
            student_jobs.push((
                format!("student-of-{members}-{s}"),
                derive_seed(config.master_seed, "student", index),
                e,
            ));
        }
    }
    let students: Vec<(String, usize, Model)> = map_jobs(student_jobs, |(job, seed, e)| {
        let model = distill_job(
            &ensembles[e],
            &distill_data,
            student_arch,
            &config.student.train,
            seed,
            config.distill_loss,
            &job,
        )?;
        Ok((job, e, model))
    })?;

    // --- extraction, ranking, crosstalk ------------------------------------
    let score_rows: Vec<Vec<f64>> = map_jobs(
        students.iter().collect::<Vec<_>>(),
        |(job, _, model)| score_student(model, &queries, &keys, &config.extraction, job),
    )?;

    let mut rankings = Vec::with_capacity(w);
    let mut crosstalk = Vec::with_capacity(w);
    for k in 0..w {
        let entries: Vec<RankEntry> = students
            .iter()
            .zip(&score_rows)
            .map(|((id, e, _), row)| RankEntry {
                student_id: id.clone(),
                is_positive: member_sets[*e].contains(&k),
                p_snr: row[k],
            })
            .collect();
        let own: Vec<f64> =
            entries.iter().filter(|e| e.is_positive).map(|e| e.p_snr).collect();
        let cross: Vec<f64> =
            entries.iter().filter(|e| !e.is_positive).map(|e| e.p_snr).collect();
        if cross.is_empty() {
            return Err(Error::Config(format!(
                "key {k} has no cross students (every ensemble carries it); lower \
                 ensemble_size or raise watermark_count"
            )));
        }
        let own_mean = mean(&own);
        let cross_mean = mean(&cross);
        crosstalk.push(KeyCrosstalk {
            key_index: k,
            own_mean_p_snr: own_mean,
            cross_mean_p_snr: cross_mean,
            separation_ratio: own_mean / cross_mean,
        });
        rankings.push(RankingTask::new(k, entries)?);
    }

    let aps: Vec<f64> = rankings.iter().map(|r| r.ap).collect();
    let report = MultiWatermarkReport {
        master_seed: config.master_seed,
        data_seed: data.data_seed,
        frequency_note: config.keys.frequency.rule_note(),
        keys,
        ensembles: member_sets,
        gate,
        mean_ap: mean(&aps),
        ap_std: sample_std(&aps),
        rankings,
        crosstalk,
    };
    let models = ExperimentModels {
        teachers: trained,
        students: students.into_iter().map(|(job, _, model)| (job, model)).collect(),
        queries,
    };
    Ok((report, models))
}

/// One row of the mixed-loss amplitude study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedLossRow {
    /// Watermark amplitude of this run.
    pub epsilon: f64,
    /// Mean AP across keys at this amplitude.
    pub mean_ap: f64,
    /// AP spread across keys.
    pub ap_std: f64,
    /// Mean extraction score of matched students.
    pub mean_positive_p_snr: f64,
}

/// Outcome of the mixed-loss experiment: mAP versus amplitude when students
/// train on the equally weighted sum of the distillation KL term and
/// cross-entropy against ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedLossReport {
    /// One row per amplitude, in input order.
    pub rows: Vec<MixedLossRow>,
    /// Full per-amplitude reports.
    pub runs: Vec<SingleWatermarkReport>,
}

/// Runs the single-watermark experiment with mixed-loss students across an
/// amplitude grid. The ground-truth term pulls students toward the label
/// distribution, diluting the signal that rides on the soft targets, so
/// scores at equal ε come out below their pure-KL counterparts.
pub fn run_mixed_loss_experiment(
    config: &ExperimentConfig,
    epsilons: &[f64],
) -> Result<MixedLossReport> {
    if epsilons.is_empty() {
        return Err(Error::Config("mixed-loss experiment needs at least one epsilon".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    let mut runs = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let cfg = ExperimentConfig {
            epsilon,
            distill_loss: DistillLoss::KlPlusCe,
            ..config.clone()
        };
        let report = run_single_watermark_experiment(&cfg)?;
        rows.push(MixedLossRow {
            epsilon,
            mean_ap: report.mean_ap,
            ap_std: report.ap_std,
            mean_positive_p_snr: report.mean_positive_p_snr,
        });
        runs.push(report);
    }
    Ok(MixedLossReport { rows, runs })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Smallest config that still exercises every stage: 2 keys, N = 1,
    /// 1 student per role, tiny data and training budgets.
    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            master_seed: 7,
            watermark_count: 2,
            unwatermarked_count: 2,
            students_per_ensemble: 1,
            plain_student_count: 1,
            independent_student_count: 1,
            data: DataConfig { per_class: 300, ..DataConfig::default() },
            teacher_train: TrainConfig { epochs: 12, ..TrainConfig::default() },
            student: StudentConfig {
                hidden_size: 48,
                train: TrainConfig {
                    epochs: 12,
                    learning_rate: 0.3,
                    ..TrainConfig::default()
                },
                ..StudentConfig::default()
            },
            query_count: 600,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_validation_names_the_offending_field() {
        let mut cfg = tiny_config();
        cfg.unwatermarked_count = 0;
        cfg.ensemble_size = 1;
        let err = cfg.validate().unwrap_err();
        assert!(
            err.to_string().contains("unwatermarked_count"),
            "error should name the field: {err}"
        );
        let mut cfg = tiny_config();
        cfg.query_count = 3;
        assert!(cfg.validate().is_err(), "tiny query counts must be rejected");
    }

    #[test]
    fn single_watermark_report_is_reproducible_and_consistent() {
        let cfg = tiny_config();
        let a = run_single_watermark_experiment(&cfg).unwrap();
        let b = run_single_watermark_experiment(&cfg).unwrap();
        assert_eq!(a, b, "experiment must be a pure function of the config");

        assert_eq!(a.keys.len(), 2, "one key per watermark");
        assert_eq!(a.rankings.len(), 2, "one ranking task per key");
        for task in &a.rankings {
            assert_eq!(
                task.entries.len(),
                2 + 1 + 1,
                "every student must be scored for every key"
            );
            let positives = task.entries.iter().filter(|e| e.is_positive).count();
            assert_eq!(positives, 1, "one positive student per key in the tiny config");
            assert!((0.0..=1.0).contains(&task.ap), "AP must lie in [0, 1]");
        }
        assert_eq!(a.gate.entries.len(), 2, "gate must cover every watermarked teacher");
        assert!(
            a.frequency_note.contains("periods"),
            "report must state the frequency rescaling rule, got `{}`",
            a.frequency_note
        );
    }

    #[test]
    fn different_master_seeds_draw_different_layouts_and_keys() {
        let a = run_single_watermark_experiment(&tiny_config()).unwrap();
        let b = run_single_watermark_experiment(&ExperimentConfig {
            master_seed: 8,
            ..tiny_config()
        })
        .unwrap();
        assert_ne!(
            a.keys[0].projection, b.keys[0].projection,
            "independent master seeds must draw independent keys"
        );
    }

    #[test]
    fn repeated_runs_aggregate_over_master_seeds() {
        let cfg = tiny_config();
        let rep = run_repeated(&cfg, &[7, 8]).unwrap();
        assert_eq!(rep.runs.len(), 2);
        assert_eq!(rep.runs[0].master_seed, 7);
        assert_eq!(rep.runs[1].master_seed, 8);
        let expect = (rep.runs[0].mean_ap + rep.runs[1].mean_ap) / 2.0;
        assert!((rep.mean_ap - expect).abs() < 1e-12, "mean over runs");
        assert!(run_repeated(&cfg, &[]).is_err(), "empty seed list must be rejected");
    }

    #[test]
    fn multi_watermark_rejects_duplicate_and_mismatched_keys() {
        let cfg = ExperimentConfig { ensemble_size: 2, ..tiny_config() };
        let data = build_experiment_data(&cfg.data, cfg.master_seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, "key-draw", 0));
        let key = crate::data::draw_key(
            &cfg.keys,
            &data.teacher.features,
            &[],
            0,
            cfg.data.dims,
            &mut rng,
        )
        .unwrap();
        let err = run_multi_watermark_experiment(&cfg, Some(&[key.clone(), key.clone()]))
            .unwrap_err();
        assert!(
            matches!(err, Error::DuplicateKey { first: 0, second: 1 }),
            "expected a duplicate-key rejection, got {err}"
        );
        let err = run_multi_watermark_experiment(&cfg, Some(&[key])).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "key count must match watermark_count");
    }

    #[test]
    fn multi_watermark_round_robin_assembles_distinct_sets() {
        // W = 2, N = 2 collapses to a single ensemble carrying both keys;
        // the per-key cross-mean would be undefined, so that shape errors.
        let cfg = ExperimentConfig { ensemble_size: 2, ..tiny_config() };
        let err = run_multi_watermark_experiment(&cfg, None).unwrap_err();
        assert!(
            err.to_string().contains("no cross students"),
            "expected the all-keys-everywhere rejection, got {err}"
        );

        // W = 3, N = 2 gives the three cyclic pairs.
        let cfg = ExperimentConfig {
            watermark_count: 3,
            ensemble_size: 2,
            unwatermarked_count: 2,
            ..tiny_config()
        };
        let report = run_multi_watermark_experiment(&cfg, None).unwrap();
        assert_eq!(
            report.ensembles,
            vec![vec![0, 1], vec![1, 2], vec![0, 2]],
            "round-robin member sets"
        );
        assert_eq!(report.crosstalk.len(), 3, "one crosstalk row per key");
        for row in &report.crosstalk {
            assert!(row.cross_mean_p_snr.is_finite(), "cross mean must be defined");
        }
    }

    #[test]
    fn mixed_loss_runs_one_experiment_per_amplitude() {
        let cfg = tiny_config();
        let report = run_mixed_loss_experiment(&cfg, &[0.0, 0.1]).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].epsilon, 0.0);
        assert_eq!(report.rows[1].epsilon, 0.1);
        assert!(run_mixed_loss_experiment(&cfg, &[]).is_err(), "empty grid rejected");
    }
}
