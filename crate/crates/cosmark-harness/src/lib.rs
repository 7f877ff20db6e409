//! Experiment harness for the watermarking toolkit: reproducible data
//! layouts, key curation, teacher/student training pipelines, ranking
//! metrics, spectral-bound verification, parameter sweeps, and on-disk
//! reports.
//!
//! Everything is driven by a single master seed; each randomized stage
//! derives its own stream with [`seeds::derive_seed`] so that adding or
//! reordering stages never perturbs the others.

pub mod bound;
pub mod data;
pub mod error;
pub mod experiment;
pub mod ranking;
pub mod report;
pub mod seeds;
pub mod sweep;

pub use bound::{bound_from_series, verify_bound, BoundReport, BOUND_SLACK};
pub use data::{
    build_experiment_data, DataConfig, ExperimentData, FrequencyPolicy, KeyPolicy,
};
pub use error::{Error, Result};
pub use experiment::{
    run_mixed_loss_experiment, run_multi_watermark_experiment,
    run_multi_watermark_experiment_full, run_repeated, run_single_watermark_experiment,
    run_single_watermark_experiment_full, ExperimentConfig, ExperimentModels, GateReport,
    MixedLossReport, MultiWatermarkReport, RepeatedRuns, SingleWatermarkReport, StudentConfig,
};
pub use ranking::{average_precision, random_baseline_ap, RankEntry, RankingTask};
pub use report::{write_multi_experiment_dir, write_single_experiment_dir};
pub use seeds::derive_seed;
pub use sweep::{sweep_amplitude, sweep_frequency, AmplitudeSweep, FrequencySweep};
