//! Cosine-signal model watermarking toolkit.
//!
//! This crate implements an output-space watermark for probability-emitting
//! classifiers and the spectral machinery to detect it after knowledge
//! distillation:
//!
//! * [`watermark`] — keys, the cosine signal, the watermarked output
//!   transform, and the watermarked training loss with analytic gradients.
//! * [`spectrum`] — sinusoid least-squares fitting, an unevenly-sampled
//!   periodogram, and the filtering + signal-to-noise extraction pipeline.
//! * [`nnet`] — tiny from-scratch classifiers (softmax regression and
//!   one-hidden-layer tanh or sine MLPs), watermarked training, ensembles,
//!   and KL-based student distillation.
//! * [`datagen`] — seeded synthetic Gaussian-blob datasets, splits, and
//!   query sampling.
//! * [`io`] — plain-text serialization for keys, model checkpoints,
//!   datasets, and reports; floating-point fields round-trip bit-exactly.
//!
//! Heavy loops (per-frequency fits, batch forward passes) run on rayon when
//! the default `parallel` feature is enabled; sequential fallbacks are always
//! compiled and produce bit-identical results.

pub mod datagen;
pub mod error;
pub mod io;
pub mod nnet;
mod par;
pub mod prob;
pub mod spectrum;
pub mod watermark;

pub use error::{Error, Result};
pub use prob::{kl_divergence, softmax, ProbVector};
pub use watermark::{WatermarkConfig, WatermarkKey};
