//! Core library for training a small convolutional network on synthetic
//! EEG-like braking-intent trials, converting it to a quantized spiking
//! network, and adapting the final binary-weight layer per individual with
//! a few-shot plasticity rule.
//!
//! The crate is organized along the processing chain:
//!
//! * [`eeg`] — synthetic trial generation, segmentation, int8 quantization
//!   of the data, balancing, augmentation and participant splits.
//! * [`tensor`] — dense float tensors and the hand-rolled forward/backward
//!   passes for the two-conv-layer network (stage 1).
//! * [`quant`] — 8-bit weight quantization, firing-threshold calibration,
//!   single-bit activation conversion and quantization-aware retraining
//!   (stage 2).
//! * [`runtime`] — integer inference over the converted network with both a
//!   dense reference path and an event-driven path, plus operation counting
//!   used as the energy proxy.
//! * [`edge`] — the binary-weight, class-partitioned final layer and its
//!   winner-take-all plasticity rule (stage 3).
//! * [`stats`] — classification metrics, Welch's t-test and the energy /
//!   latency comparison formulas.
//! * [`archive`] — on-disk dataset and model checkpoint formats.

pub mod archive;
pub mod edge;
pub mod eeg;
pub mod quant;
pub mod runtime;
pub mod stats;
pub mod tensor;
pub mod verify;

mod seed;

pub use seed::derive_seed;
