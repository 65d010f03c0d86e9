//! Throughput-adaptive region-of-interest frame compression.
//!
//! The crate is organised bottom-up:
//!
//! - [`codec`]: 8×8 block DCT of the background with quality-factor scaled
//!   quantization tables, lossless ROI pass-through and the `ROI1` container.
//! - [`quality`]: windowed SSIM.
//! - [`sizemodel`]: the cubic frame-size surface `S(d, q)` and delay.
//! - [`traces`] and [`dataset`]: throughput traces and frame sources.
//! - [`env`]: the per-frame decision process (action, state, reward).
//! - [`sac`]: soft actor-critic with explicit value and target-value networks.
//! - [`stream`]: TCP sender/receiver measuring per-frame delay.
//! - [`harness`]: the `fit`, `train`, `eval` and `report` pipelines.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod codec;
pub mod dataset;
pub mod env;
pub mod harness;
pub mod par;
pub mod quality;
pub mod sac;
pub mod sizemodel;
pub mod stream;
pub mod svg;
pub mod traces;

pub use codec::{EncodedFrame, Frame, Plane, QuantTable, RoiBox};
pub use env::{Action, RoiEnv, StateObs, StepOutcome};
pub use sizemodel::PolynomialModel;
pub use traces::ThroughputTrace;



