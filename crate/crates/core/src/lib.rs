//! Auditory referring multi-object tracking core.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` arrays, a linear reverse-mode tape and a
//!   central-difference gradient checker.
//! - [`spectral`]: DFT/FFT, inverse transform, the adaptive Gaussian
//!   frequency kernel and circular convolution.
//! - [`fusion`]: bidirectional cross-attention with per-stream spectral
//!   filtering and cross-modal gating.
//! - [`actl`]: the focal contrastive loss between pooled audio embeddings
//!   and trajectory queries.
//! - [`matching`]: Hungarian assignment, focal classification loss,
//!   L1/GIoU box losses and the referred-object decision rule.
//! - [`metrics`]: HOTA/DetA/AssA, MOTA, IDF1 and MOT-style CSV I/O.
//! - [`harness`]: synthetic scenes and a toy referring tracker trained
//!   end to end on the tape.
//! - [`verify`]: the finite-difference and spectral self-check suites
//!   behind the `gradcheck` and `spectra-test` subcommands.

// index loops mirror the row-major formulas in the backward rules
#![allow(clippy::needless_range_loop)]

pub mod actl;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod matching;
pub mod metrics;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor};
