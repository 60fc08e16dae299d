//! Simulator and postprocessing stack for a Gaussian-modulated coherent-state
//! continuous-variable QKD link over lossy fiber.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`link`]: parameter types, shot-noise-unit conventions, link budget.
//! - [`optical`]: modulation, channel with drifts, homodyne detection.
//! - [`calibration`]: phase/polarization/timing feedback and the slot layout.
//! - [`postproc`]: sifting, parameter estimation, finite-size bounds.
//! - [`reconciliation`]: multidimensional mapping, multi-edge LDPC codes,
//!   belief propagation, rate adaptation.
//! - [`privacy`]: Toeplitz hashing.
//! - [`keyrate`]: Holevo bound, finite-size penalty, key rate, loss sweeps.

pub mod calibration;
pub mod config;
pub mod error;
pub mod frame_io;
pub mod keyrate;
pub mod link;
pub mod optical;
pub mod postproc;
pub mod privacy;
pub mod reconciliation;
pub mod rng;
pub mod session;

pub use error::{Error, Result};
