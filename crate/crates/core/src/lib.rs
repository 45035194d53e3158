//! Hierarchical millimeter-wave beam alignment.
//!
//! The crate models a single-path ULA channel, builds per-stage hierarchical
//! codebooks, detects the active (AoD, AoA) subrange pair by maximum
//! likelihood, and runs four pilot/feedback protocols on top of that
//! detector:
//!
//! - [`ProtocolKind::Fixed`]: one K² sweep, largest-magnitude decision.
//! - [`ProtocolKind::Optimal`]: round-robin pilots until the posterior clears
//!   the target, then a single AoD report.
//! - [`ProtocolKind::RateAdaptive`]: like `Optimal`, but the receiver pays one
//!   continue bit for every extra pilot.
//! - [`ProtocolKind::Raf`]: uses the running channel-coefficient estimate to
//!   predict how many pilots are needed before any feedback is sent, then
//!   switches to directed pilots on the reported AoD.
//!
//! [`harness`] drives paired Monte Carlo sweeps over SNR and writes CSV.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codebook;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod protocols;

pub use channel::{ArrayGeometry, ChannelRealization, NoiseModel};
pub use codebook::{AngleGrid, HierarchicalCodebook, StageCodebook};
pub use error::{Error, Result};
pub use estimator::{EstimatorState, MeasurementBound, ObservationLedger};
pub use harness::{ExperimentConfig, RunMetrics};
pub use protocols::{ProtocolConfig, ProtocolKind, ProtocolTrace};

/// Dense complex column vector.
pub type ComplexVector = nalgebra::DVector<num_complex::Complex64>;
/// Dense complex matrix.
pub type ComplexMatrix = nalgebra::DMatrix<num_complex::Complex64>;
