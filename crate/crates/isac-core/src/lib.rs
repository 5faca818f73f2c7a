//! Core library for movable-element IRS-assisted integrated sensing and
//! communication (ISAC) systems.
//!
//! The crate models an ISAC link in which a multi-antenna transmitter
//! illuminates an intelligent reflecting surface whose reflecting elements can
//! be repositioned inside a bounded planar region. It provides:
//!
//! - [`scene`]: geometry, system constants, and virtual-angle computations;
//! - [`channel`]: field-response channel synthesis, steering vectors, seeded
//!   path sampling, and CSI / movement-error perturbation models;
//! - [`metrics`]: instantaneous SINR / SCNR, rates, single-user upper bounds,
//!   coverage probability, and IRS beampattern maps;
//! - [`bounds`]: deterministic ergodic-performance lower bounds built from
//!   closed-form channel-moment kernels, plus fixed-spacing kernel forms;
//! - [`solver_single`]: the angular-information position/beamforming design
//!   for the single-user line-of-sight scenario;
//! - [`solver_multi`]: the alternating optimization for the multi-user
//!   multi-path scenario (fractional-programming auxiliaries, dual-bisection
//!   receive beamformer, penalized projected-gradient element positioning,
//!   transmit-beamformer QCQP, and consensus-ADMM phase optimization);
//! - [`baseline`]: fixed-spacing element layouts and the sequential
//!   per-element position baseline used in comparisons.

pub mod baseline;
pub mod bounds;
pub mod channel;
pub mod error;
pub mod metrics;
pub mod scene;
pub mod solver_multi;
pub mod solver_single;

pub use error::IsacError;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Dense complex matrix used throughout the crate.
pub type CMat = DMatrix<Complex64>;
/// Dense complex vector used throughout the crate.
pub type CVec = DVector<Complex64>;
