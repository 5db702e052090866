//! Finite-dimensional quantum-device toolkit: POVMs, channels, and
//! instruments with their dilations and complementary instruments, plus
//! deciders for compatibility, postprocessing, and non-disturbance relations
//! via PSD/LP feasibility.
//!
//! Modules:
//! - [`linalg`]: dense complex matrices, tensor/partial-trace calculus, and a
//!   Hermitian eigensolver.
//! - [`devices`]: states, POVMs, operations (Kraus/Choi), and instruments.
//! - [`dilation`]: canonical and minimal ancilla dilations and complementary
//!   instruments/channels.
//! - [`sdp`]: block-PSD feasibility solver (alternating projections) with
//!   certified infeasibility margins, plus a classical postprocessing LP.
//! - [`compat`]: the relation deciders.
//! - [`catalog`]: named device families and structural classifiers.
//! - [`json`]: shared serialization formats.
//! - [`cli`]: command-line front end.

pub mod catalog;
pub mod cli;
pub mod compat;
pub mod devices;
pub mod dilation;
pub mod json;
pub mod linalg;
pub mod random;
pub mod sdp;
pub mod tol;

pub use compat::{CompatReport, PostprocessReport, Route};
pub use devices::{Instrument, Operation, Povm, QChannel, State};
pub use dilation::{canonical_dilation, complementary_instrument, minimal_dilation, Dilation};
pub use linalg::{CMatrix, C64};
pub use sdp::{FeasibilityProblem, SolveConfig, Status, Verdict};
