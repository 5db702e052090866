//! Centralized numerical tolerances.
//!
//! Every validation and classification routine in the crate defaults to the
//! constants below; routines that accept an explicit tolerance parameter use
//! these as their default argument.

/// Maximum entrywise deviation |M - M†| accepted for Hermitian inputs.
pub const HERM_TOL: f64 = 1e-10;

/// Most negative eigenvalue accepted when validating positive semidefinite
/// operators (effects, Choi matrices, states).
pub const PSD_TOL: f64 = 1e-8;

/// Frobenius / entrywise tolerance for operator equality checks
/// (POVM normalization, channel trace preservation, device equality).
pub const EQ_TOL: f64 = 1e-8;

/// Eigenvalues above this threshold count toward the numerical rank
/// (Kraus rank extraction, minimal dilations, rank-1 classification).
pub const RANK_TOL: f64 = 1e-9;

/// Frobenius residual threshold for the measure-and-prepare factorization
/// test in the classifier.
pub const MP_TOL: f64 = 1e-7;

/// Default feasibility tolerance of the projection solver: a witness is
/// accepted when constraint residuals are below this and block eigenvalues
/// are above its negative.
pub const FEAS_TOL: f64 = 1e-7;

/// Default gap threshold of the projection solver: a stalled projection gap
/// above this value (with a certified separation margin) yields INFEASIBLE.
pub const GAP_TOL: f64 = 1e-5;

/// Default iteration cap of the projection solver.
pub const MAX_ITER: usize = 20_000;
