//! Numerical toolkit for relaxation envelopes of extended-real energy
//! densities with determinant-type constraints, and for 3d-2d membrane
//! reduction of thin-film energies.
//!
//! The library works with densities `W : M^{m x N} -> [0, +inf]` (small
//! matrices only, `m, N <= 4`) and provides:
//!
//! * a catalog of parametric density families together with sampling-based
//!   checkers for their growth/coercivity conditions ([`density`]),
//! * the lamination hierarchy `R_0 W >= R_1 W >= ...` converging to the
//!   rank-one convex envelope, discrete cell-problem upper estimates of the
//!   piecewise-affine envelopes, and a box-relative convex lower reference
//!   ([`envelope`]),
//! * constructive laminate certificates built from singular-value splits
//!   and the four-triangle cross-product constructions ([`laminate`]),
//! * membrane reduction `W_0(xi) = inf_zeta W(xi|zeta)`, thin-film energy
//!   quadrature and recovery-sequence convergence reports ([`membrane`]).
//!
//! Everything is deterministic given a seed; all `+inf` branches are decided
//! by exact sign tests, never by thresholding large floats.

pub mod cli;
pub mod density;
pub mod envelope;
pub mod error;
pub mod ext_real;
pub mod laminate;
pub mod matrix;
pub mod membrane;
pub mod opt;
pub mod sampling;
pub mod tolerances;

pub use error::EnvKitError;
pub use ext_real::ExtReal;
pub use matrix::{Mat, SvdFactorization};

/// Version string embedded in every JSON artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
