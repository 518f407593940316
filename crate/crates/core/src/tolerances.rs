//! Central tolerance constants.
//!
//! Three regimes are kept apart: exact linear-algebra identities
//! (`TOL_LIN`), optimizer-limited agreement (`TOL_OPT`), and iteration
//! convergence (`TOL_CONV`). Diagnostics that compare two independent
//! estimators carry their own, looser thresholds.

/// Absolute tolerance for linear-algebra residuals (SVD reconstruction,
/// barycenter and rank-one identities, tiling sums). These are exact
/// identities up to f64 rounding.
pub const TOL_LIN: f64 = 1e-10;

/// Relative tolerance for values that agree up to optimization error
/// (laminate-tree value vs. envelope value, recomputed objectives).
pub const TOL_OPT: f64 = 1e-6;

/// Relative convergence tolerance between successive envelope iterates.
pub const TOL_CONV: f64 = 1e-5;

/// Relative slack for the lower/upper bracket consistency check.
pub const TOL_BRACKET: f64 = 1e-6;

/// Relative gap threshold flagged by the reduction-order commutation
/// diagnostic. Both sides are upper estimates with independent slack, so
/// this is a tooling default, not a mathematical claim.
pub const COMMUTATION_GAP_THRESHOLD: f64 = 0.05;

/// Radius-ladder stability ratio below which a polynomial-growth fit
/// counts as evidence of ampleness.
pub const AMPLENESS_RATIO: f64 = 1.25;

/// Required decay factor for the last recovery-sequence error halvings.
pub const RECOVERY_RATIO: f64 = 0.6;

/// Safety margin reported next to raw sup/inf constant fits.
pub const FIT_MARGIN: f64 = 0.01;
