//! Envelope machinery: the Kohn-Strang rank-one recursion, cell-problem
//! upper estimates, and the convex lower reference.
//!
//! Ordering reminder: `W >= Z W >= Z_inf W >= Q W`, and `Q W <= R W`.
//! Everything computed here is an upper estimate of the respective
//! envelope except the convex reference, which is a lower reference
//! relative to its sampling box.

mod cell;
mod convex;
mod engine;
mod step;
mod tree;

pub use cell::{tile_test_field, z_envelope_estimate, AffineTestField, MeshCfg, TilePiece};
pub use convex::{convex_envelope_reference, ConvexReference, GridCfg};
pub use engine::{
    envelope_table, rank_one_envelope, AxisSpec, EnvelopeEngine, EnvelopeResult, EnvelopeTable,
    GridSpec,
};
pub use step::{rank_one_step, OptCfg, RankOneStepResult, StepStatus};
pub use tree::LaminateTree;
