//! Laminate trees: finitely supported gradient Young measures built from
//! iterated rank-one splits, used as constructive upper bounds.

use crate::density::EnergyFn;
use crate::error::{EnvKitError, Result};
use crate::ext_real::ExtReal;
use crate::matrix::{rank_one, Mat};
use crate::tolerances::TOL_LIN;
use serde::{Deserialize, Serialize};

/// A laminate: either a single matrix with its mass, or a rank-one split
/// `parent = (1-t) * minus + t * plus` with `plus - minus = a (x) b`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LaminateTree {
    Leaf {
        matrix: Mat,
        weight: f64,
    },
    Split {
        t: f64,
        a: Vec<f64>,
        b: Vec<f64>,
        minus: Box<LaminateTree>,
        plus: Box<LaminateTree>,
    },
}

impl LaminateTree {
    pub fn leaf(matrix: Mat, weight: f64) -> LaminateTree {
        LaminateTree::Leaf { matrix, weight }
    }

    /// Barycenter of the tree (the matrix the laminate realizes).
    pub fn root_matrix(&self) -> Mat {
        match self {
            LaminateTree::Leaf { matrix, .. } => matrix.clone(),
            LaminateTree::Split { t, minus, plus, .. } => {
                let fm = minus.root_matrix();
                let fp = plus.root_matrix();
                fm.scale(1.0 - t).add(&fp.scale(*t))
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            LaminateTree::Leaf { .. } => 0,
            LaminateTree::Split { minus, plus, .. } => 1 + minus.depth().max(plus.depth()),
        }
    }

    /// All leaves as `(matrix, weight)`.
    pub fn leaves(&self) -> Vec<(&Mat, f64)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a Mat, f64)>) {
        match self {
            LaminateTree::Leaf { matrix, weight } => out.push((matrix, *weight)),
            LaminateTree::Split { minus, plus, .. } => {
                minus.collect_leaves(out);
                plus.collect_leaves(out);
            }
        }
    }

    /// `sum_leaves weight * W(matrix)`, the energy the laminate realizes.
    pub fn value(&self, w: &dyn EnergyFn) -> ExtReal {
        let mut acc = ExtReal::ZERO;
        for (g, wt) in self.leaves() {
            acc += w.eval(g).scale(wt);
        }
        acc
    }

    /// Checks the structural identities: each split's barycenter and
    /// rank-one direction, and the total leaf mass.
    pub fn check_invariants(&self) -> Result<()> {
        let total: f64 = self.leaves().iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > TOL_LIN {
            return Err(EnvKitError::Certificate(format!(
                "leaf weights sum to {total}, not 1"
            )));
        }
        self.check_splits()
    }

    fn check_splits(&self) -> Result<()> {
        if let LaminateTree::Split { t, a, b, minus, plus } = self {
            if !(0.0 < *t && *t < 1.0) {
                return Err(EnvKitError::Certificate(format!("split weight t = {t} not in (0,1)")));
            }
            let fm = minus.root_matrix();
            let fp = plus.root_matrix();
            let diff = fp.sub(&fm);
            let dir = rank_one(a, b);
            let scale = 1.0 + diff.norm();
            if diff.sub(&dir).norm() > TOL_LIN * scale {
                return Err(EnvKitError::Certificate(
                    "split increment does not match its rank-one direction".into(),
                ));
            }
            minus.check_splits()?;
            plus.check_splits()?;
        }
        Ok(())
    }
}
