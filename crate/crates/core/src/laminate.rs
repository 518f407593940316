//! Constructive growth certificates: the singular-value splitting
//! laminate with its explicit polynomial-growth constant, and the
//! four-triangle constructions for cross-product constraints.

use crate::density::Density;
use crate::envelope::LaminateTree;
use crate::error::{EnvKitError, Result};
use crate::ext_real::ExtReal;
use crate::matrix::{
    cross3, cross_product_norm, dot, min_singular_product, svd_ascending, vec_norm, Mat,
    SvdFactorization,
};
use crate::tolerances::TOL_LIN;
use serde::Serialize;

/// Splits every singular value `v_i(F) < alpha` into the pair `{-alpha,
/// +alpha}` along its rank-one frame direction, producing a binary
/// laminate of depth `k = #{v_i < alpha}` whose `2^k` leaves all satisfy
/// `v(leaf) >= alpha`. `v` denotes the product of all singular values.
///
/// Requires `alpha >= 1` (the normalization under which the growth
/// constant below is stated; rescaling silently would change it).
pub fn svd_split_laminate(f: &Mat, alpha: f64) -> Result<LaminateTree> {
    if alpha < 1.0 {
        return Err(EnvKitError::Parameter(format!(
            "alpha = {alpha} < 1 is outside the certificate's normalization"
        )));
    }
    let (m, n) = f.dims();
    if n > m {
        return Err(EnvKitError::Dimension(format!(
            "laminate needs N <= m, got {m}x{n}"
        )));
    }
    let svd = svd_ascending(f)?;
    // ascending index order; values at tolerance count as satisfying
    let small: Vec<usize> = (0..n).filter(|&i| svd.sv[i] < alpha - TOL_LIN).collect();
    Ok(build_split(&svd, &svd.sv.clone(), &small, alpha, 1.0))
}

fn build_split(
    svd: &SvdFactorization,
    values: &[f64],
    remaining: &[usize],
    alpha: f64,
    weight: f64,
) -> LaminateTree {
    let Some((&i, rest)) = remaining.split_first() else {
        return LaminateTree::Leaf { matrix: svd.with_values(values), weight };
    };
    let v = values[i];
    let t = (v + alpha) / (2.0 * alpha); // v = (1-t)(-alpha) + t(+alpha)
    let mut minus_vals = values.to_vec();
    minus_vals[i] = -alpha;
    let mut plus_vals = values.to_vec();
    plus_vals[i] = alpha;
    // direction: plus - minus = 2 alpha (P J Q^T e_i)(q_i)^T
    let a = svd.right_direction(i);
    let b: Vec<f64> = svd.left_direction(i).iter().map(|x| 2.0 * alpha * x).collect();
    LaminateTree::Split {
        t,
        a,
        b,
        minus: Box::new(build_split(svd, &minus_vals, rest, alpha, weight * (1.0 - t))),
        plus: Box::new(build_split(svd, &plus_vals, rest, alpha, weight * t)),
    }
}

/// A checked instance of the polynomial-growth bound for the rank-one
/// envelope of a density satisfying `v(F) >= alpha => W(F) <= beta
/// (1+|F|^p)`.
#[derive(Debug, Serialize)]
pub struct GrowthCertificate {
    pub f: Mat,
    pub laminate: LaminateTree,
    /// `sum_leaves beta (1 + |G|^p)`, computed from the actual leaves.
    pub bound_value: f64,
    /// The closed-form constant `2^N beta (1 + 2^{p/2} N^{p/2} alpha^p)`.
    pub constant_c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    /// Product of singular values at each leaf (all `>= alpha`).
    pub leaf_v: Vec<f64>,
    /// `sum_leaves weight * W(leaf)`: a concrete upper bound for the
    /// rank-one envelope at `f`. `+inf` when some leaf is infeasible for
    /// `W` (one-sided constraints), in which case the laminate bounds the
    /// envelope of the symmetrized condition only.
    pub upper_bound_rw: ExtReal,
    /// Right side of the final inequality, `constant_c * (1+|F|^p)`.
    pub growth_rhs: f64,
}

/// Closed-form growth constant of the singular-value certificate.
pub fn growth_constant(n: usize, beta: f64, p: f64, alpha: f64) -> f64 {
    2f64.powi(n as i32)
        * beta
        * (1.0 + 2f64.powf(p / 2.0) * (n as f64).powf(p / 2.0) * alpha.powf(p))
}

/// Builds and verifies the growth certificate at `f`.
pub fn growth_certificate(w: &Density, f: &Mat, alpha: f64, beta: f64) -> Result<GrowthCertificate> {
    if beta <= 0.0 {
        return Err(EnvKitError::Parameter("beta must be positive".into()));
    }
    if f.dims() != (w.m, w.n) {
        return Err(EnvKitError::Dimension("matrix does not match density dims".into()));
    }
    let p = w.p;
    let laminate = svd_split_laminate(f, alpha)?;
    laminate.check_invariants()?;
    let root_gap = laminate.root_matrix().sub(f).norm();
    if root_gap > TOL_LIN * (1.0 + f.norm()) {
        return Err(EnvKitError::Certificate(format!(
            "laminate barycenter misses F by {root_gap:.3e}"
        )));
    }
    let mut bound_value = 0.0;
    let mut leaf_v = Vec::new();
    let mut upper = ExtReal::ZERO;
    for (g, wt) in laminate.leaves() {
        let v = min_singular_product(g)?;
        if v < alpha - 1e2 * TOL_LIN {
            return Err(EnvKitError::Certificate(format!(
                "leaf {g:?} has v = {v} < alpha = {alpha}"
            )));
        }
        leaf_v.push(v);
        let leaf_bound = beta * (1.0 + g.norm().powf(p));
        bound_value += leaf_bound;
        let val = w.eval(g);
        if let Some(x) = val.finite() {
            if x > leaf_bound * (1.0 + 1e-9) {
                return Err(EnvKitError::Certificate(format!(
                    "leaf {g:?} evaluates to {x}, above its growth bound {leaf_bound}"
                )));
            }
        }
        upper += val.scale(wt);
    }
    let constant_c = growth_constant(w.n, beta, p, alpha);
    let growth_rhs = constant_c * (1.0 + f.norm().powf(p));
    if bound_value > growth_rhs * (1.0 + 1e-12) {
        return Err(EnvKitError::Certificate(format!(
            "bound_value {bound_value} exceeds c (1+|F|^p) = {growth_rhs}"
        )));
    }
    Ok(GrowthCertificate {
        f: f.clone(),
        laminate,
        bound_value,
        constant_c,
        alpha,
        beta,
        p,
        leaf_v,
        upper_bound_rw: upper,
        growth_rhs,
    })
}

// ---------------------------------------------------------------------
// four-triangle constructions (3x2 membrane densities)

/// Unit vector orthogonal to both columns of `xi` (they are parallel
/// whenever the cross product vanishes): the normalized cross product
/// when available, otherwise one Gram-Schmidt step of the
/// lexicographically smallest basis vector against the nonzero column.
fn orthogonal_unit(xi: &Mat) -> Vec<f64> {
    let c1 = xi.column(0);
    let c2 = xi.column(1);
    let cp = cross3(&c1, &c2);
    let cp_norm = vec_norm(&cp);
    // Only trust the cross product well away from cancellation: for
    // (numerically) rank-one xi its direction is rounding noise even
    // though its norm is positive.
    if cp_norm > 1e-10 * vec_norm(&c1) * vec_norm(&c2) {
        return cp.iter().map(|x| x / cp_norm).collect();
    }
    let pivot = if vec_norm(&c1) >= vec_norm(&c2) && vec_norm(&c1) > 0.0 {
        c1
    } else if vec_norm(&c2) > 0.0 {
        c2
    } else {
        // xi = 0: any unit vector is orthogonal; take e1
        return vec![1.0, 0.0, 0.0];
    };
    let pn = vec_norm(&pivot);
    for e in 0..3 {
        let mut cand = vec![0.0; 3];
        cand[e] = 1.0;
        let proj = dot(&cand, &pivot) / (pn * pn);
        for (x, p) in cand.iter_mut().zip(&pivot) {
            *x -= proj * p;
        }
        let n = vec_norm(&cand);
        if n > 1e-8 {
            return cand.iter().map(|x| x / n).collect();
        }
    }
    unreachable!("some basis vector is independent of a single direction")
}

fn column_perturbations(xi: &Mat, nu: &[f64], signs: &[(f64, f64)]) -> Vec<Mat> {
    signs
        .iter()
        .map(|&(s1, s2)| {
            let c1: Vec<f64> = xi.column(0).iter().zip(nu).map(|(x, v)| x + s1 * v).collect();
            let c2: Vec<f64> = xi.column(1).iter().zip(nu).map(|(x, v)| x + s2 * v).collect();
            let mut out = Mat::zeros(3, 2);
            out.set_column(0, &c1);
            out.set_column(1, &c2);
            out
        })
        .collect()
}

/// Stage-1 four-triangle bound: under the precondition
/// `min{|xi_1+xi_2|, |xi_1-xi_2|} >= alpha`, the four both-column
/// perturbations `(xi_1 -+ nu | xi_2 +- nu)` with unit `nu` all have
/// cross-product norm `>= alpha`, giving the averaged growth bound
/// `<= beta 2^{2p+1} (1+|xi|^p)` for `Z W_0` via the growth condition on
/// `W_0`. Returns `(bound, four_points)`.
pub fn four_triangle_bound_stage1(
    w0: &Density,
    xi: &Mat,
    alpha: f64,
    beta: f64,
) -> Result<(f64, Vec<Mat>)> {
    if xi.dims() != (3, 2) || (w0.m, w0.n) != (3, 2) {
        return Err(EnvKitError::Dimension("stage 1 needs 3x2 data".into()));
    }
    let c1 = xi.column(0);
    let c2 = xi.column(1);
    let plus: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
    let minus: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a - b).collect();
    let gate = vec_norm(&plus).min(vec_norm(&minus));
    if gate < alpha - TOL_LIN {
        return Err(EnvKitError::Precondition(format!(
            "min{{|xi1+xi2|, |xi1-xi2|}} = {gate} < alpha = {alpha}; use the stage-2 path"
        )));
    }
    let nu = orthogonal_unit(xi);
    let points = column_perturbations(xi, &nu, &[(-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (1.0, 1.0)]);
    let p = w0.p;
    let cap = beta * 2f64.powf(2.0 * p + 1.0) * (1.0 + xi.norm().powf(p));
    let mut bound = 0.0;
    for pt in &points {
        let v = cross_product_norm(pt)?;
        if v < alpha - 1e2 * TOL_LIN {
            return Err(EnvKitError::Certificate(format!(
                "stage-1 point {pt:?} has cross-product norm {v} < alpha"
            )));
        }
        bound += 0.25 * beta * (1.0 + pt.norm().powf(p));
    }
    if bound > cap * (1.0 + 1e-12) {
        return Err(EnvKitError::Certificate(format!(
            "stage-1 averaged bound {bound} exceeds its cap {cap}"
        )));
    }
    Ok((bound, points))
}

/// Stage-2 bound, valid for every `xi` (including 0): the four
/// single-column perturbations with `|nu| = alpha` each satisfy the
/// stage-1 precondition, giving `Z W_0(xi) <= max{1, alpha^p} gamma
/// 2^{p+1} (1+|xi|^p)` with `gamma` the stage-1 constant.
pub fn four_triangle_bound_stage2(
    w0: &Density,
    xi: &Mat,
    alpha: f64,
    gamma: f64,
) -> Result<(f64, Vec<Mat>)> {
    if xi.dims() != (3, 2) || (w0.m, w0.n) != (3, 2) {
        return Err(EnvKitError::Dimension("stage 2 needs 3x2 data".into()));
    }
    if alpha <= 0.0 || gamma <= 0.0 {
        return Err(EnvKitError::Parameter("alpha and gamma must be positive".into()));
    }
    let nu: Vec<f64> = orthogonal_unit(xi).iter().map(|x| x * alpha).collect();
    let points = column_perturbations(xi, &nu, &[(0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 0.0)]);
    let p = w0.p;
    let cap = 1f64.max(alpha.powf(p)) * gamma * 2f64.powf(p + 1.0) * (1.0 + xi.norm().powf(p));
    let mut bound = 0.0;
    for pt in &points {
        let c1 = pt.column(0);
        let c2 = pt.column(1);
        let plus: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a - b).collect();
        let gate = vec_norm(&plus).min(vec_norm(&minus));
        if gate < alpha - 1e2 * TOL_LIN {
            return Err(EnvKitError::Certificate(format!(
                "stage-2 point {pt:?} misses the stage-1 precondition: {gate} < {alpha}"
            )));
        }
        bound += 0.25 * gamma * 2f64.powf(p) * (1.0 + pt.norm().powf(p)) / 2f64.powf(p - 1.0);
    }
    let bound = bound.min(cap);
    Ok((bound, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{make_density, DensitySpec};

    #[test]
    fn diag_0_2_splits_once() {
        let tree = svd_split_laminate(&Mat::diag(&[0.0, 2.0]), 1.0).unwrap();
        tree.check_invariants().unwrap();
        assert_eq!(tree.depth(), 1);
        let leaves = tree.leaves();
        assert_eq!(leaves.len(), 2);
        for (g, wt) in leaves {
            assert!((wt - 0.5).abs() < 1e-12);
            let v = min_singular_product(g).unwrap();
            assert!((v - 2.0).abs() < 1e-8, "leaf {g:?} v = {v}");
        }
        if let LaminateTree::Split { t, .. } = &tree {
            assert!((t - 0.5).abs() < 1e-12);
        } else {
            panic!("expected split");
        }
    }

    #[test]
    fn already_feasible_is_single_leaf() {
        let f = Mat::diag(&[2.0, 3.0]);
        let tree = svd_split_laminate(&f, 1.0).unwrap();
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.leaves().len(), 1);
    }

    #[test]
    fn three_by_three_two_small_values() {
        let f = Mat::diag(&[0.2, 0.4, 3.0]);
        let tree = svd_split_laminate(&f, 1.0).unwrap();
        tree.check_invariants().unwrap();
        assert_eq!(tree.depth(), 2);
        let leaves = tree.leaves();
        assert_eq!(leaves.len(), 4);
        for (g, _) in leaves {
            assert!(min_singular_product(g).unwrap() >= 1.0 - 1e-8);
        }
    }

    #[test]
    fn alpha_below_one_is_rejected() {
        let err = svd_split_laminate(&Mat::identity(2), 0.5).unwrap_err();
        assert!(matches!(err, EnvKitError::Parameter(_)));
    }

    #[test]
    fn growth_constant_reference_value_is_56() {
        assert_eq!(growth_constant(3, 1.0, 2.0, 1.0), 56.0);
    }

    #[test]
    fn certificate_on_det_barrier() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        let f = Mat::diag(&[0.0, 0.0, 2.0]);
        assert!(w.eval(&f).is_infinite());
        let cert = growth_certificate(&w, &f, 1.0, 2.0).unwrap();
        assert!(cert.bound_value.is_finite());
        assert!(cert.bound_value <= cert.growth_rhs + 1e-9);
        assert_eq!(cert.leaf_v.len(), 4);
    }

    #[test]
    fn single_leaf_bound_formula() {
        let w = make_density(&DensitySpec::simple("weak_det_barrier", 2, 2, 2.0)).unwrap();
        let f = Mat::diag(&[2.0, 2.0]);
        let (a, b) = (w.constants.alpha.unwrap(), w.constants.beta.unwrap());
        let cert = growth_certificate(&w, &f, a, b).unwrap();
        assert_eq!(cert.laminate.depth(), 0);
        let want = b * (1.0 + f.norm().powi(2));
        assert!((cert.bound_value - want).abs() < 1e-12);
        assert!(cert.upper_bound_rw.is_finite());
    }

    #[test]
    fn stage1_on_scaled_orthonormal_columns() {
        let w0 = make_density(&DensitySpec::simple("cross_barrier", 3, 2, 2.0)).unwrap();
        let xi = Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let (bound, pts) = four_triangle_bound_stage1(&w0, &xi, 1.0, 2.0).unwrap();
        assert_eq!(pts.len(), 4);
        let cap = 2.0 * 2f64.powi(5) * (1.0 + xi.norm().powi(2));
        assert!(bound <= cap + 1e-9);
    }

    #[test]
    fn stage1_zero_matrix_fails_precondition() {
        let w0 = make_density(&DensitySpec::simple("cross_barrier", 3, 2, 2.0)).unwrap();
        let err = four_triangle_bound_stage1(&w0, &Mat::zeros(3, 2), 1.0, 2.0).unwrap_err();
        assert!(matches!(err, EnvKitError::Precondition(_)));
    }

    #[test]
    fn stage2_handles_zero_and_rank_deficient() {
        let w0 = make_density(&DensitySpec::simple("cross_barrier", 3, 2, 2.0)).unwrap();
        for xi in [
            Mat::zeros(3, 2),
            Mat::from_rows(&[vec![2.0, 4.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap(),
        ] {
            let (_, pts) = four_triangle_bound_stage2(&w0, &xi, 1.0, 2.0 * 32.0).unwrap();
            // every stage-2 point admits the stage-1 construction
            for pt in &pts {
                four_triangle_bound_stage1(&w0, pt, 1.0, 2.0).unwrap();
            }
        }
    }
}
