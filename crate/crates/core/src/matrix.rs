//! Dense small-matrix arithmetic shared by every module.
//!
//! Matrices are at most 4x4 by policy; everything of interest lives in
//! `M^{3x3}`, `M^{3x2}` and small square spaces, and the SVD and
//! determinant code is written for that regime only.

use crate::error::{EnvKitError, Result};
use crate::tolerances::TOL_LIN;
use nalgebra::DMatrix;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

pub const MAX_DIM: usize = 4;

/// An `m x N` matrix of finite reals, stored row-major.
#[derive(Clone, PartialEq)]
pub struct Mat {
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(m: usize, n: usize, data: Vec<f64>) -> Result<Mat> {
        if m == 0 || n == 0 || m > MAX_DIM || n > MAX_DIM {
            return Err(EnvKitError::Dimension(format!(
                "matrix dims {m}x{n} outside supported range 1..={MAX_DIM}"
            )));
        }
        if data.len() != m * n {
            return Err(EnvKitError::Dimension(format!(
                "expected {} entries for a {m}x{n} matrix, got {}",
                m * n,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EnvKitError::Dimension("matrix entries must be finite".into()));
        }
        Ok(Mat { m, n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(EnvKitError::Dimension("ragged rows".into()));
        }
        Mat::new(m, n, rows.concat())
    }

    pub fn zeros(m: usize, n: usize) -> Mat {
        Mat::new(m, n, vec![0.0; m * n]).expect("small dims")
    }

    pub fn identity(n: usize) -> Mat {
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            a.set(i, i, 1.0);
        }
        a
    }

    pub fn diag(entries: &[f64]) -> Mat {
        let n = entries.len();
        let mut a = Mat::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            a.set(i, i, v);
        }
        a
    }

    /// Parses the CLI literal syntax: rows separated by `;`, entries by `,`.
    pub fn parse_literal(s: &str) -> Result<Mat> {
        let rows: Vec<Vec<f64>> = s
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|e| {
                        e.trim()
                            .parse::<f64>()
                            .map_err(|_| EnvKitError::Config(format!("bad matrix entry {e:?}")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Mat::from_rows(&rows)
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn is_square(&self) -> bool {
        self.m == self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.m).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        for i in 0..self.m {
            self.set(i, j, col[i]);
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { m: self.m, n: self.n, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { m: self.m, n: self.n, data }
    }

    pub fn scale(&self, c: f64) -> Mat {
        let data = self.data.iter().map(|v| c * v).collect();
        Mat { m: self.m, n: self.n, data }
    }

    /// `self + c * other`, the workhorse of rank-one splits.
    pub fn axpy(&self, c: f64, other: &Mat) -> Mat {
        debug_assert_eq!(self.dims(), other.dims());
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + c * b)
            .collect();
        Mat { m: self.m, n: self.n, data }
    }

    /// Appends a column: `(self | col)`, used for `(xi | zeta)`.
    pub fn with_column(&self, col: &[f64]) -> Result<Mat> {
        if col.len() != self.m {
            return Err(EnvKitError::Dimension(format!(
                "column length {} does not match {} rows",
                col.len(),
                self.m
            )));
        }
        let mut data = Vec::with_capacity(self.m * (self.n + 1));
        for i in 0..self.m {
            data.extend_from_slice(&self.data[i * self.n..(i + 1) * self.n]);
            data.push(col[i]);
        }
        Mat::new(self.m, self.n + 1, data)
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.n, &self.data)
    }

    /// Stable hash key over the exact bit patterns of the entries.
    pub fn bits_key(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &v in &self.data {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h ^ ((self.m as u64) << 32 | self.n as u64)
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}[", self.m, self.n)?;
        for i in 0..self.m {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.n {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.get(i, j))?;
            }
        }
        write!(f, "]")
    }
}

impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.m)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].to_vec())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Mat::from_rows(&rows).map_err(de::Error::custom)
    }
}

/// SVD in the ascending convention: `F = P J Q^T diag(sv) Q` with
/// `P` orthogonal `m x m`, `Q` a rotation in `SO(N)`, `sv` ascending and
/// `J` the `m x N` rectangular identity.
#[derive(Clone, Debug, Serialize)]
pub struct SvdFactorization {
    pub p: Mat,
    pub q: Mat,
    pub sv: Vec<f64>,
}

impl SvdFactorization {
    /// Reconstructs `P J Q^T diag(sv) Q`.
    pub fn reconstruct(&self) -> Mat {
        let m = self.p.rows();
        let n = self.q.rows();
        // right factor U = Q^T diag(sv) Q, symmetric N x N
        let mut u = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.q.get(k, i) * self.sv[k] * self.q.get(k, j);
                }
                u.set(i, j, s);
            }
        }
        // P J has columns = first N columns of P
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.p.get(i, k) * u.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    /// Left rank-one factor of the split at singular-value index `i`:
    /// the column `P J Q^T e_i` of length `m`.
    pub fn left_direction(&self, i: usize) -> Vec<f64> {
        let m = self.p.rows();
        let n = self.q.rows();
        // Q^T e_i = i-th row of Q as a column; then apply P J.
        (0..m)
            .map(|r| {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.p.get(r, k) * self.q.get(i, k);
                }
                s
            })
            .collect()
    }

    /// Right factor of the split at index `i`: the i-th row of `Q`,
    /// length `N`.
    pub fn right_direction(&self, i: usize) -> Vec<f64> {
        (0..self.q.cols()).map(|j| self.q.get(i, j)).collect()
    }

    /// Matrix with the singular values replaced by `vals` (same frame).
    pub fn with_values(&self, vals: &[f64]) -> Mat {
        let mut alt = self.clone();
        alt.sv = vals.to_vec();
        alt.reconstruct()
    }
}

/// Determinant of a square matrix (n <= 4, direct expansion).
pub fn det(f: &Mat) -> Result<f64> {
    if !f.is_square() {
        return Err(EnvKitError::Dimension(format!(
            "determinant needs a square matrix, got {}x{}",
            f.rows(),
            f.cols()
        )));
    }
    Ok(det_unchecked(f))
}

fn det_unchecked(f: &Mat) -> f64 {
    let n = f.cols();
    match n {
        1 => f.get(0, 0),
        2 => f.get(0, 0) * f.get(1, 1) - f.get(0, 1) * f.get(1, 0),
        3 => {
            f.get(0, 0) * (f.get(1, 1) * f.get(2, 2) - f.get(1, 2) * f.get(2, 1))
                - f.get(0, 1) * (f.get(1, 0) * f.get(2, 2) - f.get(1, 2) * f.get(2, 0))
                + f.get(0, 2) * (f.get(1, 0) * f.get(2, 1) - f.get(1, 1) * f.get(2, 0))
        }
        4 => {
            let mut acc = 0.0;
            let mut sign = 1.0;
            for j in 0..4 {
                let minor_rows: Vec<Vec<f64>> = (1..4)
                    .map(|i| (0..4).filter(|&c| c != j).map(|c| f.get(i, c)).collect())
                    .collect();
                let minor = Mat::from_rows(&minor_rows).expect("3x3 minor");
                acc += sign * f.get(0, j) * det_unchecked(&minor);
                sign = -sign;
            }
            acc
        }
        _ => unreachable!("dims capped at {MAX_DIM}"),
    }
}

/// Cross product of two 3-vectors.
pub fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn vec_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `|xi_1 ^ xi_2|` for a 3x2 matrix; equals the product of its two
/// singular values.
pub fn cross_product_norm(xi: &Mat) -> Result<f64> {
    if xi.dims() != (3, 2) {
        return Err(EnvKitError::Dimension(format!(
            "cross_product_norm needs 3x2, got {}x{}",
            xi.rows(),
            xi.cols()
        )));
    }
    let c = cross3(&xi.column(0), &xi.column(1));
    Ok(vec_norm(&c))
}

/// `v(F) = prod_i v_i(F)`, the product of all N singular values (N <= m).
/// Coincides with `|det F|` for square F and with the cross-product norm
/// for 3x2.
pub fn min_singular_product(f: &Mat) -> Result<f64> {
    let (m, n) = f.dims();
    if n > m {
        return Err(EnvKitError::Dimension(format!(
            "singular product needs N <= m, got {m}x{n}"
        )));
    }
    let sv = f.to_nalgebra().singular_values();
    Ok(sv.iter().product())
}

/// SVD with singular values ascending, `Q` normalized to `det Q = +1`.
pub fn svd_ascending(f: &Mat) -> Result<SvdFactorization> {
    let (m, n) = f.dims();
    if n > m {
        return Err(EnvKitError::Dimension(format!(
            "svd_ascending needs N <= m, got {m}x{n}"
        )));
    }
    let svd = nalgebra::SVD::try_new(f.to_nalgebra(), true, true, f64::EPSILON * 16.0, 0)
        .ok_or_else(|| {
            EnvKitError::LinearAlgebra(format!("SVD failed to converge for {f:?}"))
        })?;
    let u_thin = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let sv_desc = svd.singular_values;

    // Reorder ascending: index i takes the (n-1-i)-th descending triple.
    let mut sv = vec![0.0; n];
    let mut q = Mat::zeros(n, n); // rows are right singular vectors
    let mut u_asc = Mat::zeros(m, n);
    for i in 0..n {
        let src = n - 1 - i;
        sv[i] = sv_desc[src];
        for j in 0..n {
            q.set(i, j, v_t[(src, j)]);
        }
        for r in 0..m {
            u_asc.set(r, i, u_thin[(r, src)]);
        }
    }

    // Complete the thin left factor to an orthogonal m x m basis.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| u_asc.column(j)).collect();
    for e in 0..m {
        if cols.len() == m {
            break;
        }
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        for c in &cols {
            let proj = dot(&cand, c);
            for (x, y) in cand.iter_mut().zip(c) {
                *x -= proj * y;
            }
        }
        let norm = vec_norm(&cand);
        if norm > 1e-8 {
            for x in cand.iter_mut() {
                *x /= norm;
            }
            cols.push(cand);
        }
    }
    if cols.len() != m {
        return Err(EnvKitError::LinearAlgebra(format!(
            "failed to complete orthogonal basis for {f:?}"
        )));
    }
    // P = U_full * blockdiag(Q, I_{m-n}); only the first n columns of
    // U_full mix with Q.
    let mut p = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let v = if j < n {
                // P[:, :N] = U_asc Q so that P J Q^T diag Q = U_asc diag Q
                (0..n).map(|k| cols[k][i] * q.get(k, j)).sum()
            } else {
                cols[j][i]
            };
            p.set(i, j, v);
        }
    }

    // det Q = +1: flipping the sign of a row of Q leaves Q^T diag Q (and
    // hence the reconstruction) unchanged.
    if det_unchecked(&q) < 0.0 {
        for j in 0..n {
            let v = q.get(0, j);
            q.set(0, j, -v);
        }
    }

    let fact = SvdFactorization { p, q, sv };
    let residual = fact.reconstruct().sub(f).norm();
    if residual > TOL_LIN * (1.0 + f.norm()) {
        return Err(EnvKitError::LinearAlgebra(format!(
            "SVD reconstruction residual {residual:.3e} too large for {f:?}"
        )));
    }
    Ok(fact)
}

/// Rank-one product `a (x) b`: the `m x N` matrix with `(a (x) b) x = <a, x> b`.
pub fn rank_one(a: &[f64], b: &[f64]) -> Mat {
    let n = a.len();
    let m = b.len();
    let mut out = Mat::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            out.set(i, j, b[i] * a[j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn det_examples() {
        assert_eq!(det(&Mat::identity(2)).unwrap(), 1.0);
        assert_eq!(det(&Mat::diag(&[2.0, 3.0])).unwrap(), 6.0);
        let perm = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(det(&perm).unwrap(), -1.0);
        assert!(det(&Mat::zeros(3, 2)).is_err());
    }

    #[test]
    fn cross_product_norm_examples() {
        let e12 = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!((cross_product_norm(&e12).unwrap() - 1.0).abs() < TOL_LIN);
        let parallel =
            Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(cross_product_norm(&parallel).unwrap(), 0.0);
        let skew = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!((cross_product_norm(&skew).unwrap() - 1.0).abs() < TOL_LIN);
        assert!(cross_product_norm(&Mat::identity(2)).is_err());
    }

    #[test]
    fn min_singular_product_examples() {
        assert!((min_singular_product(&Mat::diag(&[1.0, 2.0])).unwrap() - 2.0).abs() < TOL_LIN);
        let rank_def = rank_one(&[1.0, 2.0], &[3.0, 4.0]);
        assert!(min_singular_product(&rank_def).unwrap() < TOL_LIN);
        let wide = Mat::zeros(2, 3);
        assert!(min_singular_product(&wide).is_err());
    }

    #[test]
    fn svd_examples() {
        let f = Mat::diag(&[3.0, 1.0]);
        let s = svd_ascending(&f).unwrap();
        assert!((s.sv[0] - 1.0).abs() < TOL_LIN && (s.sv[1] - 3.0).abs() < TOL_LIN);

        let s = svd_ascending(&Mat::identity(3)).unwrap();
        for v in &s.sv {
            assert!((v - 1.0).abs() < TOL_LIN);
        }
        assert!((det_unchecked(&s.q) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rank_one_examples() {
        let e11 = rank_one(&[1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(e11.entries(), &[1.0, 0.0, 0.0, 0.0]);
        let z = rank_one(&[0.0, 0.0], &[1.0, 2.0, 3.0]);
        assert_eq!(z.norm(), 0.0);
        let r = rank_one(&[1.0, 1.0], &[1.0, 0.0, 0.0]);
        assert_eq!(r.entries(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn parse_literal_roundtrip() {
        let m = Mat::parse_literal("0,0;0,2").unwrap();
        assert_eq!(m.dims(), (2, 2));
        assert_eq!(m.get(1, 1), 2.0);
        assert!(Mat::parse_literal("1,x").is_err());
    }

    fn arb_mat(m: usize, n: usize) -> impl Strategy<Value = Mat> {
        proptest::collection::vec(-5.0f64..5.0, m * n)
            .prop_map(move |v| Mat::new(m, n, v).unwrap())
    }

    proptest! {
        #[test]
        fn singular_product_matches_abs_det(f in arb_mat(3, 3)) {
            let v = min_singular_product(&f).unwrap();
            let d = det(&f).unwrap().abs();
            prop_assert!((v - d).abs() <= TOL_LIN * (1.0 + f.norm().powi(3)));
        }

        #[test]
        fn singular_product_matches_cross_norm(f in arb_mat(3, 2)) {
            let v = min_singular_product(&f).unwrap();
            let c = cross_product_norm(&f).unwrap();
            prop_assert!((v - c).abs() <= TOL_LIN * (1.0 + f.norm().powi(2)));
        }

        #[test]
        fn svd_reconstructs(f in arb_mat(4, 3)) {
            let s = svd_ascending(&f).unwrap();
            prop_assert!(s.sv.windows(2).all(|w| w[0] <= w[1] + TOL_LIN));
            prop_assert!(s.sv.iter().all(|&v| v >= -TOL_LIN));
            let residual = s.reconstruct().sub(&f).norm();
            prop_assert!(residual <= TOL_LIN * (1.0 + f.norm()));
            // orthogonality
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| s.q.get(i, k) * s.q.get(j, k)).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((d - expect).abs() < 1e-9);
                }
            }
            prop_assert!((det_unchecked(&s.q) - 1.0).abs() < 1e-8);
        }

        #[test]
        fn rank_one_is_rank_one(
            a in proptest::collection::vec(-3.0f64..3.0, 2),
            b in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let r = rank_one(&a, &b);
            let s = svd_ascending(&r).unwrap();
            // second-smallest of two singular values is sv[0]
            prop_assert!(s.sv[0] <= TOL_LIN * (1.0 + r.norm()));
        }
    }
}
