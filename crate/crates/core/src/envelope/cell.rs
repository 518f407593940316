//! Cell problems on the unit cell `Y = (0,1)^N`: piecewise-affine test
//! fields on Kuhn triangulations, the discrete upper estimate of the
//! envelope `Z W`, and the scale-invariant tiling identity.

use super::step::{continuum_step, OptCfg, StepStatus};
use crate::density::{Density, EnergyFn};
use crate::error::{EnvKitError, Result};
use crate::ext_real::ExtReal;
use crate::matrix::{dot, Mat};
use crate::opt::{coordinate_descent, nelder_mead};
use crate::tolerances::TOL_LIN;
use serde::{Deserialize, Serialize};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    permute(&mut items, 0, &mut out);
    out
}

fn permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, out);
        items.swap(k, i);
    }
}

/// A continuous piecewise-affine field on `Y = (0,1)^N` with values in
/// `R^m`, zero on the boundary, on the Kuhn triangulation at a uniform
/// subdivision (N = 2: 2 triangles per square; N = 3: 6 tetrahedra per
/// cube).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineTestField {
    pub n_dim: usize,
    pub m: usize,
    pub subdiv: usize,
    /// Nodal values, one `R^m` vector per grid node, row-major over the
    /// `(subdiv+1)^N` lattice. Boundary nodes must stay zero.
    pub nodal: Vec<Vec<f64>>,
}

impl AffineTestField {
    pub fn zero(n_dim: usize, m: usize, subdiv: usize) -> AffineTestField {
        assert!(n_dim == 2 || n_dim == 3, "cells are 2- or 3-dimensional");
        assert!(subdiv >= 1);
        let count = (subdiv + 1).pow(n_dim as u32);
        AffineTestField { n_dim, m, subdiv, nodal: vec![vec![0.0; m]; count] }
    }

    fn nodes_per_axis(&self) -> usize {
        self.subdiv + 1
    }

    fn node_index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.nodes_per_axis() + c)
    }

    fn node_coords(&self, mut idx: usize) -> Vec<usize> {
        let npa = self.nodes_per_axis();
        let mut c = vec![0usize; self.n_dim];
        for e in (0..self.n_dim).rev() {
            c[e] = idx % npa;
            idx /= npa;
        }
        c
    }

    fn is_boundary(&self, coords: &[usize]) -> bool {
        coords.iter().any(|&c| c == 0 || c == self.subdiv)
    }

    pub fn node_position(&self, idx: usize) -> Vec<f64> {
        let h = 1.0 / self.subdiv as f64;
        self.node_coords(idx).iter().map(|&c| c as f64 * h).collect()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.nodal.len())
            .filter(|&i| !self.is_boundary(&self.node_coords(i)))
            .collect()
    }

    /// Sets every interior node from a function of its position; the
    /// boundary stays pinned to zero.
    pub fn fill_interior(&mut self, f: impl Fn(&[f64]) -> Vec<f64>) {
        for idx in self.interior_indices() {
            let pos = self.node_position(idx);
            let mut v = f(&pos);
            v.truncate(self.m);
            v.resize(self.m, 0.0);
            self.nodal[idx] = v;
        }
    }

    /// Piecewise-affine evaluation at `y` in the closed cell.
    pub fn value_at(&self, y: &[f64]) -> Vec<f64> {
        let s = self.subdiv as f64;
        let mut cell = vec![0usize; self.n_dim];
        let mut z = vec![0.0f64; self.n_dim];
        for e in 0..self.n_dim {
            let u = (y[e].clamp(0.0, 1.0) * s).min(s - 1e-12);
            cell[e] = u.floor() as usize;
            z[e] = u - cell[e] as f64;
        }
        // Kuhn simplex: order axes by decreasing fractional part.
        let mut order: Vec<usize> = (0..self.n_dim).collect();
        order.sort_by(|&i, &j| z[j].partial_cmp(&z[i]).unwrap_or(std::cmp::Ordering::Equal));
        let mut coords = cell.clone();
        let mut val = self.nodal[self.node_index(&coords)].clone();
        for &axis in &order {
            let prev = self.node_index(&coords);
            coords[axis] += 1;
            let next = self.node_index(&coords);
            for c in 0..self.m {
                val[c] += z[axis] * (self.nodal[next][c] - self.nodal[prev][c]);
            }
        }
        val
    }

    /// Iterates over all simplices, yielding `(volume, gradient)` with the
    /// gradient an `m x N` matrix, constant per simplex.
    fn for_each_simplex(&self, mut visit: impl FnMut(f64, &Mat)) {
        let s = self.subdiv;
        let perms = permutations(self.n_dim);
        // each Kuhn simplex has volume h^N / N!
        let vol = (1.0 / s as f64).powi(self.n_dim as i32) / factorial(self.n_dim) as f64;
        let mut cell = vec![0usize; self.n_dim];
        let cells = s.pow(self.n_dim as u32);
        let mut grad = Mat::zeros(self.m, self.n_dim);
        for c in 0..cells {
            let mut idx = c;
            for e in (0..self.n_dim).rev() {
                cell[e] = idx % s;
                idx /= s;
            }
            for perm in &perms {
                let mut coords = cell.clone();
                let mut prev = self.node_index(&coords);
                for &axis in perm {
                    coords[axis] += 1;
                    let next = self.node_index(&coords);
                    for r in 0..self.m {
                        grad.set(
                            r,
                            axis,
                            (self.nodal[next][r] - self.nodal[prev][r]) * s as f64,
                        );
                    }
                    prev = next;
                }
                visit(vol, &grad);
            }
        }
    }

    /// Exact quadrature of `int_Y W(F + grad phi)` (exact because the
    /// integrand is constant per simplex).
    pub fn cell_energy(&self, w: &dyn EnergyFn, f: &Mat) -> ExtReal {
        debug_assert_eq!(w.dims(), (self.m, self.n_dim));
        let mut acc = ExtReal::ZERO;
        self.for_each_simplex(|vol, grad| {
            acc += w.eval(&f.add(grad)).scale(vol);
        });
        acc
    }

    /// Volume-weighted average of the gradient; zero (to rounding) for
    /// every admissible field, by the zero boundary trace.
    pub fn average_gradient(&self) -> Mat {
        let mut acc = Mat::zeros(self.m, self.n_dim);
        self.for_each_simplex(|vol, grad| {
            acc = acc.add(&grad.scale(vol));
        });
        acc
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product::<usize>().max(1)
}

/// Mesh resolution ladder for the cell-problem estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshCfg {
    /// Subdivisions per axis, coarse to fine; finer levels are
    /// warm-started from coarser optima.
    pub subdivisions: Vec<usize>,
}

impl MeshCfg {
    pub fn defaults(n_dim: usize) -> MeshCfg {
        // caps: N=2 at 8 (128 triangles), N=3 at 6 (1296 tetrahedra)
        let subdivisions = if n_dim == 2 { vec![2, 4, 8] } else { vec![2, 4] };
        MeshCfg { subdivisions }
    }

    pub fn coarse(n_dim: usize) -> MeshCfg {
        let _ = n_dim;
        MeshCfg { subdivisions: vec![2, 4] }
    }
}

/// Discrete upper estimate of the cell-problem envelope
/// `Z W(F) = inf { int_Y W(F + grad phi) : phi in Aff_0(Y; R^m) }`,
/// by multistart local minimization over nodal values. Always `<= W(F)`
/// (the zero field realizes `W(F)` exactly), and nonincreasing along the
/// mesh ladder thanks to warm starts.
pub fn z_envelope_estimate(
    w: &Density,
    f: &Mat,
    mesh: &MeshCfg,
    cfg: &OptCfg,
) -> Result<ExtReal> {
    let (m, n_dim) = (w.m, w.n);
    if n_dim != 2 && n_dim != 3 {
        return Err(EnvKitError::Dimension(
            "cell-problem estimates need N = 2 or 3".into(),
        ));
    }
    if mesh.subdivisions.is_empty() {
        return Err(EnvKitError::Config("empty mesh ladder".into()));
    }
    let mut best = w.eval(f); // zero field, exactly
    let amp = 2.0 * (1.0 + f.norm());

    // Laminate-inspired strip seed from one cheap rank-one step.
    let probe = continuum_step(&|x| w.eval(x), m, n_dim, f, cfg);
    let strip = (probe.status == StepStatus::Interior).then(|| (probe.t, probe.a, probe.b));

    let mut warm: Option<AffineTestField> = None;
    for &subdiv in &mesh.subdivisions {
        let mut starts: Vec<AffineTestField> = vec![AffineTestField::zero(n_dim, m, subdiv)];
        if let Some((t, a, b)) = &strip {
            for periods in [1usize, 2] {
                let mut field = AffineTestField::zero(n_dim, m, subdiv);
                field.fill_interior(|pos| {
                    let u = dot(pos, a) * periods as f64;
                    let frac = u.rem_euclid(1.0);
                    // sawtooth with slopes (1-t) then -t, zero mean
                    let chi = if frac < *t {
                        (1.0 - t) * frac
                    } else {
                        t * (1.0 - frac)
                    } / periods as f64;
                    b.iter().map(|&bi| chi * bi).collect()
                });
                starts.push(field);
            }
        }
        if let Some(prev) = &warm {
            let mut field = AffineTestField::zero(n_dim, m, subdiv);
            field.fill_interior(|pos| prev.value_at(pos));
            starts.push(field);
        }

        let template = AffineTestField::zero(n_dim, m, subdiv);
        let interior = template.interior_indices();
        let dof = interior.len() * m;
        let mut level_best: Option<(ExtReal, AffineTestField)> = None;
        for start in starts {
            let x0: Vec<f64> = interior
                .iter()
                .flat_map(|&i| start.nodal[i].iter().copied())
                .collect();
            let objective = |x: &[f64]| {
                let mut field = template.clone();
                for (slot, &i) in interior.iter().enumerate() {
                    field.nodal[i] = x[slot * m..(slot + 1) * m].to_vec();
                }
                field.cell_energy(w, f).value()
            };
            let lo = vec![-amp; dof];
            let hi = vec![amp; dof];
            let (x, v) = if dof <= 10 {
                nelder_mead(objective, &x0, &lo, &hi, 0.08, cfg.refine_evals * 4)
            } else {
                coordinate_descent(objective, &x0, &lo, &hi, 2, 20)
            };
            let v = ExtReal::try_new(v.max(0.0)).unwrap_or(ExtReal::INFINITY);
            if level_best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                let mut field = template.clone();
                for (slot, &i) in interior.iter().enumerate() {
                    field.nodal[i] = x[slot * m..(slot + 1) * m].to_vec();
                }
                level_best = Some((v, field));
            }
        }
        if let Some((v, field)) = level_best {
            best = best.min(v);
            warm = Some(field);
        }
    }
    Ok(best)
}

/// One tile of a composite test construction: a region of measure
/// `volume` carrying the affine gradient `matrix` and the oscillation
/// `field`.
#[derive(Clone, Debug)]
pub struct TilePiece {
    pub volume: f64,
    pub matrix: Mat,
    pub field: AffineTestField,
}

/// Energy of the tiled construction at scale index `n`: each piece is
/// covered by `n^N` rescaled copies of its cell field with scales
/// `alpha_{i,j} = |V_i|^{1/N} / n`. The rescaling identity makes the
/// result independent of `n`; the bookkeeping is performed literally and
/// checked against the closed form `sum_i |V_i| * cell_energy_i`.
pub fn tile_test_field(w: &dyn EnergyFn, pieces: &[TilePiece], n: usize) -> Result<ExtReal> {
    if n == 0 {
        return Err(EnvKitError::Parameter("scale index n must be positive".into()));
    }
    if pieces.is_empty() {
        return Err(EnvKitError::Config("no pieces".into()));
    }
    let n_dim = pieces[0].field.n_dim;
    let m = pieces[0].field.m;
    if w.dims() != (m, n_dim) {
        return Err(EnvKitError::Dimension("density dims do not match pieces".into()));
    }
    let mut closed = ExtReal::ZERO;
    let mut tiled = ExtReal::ZERO;
    for piece in pieces {
        if piece.volume <= 0.0 {
            return Err(EnvKitError::Parameter("piece volumes must be positive".into()));
        }
        if piece.field.n_dim != n_dim
            || piece.field.m != m
            || piece.matrix.dims() != (m, n_dim)
        {
            return Err(EnvKitError::Dimension("inconsistent piece dims".into()));
        }
        // cell_energy is scale invariant, so each rescaled copy of the
        // field contributes alpha^N times the unit-cell energy
        let cell = piece.field.cell_energy(w, &piece.matrix);
        closed += cell.scale(piece.volume);
        let alpha = piece.volume.powf(1.0 / n_dim as f64) / n as f64;
        let copies = n.pow(n_dim as u32);
        let mut acc = ExtReal::ZERO;
        for _copy in 0..copies {
            acc += cell.scale(alpha.powi(n_dim as i32));
        }
        tiled += acc;
    }
    match (tiled.finite(), closed.finite()) {
        (Some(t), Some(c)) => {
            if (t - c).abs() > TOL_LIN * (1.0 + c.abs()) {
                return Err(EnvKitError::Certificate(format!(
                    "tiled energy {t} deviates from closed form {c}"
                )));
            }
            Ok(tiled)
        }
        (None, None) => Ok(ExtReal::INFINITY),
        _ => Err(EnvKitError::Certificate(
            "tiled and closed-form energies disagree on finiteness".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{make_density, DensitySpec, FamilyParams};

    #[test]
    fn zero_field_energy_is_raw_density() {
        let w = make_density(&DensitySpec::simple("quadratic", 3, 2, 2.0)).unwrap();
        let field = AffineTestField::zero(2, 3, 4);
        let f = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.0]]).unwrap();
        let e = field.cell_energy(&w, &f);
        assert!((e.value() - w.eval(&f).value()).abs() < 1e-12);
    }

    #[test]
    fn average_gradient_vanishes() {
        for n_dim in [2usize, 3] {
            let mut field = AffineTestField::zero(n_dim, 3, 3);
            field.fill_interior(|pos| {
                vec![
                    (pos[0] * 9.0).sin(),
                    pos.iter().sum::<f64>(),
                    pos[0] * pos[n_dim - 1],
                ]
            });
            assert!(field.average_gradient().norm() < TOL_LIN, "n_dim {n_dim}");
        }
    }

    #[test]
    fn value_at_reproduces_nodes_and_midpoints() {
        let mut field = AffineTestField::zero(2, 2, 2);
        field.fill_interior(|_| vec![1.0, -2.0]);
        // interior node of the 3x3 lattice is (0.5, 0.5)
        let v = field.value_at(&[0.5, 0.5]);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] + 2.0).abs() < 1e-12);
        let b = field.value_at(&[0.0, 0.7]);
        assert!(b[0].abs() < 1e-12);
    }

    #[test]
    fn convex_estimate_equals_density() {
        let w = make_density(&DensitySpec::simple("quadratic", 2, 2, 2.0)).unwrap();
        let f = Mat::diag(&[0.7, -0.4]);
        let v = z_envelope_estimate(&w, &f, &MeshCfg::coarse(2), &OptCfg::fast()).unwrap();
        let raw = w.eval(&f).value();
        assert!((v.value() - raw).abs() <= 1e-6 * (1.0 + raw));
    }

    #[test]
    fn double_well_estimate_drops_toward_zero() {
        let a_well = Mat::zeros(2, 2);
        let b_well = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let spec = DensitySpec {
            family: "double_well".into(),
            m: 2,
            n: 2,
            p: Some(2.0),
            params: FamilyParams {
                a: Some(a_well),
                b: Some(b_well.clone()),
                ..Default::default()
            },
        };
        let w = make_density(&spec).unwrap();
        let mid = b_well.scale(0.5);
        let raw = w.eval(&mid).value();
        let v = z_envelope_estimate(&w, &mid, &MeshCfg::defaults(2), &OptCfg::fast()).unwrap();
        assert!(v.value() < 0.25 * raw, "estimate {} vs raw {raw}", v.value());
    }

    #[test]
    fn tiling_is_scale_invariant() {
        let w = make_density(&DensitySpec::simple("quadratic", 2, 2, 2.0)).unwrap();
        let mut field = AffineTestField::zero(2, 2, 2);
        field.fill_interior(|_| vec![0.3, -0.1]);
        let pieces = vec![
            TilePiece { volume: 0.4, matrix: Mat::diag(&[1.0, 0.0]), field: field.clone() },
            TilePiece { volume: 1.3, matrix: Mat::identity(2), field },
        ];
        let reference = tile_test_field(&w, &pieces, 1).unwrap();
        for n in [2usize, 4, 8] {
            let v = tile_test_field(&w, &pieces, n).unwrap();
            assert!(
                (v.value() - reference.value()).abs() <= 1e-12 * (1.0 + reference.value()),
                "n = {n}"
            );
        }
    }
}
