//! Box-relative convex lower reference via a double discrete
//! Legendre-Fenchel transform.
//!
//! The density is sampled on a uniform box in matrix-entry space; the
//! conjugate is computed axis by axis (the factored transform), and the
//! biconjugate is tabulated back on the primal grid. The result is a
//! convex minorant of the sampled values — a *box-relative* reference for
//! bracketing purposes, not the global convex envelope.

use crate::density::{Density, EnergyFn};
use crate::error::{EnvKitError, Result};
use crate::ext_real::ExtReal;
use crate::matrix::Mat;
use serde::{Deserialize, Serialize};

/// Uniform per-entry sampling box.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridCfg {
    pub min: f64,
    pub max: f64,
    /// Nodes per entry axis.
    pub count: usize,
}

impl GridCfg {
    pub fn symmetric(radius: f64, count: usize) -> GridCfg {
        GridCfg { min: -radius, max: radius, count }
    }

    fn values(&self) -> Vec<f64> {
        let h = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.min + h * i as f64).collect()
    }
}

const MAX_TABLE_CELLS: usize = 8_000_000;

/// Evaluable convex minorant of the sampled density.
pub struct ConvexReference {
    m: usize,
    n: usize,
    cfg: GridCfg,
    /// Biconjugate at the primal nodes; `+inf` only in the degenerate
    /// all-infinite case.
    table: Vec<f64>,
}

impl ConvexReference {
    /// Multilinear interpolation of the biconjugate, with coordinates
    /// clamped into the box (box-relative by construction) and the value
    /// clamped at zero (densities are nonnegative).
    pub fn eval(&self, f: &Mat) -> ExtReal {
        let vals = self.cfg.values();
        let h = vals[1] - vals[0];
        let npts = vals.len();
        let d = self.m * self.n;
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0f64; d];
        for (e, &x) in f.entries().iter().enumerate() {
            let u = ((x.clamp(self.cfg.min, self.cfg.max)) - self.cfg.min) / h;
            let i0 = (u.floor() as usize).min(npts - 2);
            base[e] = i0;
            frac[e] = (u - i0 as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut wgt = 1.0;
            let mut idx = 0usize;
            for e in 0..d {
                let hi = (corner >> e) & 1 == 1;
                wgt *= if hi { frac[e] } else { 1.0 - frac[e] };
                idx = idx * npts + base[e] + hi as usize;
            }
            if wgt == 0.0 {
                continue;
            }
            let v = self.table[idx];
            if v.is_infinite() {
                return ExtReal::INFINITY;
            }
            acc += wgt * v;
        }
        ExtReal::new(acc.max(0.0))
    }

    /// Value at an exact primal node (by multi-index).
    pub fn node_value(&self, idx: usize) -> f64 {
        self.table[idx]
    }
}

impl EnergyFn for ConvexReference {
    fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }
    fn eval(&self, f: &Mat) -> ExtReal {
        ConvexReference::eval(self, f)
    }
}

/// 1-D conjugate of each fiber along `axis`:
/// `out(s) = max_x s*x - h(x)`, skipping `+inf` inputs; a `-inf` input
/// forces `+inf` (it can only arise from an everywhere-infinite fiber
/// earlier in the pipeline). Empty fibers give `-inf`.
fn conjugate_axis(
    data: &[f64],
    dims: &mut Vec<usize>,
    axis: usize,
    src: &[f64],
    dst: &[f64],
) -> Vec<f64> {
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let src_len = dims[axis];
    debug_assert_eq!(src_len, src.len());
    let mut out = vec![f64::NEG_INFINITY; outer * dst.len() * inner];
    for o in 0..outer {
        for i in 0..inner {
            for (sj, &s) in dst.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for (k, &x) in src.iter().enumerate() {
                    let h = data[(o * src_len + k) * inner + i];
                    if h == f64::INFINITY {
                        continue;
                    }
                    if h == f64::NEG_INFINITY {
                        best = f64::INFINITY;
                        break;
                    }
                    let v = s * x - h;
                    if v > best {
                        best = v;
                    }
                }
                out[(o * dst.len() + sj) * inner + i] = best;
            }
        }
    }
    dims[axis] = dst.len();
    out
}

fn full_transform(data: Vec<f64>, dims: &mut Vec<usize>, axes_src: &[Vec<f64>], axes_dst: &[Vec<f64>]) -> Vec<f64> {
    let d = dims.len();
    let mut cur = data;
    for ax in 0..d {
        cur = conjugate_axis(&cur, dims, ax, &axes_src[ax], &axes_dst[ax]);
        if ax + 1 < d {
            for v in cur.iter_mut() {
                *v = -*v;
            }
        }
    }
    cur
}

/// Builds the box-relative convex lower reference for `w`.
pub fn convex_envelope_reference(w: &Density, cfg: &GridCfg) -> Result<ConvexReference> {
    if cfg.count < 3 || cfg.max <= cfg.min {
        return Err(EnvKitError::Config("grid needs max > min and at least 3 nodes".into()));
    }
    let d = w.m * w.n;
    let primal = cfg.values();
    let npts = primal.len();
    if npts.pow(d as u32) > MAX_TABLE_CELLS {
        return Err(EnvKitError::Resource(format!(
            "convex reference table would need {} cells",
            npts.pow(d as u32)
        )));
    }

    // Sample the density.
    let mut dims: Vec<usize> = vec![npts; d];
    let total: usize = npts.pow(d as u32);
    let mut samples = vec![0.0f64; total];
    let mut coords = vec![0usize; d];
    for (slot, val) in samples.iter_mut().enumerate() {
        let mut idx = slot;
        for e in (0..d).rev() {
            coords[e] = idx % npts;
            idx /= npts;
        }
        let entries: Vec<f64> = coords.iter().map(|&c| primal[c]).collect();
        *val = w.eval(&Mat::new(w.m, w.n, entries)?).value();
    }

    // Dual grid per axis: the adjacent-difference slopes of the center
    // fiber (exact supporting slopes for separable convex samples) plus
    // a uniform fill over the global slope range.
    let mut duals: Vec<Vec<f64>> = Vec::with_capacity(d);
    for ax in 0..d {
        let inner: usize = dims[ax + 1..].iter().product();
        let outer: usize = dims[..ax].iter().product();
        let h = primal[1] - primal[0];
        let mut smin = f64::INFINITY;
        let mut smax = f64::NEG_INFINITY;
        for o in 0..outer {
            for i in 0..inner {
                for k in 0..npts - 1 {
                    let lo = samples[(o * npts + k) * inner + i];
                    let hi = samples[(o * npts + k + 1) * inner + i];
                    if lo.is_finite() && hi.is_finite() {
                        let s = (hi - lo) / h;
                        smin = smin.min(s);
                        smax = smax.max(s);
                    }
                }
            }
        }
        let mut set: Vec<f64> = Vec::new();
        if smin.is_finite() {
            // center fiber slopes
            let co = outer / 2;
            let ci = inner / 2;
            for k in 0..npts - 1 {
                let lo = samples[(co * npts + k) * inner + ci];
                let hi = samples[(co * npts + k + 1) * inner + ci];
                if lo.is_finite() && hi.is_finite() {
                    set.push((hi - lo) / h);
                }
            }
            // keep the dual axis about as large as the primal one so the
            // final tables stay within the cell budget
            set.push(smin);
            set.push(smax);
            if set.len() < 9 {
                for j in 0..9 {
                    set.push(smin + (smax - smin) * j as f64 / 8.0);
                }
            }
        } else {
            set.push(0.0);
        }
        set.sort_by(|a, b| a.partial_cmp(b).expect("finite slopes"));
        set.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        duals.push(set);
    }
    if duals.iter().map(|v| v.len()).product::<usize>() > MAX_TABLE_CELLS {
        return Err(EnvKitError::Resource("dual table too large".into()));
    }

    // f* over the dual grid, then the biconjugate back on the primal grid.
    let primal_axes: Vec<Vec<f64>> = vec![primal.clone(); d];
    let conj = full_transform(samples, &mut dims, &primal_axes, &duals);
    let bi = full_transform(conj, &mut dims, &duals, &primal_axes);
    // table currently holds (f*)* directly
    let table: Vec<f64> = bi
        .into_iter()
        .map(|v| if v == f64::NEG_INFINITY { f64::INFINITY } else { v })
        .collect();
    Ok(ConvexReference { m: w.m, n: w.n, cfg: cfg.clone(), table })
}
