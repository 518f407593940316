//! The lamination hierarchy `R_0 W >= R_1 W >= ...` on single matrices
//! and on matrix grids.
//!
//! For entry spaces of dimension `m*N <= 4` the engine accelerates nested
//! evaluations with a full-dimensional value lattice: level `i` is one
//! sweep of lattice-aligned rank-one splits over level `i-1`. Off-lattice
//! evaluations interpolate multilinearly among finite lattice corners and
//! fall back to the raw density near the constraint set or outside the
//! box — always an upper estimate, never an interpolation across the
//! boundary of the effective domain.

use super::step::{continuum_step, OptCfg, StepStatus};
use super::tree::LaminateTree;
use crate::density::Density;
use crate::error::{EnvKitError, Result};
use crate::ext_real::ExtReal;
use crate::matrix::{rank_one, Mat};
use crate::tolerances::TOL_CONV;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Mutex;

/// One matrix-entry axis of an evaluation grid. `count = 1` pins the
/// entry to `min`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn fixed(v: f64) -> AxisSpec {
        AxisSpec { min: v, max: v, count: 1 }
    }

    pub fn range(min: f64, max: f64, count: usize) -> AxisSpec {
        AxisSpec { min, max, count }
    }

    fn values(&self) -> Vec<f64> {
        if self.count <= 1 {
            vec![self.min]
        } else {
            let h = (self.max - self.min) / (self.count - 1) as f64;
            (0..self.count).map(|i| self.min + h * i as f64).collect()
        }
    }
}

/// Axis-per-entry grid over `M^{m x N}`, row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub axes: Vec<AxisSpec>,
}

const MAX_GRID_NODES: usize = 1_000_000;

impl GridSpec {
    /// Grid varying only the diagonal entries of square `k x k` matrices.
    pub fn diagonal(k: usize, min: f64, max: f64, count: usize) -> GridSpec {
        let axes = (0..k * k)
            .map(|e| {
                let (i, j) = (e / k, e % k);
                if i == j {
                    AxisSpec::range(min, max, count)
                } else {
                    AxisSpec::fixed(0.0)
                }
            })
            .collect();
        GridSpec { m: k, n: k, axes }
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.count.max(1)).product()
    }

    pub fn nodes(&self) -> Result<Vec<Mat>> {
        if self.axes.len() != self.m * self.n {
            return Err(EnvKitError::Dimension(format!(
                "grid has {} axes for a {}x{} matrix",
                self.axes.len(),
                self.m,
                self.n
            )));
        }
        if self.node_count() > MAX_GRID_NODES {
            return Err(EnvKitError::Resource(format!(
                "grid has {} nodes (limit {MAX_GRID_NODES})",
                self.node_count()
            )));
        }
        let axis_vals: Vec<Vec<f64>> = self.axes.iter().map(|a| a.values()).collect();
        let mut out = Vec::with_capacity(self.node_count());
        let d = axis_vals.len();
        let mut idx = vec![0usize; d];
        loop {
            let entries: Vec<f64> = (0..d).map(|e| axis_vals[e][idx[e]]).collect();
            out.push(Mat::new(self.m, self.n, entries)?);
            // odometer increment, last axis fastest
            let mut e = d;
            loop {
                if e == 0 {
                    return Ok(out);
                }
                e -= 1;
                idx[e] += 1;
                if idx[e] < axis_vals[e].len() {
                    break;
                }
                idx[e] = 0;
            }
        }
    }
}

/// Per-node envelope iterates on a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeTable {
    pub grid: GridSpec,
    /// `values[node][i]` = R_i at that node; nonincreasing in `i`,
    /// `values[node][0]` is the raw density.
    pub values: Vec<Vec<ExtReal>>,
    pub converged: Vec<bool>,
}

/// Result of the envelope iteration at one matrix.
#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeResult {
    /// The laminate value; equals `tree.value` by construction.
    pub value: ExtReal,
    /// R_0(F), R_1(F), ... down to convergence or the iteration cap.
    pub iterates: Vec<ExtReal>,
    pub tree: LaminateTree,
}

// ---------------------------------------------------------------------
// lattice internals

/// A rank-one direction whose matrix has small integer entries, so that
/// lattice nodes split onto lattice nodes.
struct LatticeDir {
    ints: Vec<i64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

struct Lattice {
    d: usize,
    npts: usize,
    radius: f64,
    h: f64,
    dirs: Vec<LatticeDir>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

fn half_int_vectors(dim: usize, max_entry: i64) -> Vec<Vec<i64>> {
    // All nonzero integer vectors with entries in [-max, max], one per
    // ray: primitive, first nonzero entry positive.
    let mut out = Vec::new();
    let span = (2 * max_entry + 1) as usize;
    let total = span.pow(dim as u32);
    'outer: for code in 0..total {
        let mut v = Vec::with_capacity(dim);
        let mut c = code;
        for _ in 0..dim {
            v.push((c % span) as i64 - max_entry);
            c /= span;
        }
        let g = v.iter().fold(0i64, |acc, &x| gcd(acc, x));
        if g == 0 || g > 1 {
            continue;
        }
        for &x in &v {
            if x != 0 {
                if x < 0 {
                    continue 'outer;
                }
                break;
            }
        }
        out.push(v);
    }
    out
}

impl Lattice {
    fn new(m: usize, n: usize, radius: f64, npts: usize) -> Lattice {
        let d = m * n;
        let npts = if npts % 2 == 0 { npts + 1 } else { npts }.max(5);
        let h = 2.0 * radius / (npts - 1) as f64;
        let a_max = if n <= 2 { 2 } else { 1 };
        let b_max = if m <= 2 { 2 } else { 1 };
        let mut dirs = Vec::new();
        for a in half_int_vectors(n, a_max) {
            for b in half_int_vectors(m, b_max) {
                let mut ints = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        ints.push(b[i] * a[j]);
                    }
                }
                dirs.push(LatticeDir {
                    ints,
                    a: a.iter().map(|&x| x as f64).collect(),
                    b: b.iter().map(|&x| x as f64).collect(),
                });
            }
        }
        Lattice { d, npts, radius, h, dirs }
    }

    fn node_count(&self) -> usize {
        self.npts.pow(self.d as u32)
    }

    fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0usize; self.d];
        for e in (0..self.d).rev() {
            c[e] = idx % self.npts;
            idx /= self.npts;
        }
        c
    }

    fn encode(&self, coords: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for &c in coords {
            if c < 0 || c >= self.npts as i64 {
                return None;
            }
            idx = idx * self.npts + c as usize;
        }
        Some(idx)
    }

    fn coord_value(&self, c: i64) -> f64 {
        -self.radius + self.h * c as f64
    }

    fn point(&self, coords: &[i64], m: usize, n: usize) -> Mat {
        let entries: Vec<f64> = coords.iter().map(|&c| self.coord_value(c)).collect();
        Mat::new(m, n, entries).expect("finite lattice point")
    }

    /// Multilinear interpolation among finite corners; `None` if the
    /// point leaves the box or touches an infinite corner.
    fn interp(&self, table: &[f64], x: &Mat) -> Option<f64> {
        let d = self.d;
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0f64; d];
        for (e, &v) in x.entries().iter().enumerate() {
            let u = (v + self.radius) / self.h;
            if u < -1e-9 || u > (self.npts - 1) as f64 + 1e-9 {
                return None;
            }
            let i0 = (u.floor() as usize).min(self.npts - 2);
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
                idx = idx * self.npts + base[e] + hi as usize;
            }
            if wgt == 0.0 {
                continue;
            }
            let v = table[idx];
            if !v.is_finite() {
                return None;
            }
            acc += wgt * v;
        }
        Some(acc)
    }
}

// ---------------------------------------------------------------------

/// Shared relaxation state for one density: level tables are computed
/// once and reused across queries.
pub struct EnvelopeEngine {
    w: Density,
    cfg: OptCfg,
    lattice: Option<Lattice>,
    /// `tables[i]` holds the level-i values at lattice nodes.
    tables: Vec<Vec<f64>>,
    /// Memo for the shallow recursion used when the entry space is too
    /// big for a lattice (dimension > 4).
    deep_memo: Mutex<HashMap<u64, f64>>,
}

impl EnvelopeEngine {
    pub fn new(w: Density, cfg: OptCfg, radius: f64) -> EnvelopeEngine {
        let lattice = if w.m * w.n <= 4 {
            Some(Lattice::new(w.m, w.n, radius, cfg.lattice_points))
        } else {
            None
        };
        EnvelopeEngine {
            w,
            cfg,
            lattice,
            tables: Vec::new(),
            deep_memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn density(&self) -> &Density {
        &self.w
    }

    /// Makes sure lattice tables exist through `level` sweeps.
    fn ensure_tables(&mut self, level: usize) {
        let Some(lat) = &self.lattice else { return };
        if self.tables.is_empty() {
            let (m, n) = (self.w.m, self.w.n);
            let t0: Vec<f64> = (0..lat.node_count())
                .into_par_iter()
                .map(|i| {
                    let coords: Vec<i64> =
                        lat.decode(i).iter().map(|&c| c as i64).collect();
                    self.w.eval(&lat.point(&coords, m, n)).value()
                })
                .collect();
            self.tables.push(t0);
        }
        while self.tables.len() <= level {
            let prev = self.tables.last().expect("T_0 exists");
            let next = self.sweep(prev);
            self.tables.push(next);
        }
    }

    /// One lattice sweep: best lattice-aligned rank-one split per node.
    fn sweep(&self, prev: &[f64]) -> Vec<f64> {
        let lat = self.lattice.as_ref().expect("sweep needs a lattice");
        let (m, n) = (self.w.m, self.w.n);
        let kmax = self.cfg.lattice_pair_sum.max(2) as i64;
        (0..lat.node_count())
            .into_par_iter()
            .map(|i| {
                let coords: Vec<i64> = lat.decode(i).iter().map(|&c| c as i64).collect();
                let mut best = prev[i];
                let mut shifted = vec![0i64; lat.d];
                for dir in &lat.dirs {
                    for km in 1..kmax {
                        for kp in 1..=(kmax - km) {
                            let t = km as f64 / (km + kp) as f64;
                            let vm = self.lattice_value(prev, &coords, &dir.ints, -km, &mut shifted, m, n);
                            if !vm.is_finite() && t < 1.0 {
                                continue;
                            }
                            let vp = self.lattice_value(prev, &coords, &dir.ints, kp, &mut shifted, m, n);
                            let obj = (1.0 - t) * vm + t * vp;
                            if obj < best {
                                best = obj;
                            }
                        }
                    }
                }
                best
            })
            .collect()
    }

    fn lattice_value(
        &self,
        table: &[f64],
        coords: &[i64],
        ints: &[i64],
        k: i64,
        scratch: &mut [i64],
        m: usize,
        n: usize,
    ) -> f64 {
        for (s, (&c, &step)) in scratch.iter_mut().zip(coords.iter().zip(ints)) {
            *s = c + k * step;
        }
        let lat = self.lattice.as_ref().expect("lattice");
        match lat.encode(scratch) {
            Some(idx) => table[idx],
            // Outside the box the level value is unknown; the raw density
            // is a sound stand-in (it only weakens the split).
            None => self.w.eval(&lat.point(scratch, m, n)).value(),
        }
    }

    /// Evaluates the level-`level` relaxed energy at an arbitrary matrix.
    pub fn level_value(&self, level: usize, x: &Mat) -> ExtReal {
        let raw = self.w.eval(x);
        if level == 0 {
            return raw;
        }
        if let Some(lat) = &self.lattice {
            if let Some(table) = self.tables.get(level) {
                if let Some(v) = lat.interp(table, x) {
                    return raw.min(ExtReal::new(v.max(0.0)));
                }
            }
            return raw;
        }
        // No lattice (entry dimension > 4): one shallow, memoized
        // relaxation step over the raw density stands in for every
        // deeper level.
        let key = x.bits_key();
        if let Some(&v) = self.deep_memo.lock().expect("memo lock").get(&key) {
            return raw.min(ExtReal::new(v));
        }
        // micro budget: this runs once per evaluation of an outer step,
        // so its cost multiplies with the outer budget
        let cheap = OptCfg {
            directions_dim2: 6,
            directions_dim3: 8,
            t_grid: 3,
            s_grid: 4,
            refine_evals: 20,
            multistart: 1,
            seed: self.cfg.seed,
            ..OptCfg::fast()
        };
        let step = continuum_step(&|y| self.w.eval(y), self.w.m, self.w.n, x, &cheap);
        let v = step.value.min(raw);
        let mut memo = self.deep_memo.lock().expect("memo lock");
        if memo.len() < 1 << 20 {
            memo.insert(key, v.value());
        }
        v
    }

    fn converged(a: ExtReal, b: ExtReal) -> bool {
        match (a.finite(), b.finite()) {
            (Some(x), Some(y)) => (x - y).abs() <= TOL_CONV * (1.0 + y.abs()),
            (None, None) => true,
            _ => false,
        }
    }

    /// Full envelope iteration at `f`: iterates, realizing tree, value.
    pub fn envelope_at(&mut self, f: &Mat, max_iters: usize) -> Result<EnvelopeResult> {
        if max_iters == 0 {
            return Err(EnvKitError::Parameter("max_iters must be at least 1".into()));
        }
        if f.dims() != (self.w.m, self.w.n) {
            return Err(EnvKitError::Dimension(format!(
                "matrix {:?} does not match density dims {}x{}",
                f.dims(),
                self.w.m,
                self.w.n
            )));
        }
        let mut iterates = vec![self.w.eval(f)];
        for i in 1..=max_iters {
            if i >= 2 && self.lattice.is_some() {
                self.ensure_tables(i - 1);
            }
            let level = i - 1;
            let step = continuum_step(
                &|x| self.level_value(level, x),
                self.w.m,
                self.w.n,
                f,
                &self.cfg,
            );
            let prev = *iterates.last().expect("nonempty");
            // The lattice-aligned step also probes exact split targets
            // (e.g. point wells) that a continuous local search cannot
            // hit when the level energy is discontinuous there.
            let vi = prev.min(step.value).min(self.lattice_step_at_point(level, f));
            iterates.push(vi);
            // A stagnant first iterate is not evidence of convergence:
            // R_1 can equal R_0 at points whose gains only appear two
            // levels down (e.g. rank-two points of a density with a
            // point well). Require one table-backed iteration first.
            if i >= 2 && Self::converged(vi, prev) {
                break;
            }
        }
        let last = *iterates.last().expect("nonempty");
        // Depth = first level already achieving the converged value.
        let depth = iterates
            .iter()
            .position(|&v| Self::converged(v, last) || v <= last)
            .unwrap_or(iterates.len() - 1);
        if depth >= 2 && self.lattice.is_some() {
            self.ensure_tables(depth - 1);
        }
        let tree = self.expand_tree(f, depth, 1.0);
        let tree_value = tree.value(&self.w);
        let raw = self.w.eval(f);
        let (value, tree) = if raw < tree_value {
            (raw, LaminateTree::leaf(f.clone(), 1.0))
        } else {
            (tree_value, tree)
        };
        Ok(EnvelopeResult { value, iterates, tree })
    }

    fn expand_tree(&self, x: &Mat, level: usize, weight: f64) -> LaminateTree {
        if level == 0 {
            return LaminateTree::leaf(x.clone(), weight);
        }
        let below = level - 1;
        let step = continuum_step(
            &|y| self.level_value(below, y),
            self.w.m,
            self.w.n,
            x,
            &self.cfg,
        );
        let raw = self.w.eval(x);
        let improves = match (step.value.finite(), raw.finite()) {
            (Some(s), Some(r)) => s < r - 1e-12 * (1.0 + r.abs()),
            (Some(_), None) => true,
            _ => false,
        };
        if step.status != StepStatus::Interior || !improves {
            return LaminateTree::leaf(x.clone(), weight);
        }
        let dir = rank_one(&step.a, &step.b);
        let minus = x.axpy(-step.t, &dir);
        let plus = x.axpy(1.0 - step.t, &dir);
        LaminateTree::Split {
            t: step.t,
            a: step.a.clone(),
            b: step.b.clone(),
            minus: Box::new(self.expand_tree(&minus, below, weight * (1.0 - step.t))),
            plus: Box::new(self.expand_tree(&plus, below, weight * step.t)),
        }
    }

    /// Cheap lattice-direction step at an arbitrary point against the
    /// level-`level` energy (used for grid tables).
    fn lattice_step_at_point(&self, level: usize, x: &Mat) -> ExtReal {
        let base = self.level_value(level, x);
        let Some(lat) = &self.lattice else { return base };
        let kmax = self.cfg.lattice_pair_sum.max(2) as i64;
        let mut best = base;
        for dir in &lat.dirs {
            let d = rank_one(&dir.a, &dir.b);
            for km in 1..kmax {
                for kp in 1..=(kmax - km) {
                    let t = km as f64 / (km + kp) as f64;
                    let minus = x.axpy(-(km as f64) * lat.h, &d);
                    let vm = self.level_value(level, &minus);
                    if vm.is_infinite() {
                        continue;
                    }
                    let plus = x.axpy(kp as f64 * lat.h, &d);
                    let vp = self.level_value(level, &plus);
                    let obj = ExtReal::combine(t, vm, vp);
                    best = best.min(obj);
                }
            }
        }
        best
    }
}

/// Kohn-Strang iteration at a single matrix. Builds a private engine;
/// batch callers should construct an [`EnvelopeEngine`] once and use
/// [`EnvelopeEngine::envelope_at`].
pub fn rank_one_envelope(
    w: &Density,
    f: &Mat,
    max_iters: usize,
    cfg: &OptCfg,
) -> Result<EnvelopeResult> {
    let radius = 2.0 * (1.0 + f.norm());
    let mut engine = EnvelopeEngine::new(w.clone(), cfg.clone(), radius);
    engine.envelope_at(f, max_iters)
}

/// Envelope iterates on every node of a grid.
pub fn envelope_table(
    w: &Density,
    grid: &GridSpec,
    max_iters: usize,
    cfg: &OptCfg,
) -> Result<EnvelopeTable> {
    if (grid.m, grid.n) != (w.m, w.n) {
        return Err(EnvKitError::Dimension("grid dims do not match density".into()));
    }
    let nodes = grid.nodes()?;
    if nodes.is_empty() {
        return Err(EnvKitError::Config("empty grid".into()));
    }
    let max_norm = nodes.iter().map(Mat::norm).fold(0.0, f64::max);
    let mut engine = EnvelopeEngine::new(w.clone(), cfg.clone(), 1.5 * max_norm + 1.0);
    if engine.lattice.is_some() && max_iters >= 2 {
        engine.ensure_tables(max_iters - 1);
    }
    let eng = &engine;
    let rows: Vec<Vec<ExtReal>> = nodes
        .par_iter()
        .map(|node| {
            let mut seq = vec![eng.w.eval(node)];
            for i in 1..=max_iters {
                let prev = *seq.last().expect("nonempty");
                let cand = eng.lattice_step_at_point(i - 1, node);
                seq.push(prev.min(cand));
            }
            seq
        })
        .collect();
    let converged = rows
        .iter()
        .map(|seq| {
            let k = seq.len();
            EnvelopeEngine::converged(seq[k - 1], seq[k - 2])
        })
        .collect();
    Ok(EnvelopeTable { grid: grid.clone(), values: rows, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{make_density, DensitySpec, FamilyParams};

    #[test]
    fn grid_spec_enumerates_nodes() {
        let g = GridSpec::diagonal(2, -1.0, 1.0, 3);
        let nodes = g.nodes().unwrap();
        assert_eq!(nodes.len(), 9);
        assert_eq!(nodes[0].get(0, 0), -1.0);
        assert_eq!(nodes[0].get(0, 1), 0.0);
    }

    #[test]
    fn oversized_grid_is_resource_error() {
        let g = GridSpec {
            m: 2,
            n: 2,
            axes: vec![AxisSpec::range(-1.0, 1.0, 101); 4],
        };
        assert!(matches!(g.nodes(), Err(EnvKitError::Resource(_))));
    }

    #[test]
    fn quadratic_envelope_is_identity() {
        let w = make_density(&DensitySpec::simple("quadratic", 2, 2, 2.0)).unwrap();
        let f = Mat::diag(&[1.0, -2.0]);
        let r = rank_one_envelope(&w, &f, 4, &OptCfg::fast()).unwrap();
        assert_eq!(r.value, w.eval(&f));
        assert_eq!(r.tree.depth(), 0);
        assert!(r.iterates.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn double_well_midpoint_depth_one() {
        let a_well = Mat::zeros(2, 2);
        let b_well = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let spec = DensitySpec {
            family: "double_well".into(),
            m: 2,
            n: 2,
            p: Some(2.0),
            params: FamilyParams {
                a: Some(a_well.clone()),
                b: Some(b_well.clone()),
                ..Default::default()
            },
        };
        let w = make_density(&spec).unwrap();
        let mid = b_well.scale(0.5);
        let r = rank_one_envelope(&w, &mid, 4, &OptCfg::default()).unwrap();
        assert!(r.value.value() < 1e-6, "value {}", r.value);
        assert_eq!(r.tree.depth(), 1);
        r.tree.check_invariants().unwrap();
        let tv = r.tree.value(&w);
        assert!((tv.value() - r.value.value()).abs() <= 1e-6);
    }

    #[test]
    fn table_is_monotone_and_r0_is_raw() {
        let w = make_density(&DensitySpec::simple("kohn_strang", 2, 2, 2.0)).unwrap();
        let grid = GridSpec::diagonal(2, -1.0, 1.0, 5);
        let cfg = OptCfg::fast();
        let table = envelope_table(&w, &grid, 3, &cfg).unwrap();
        let nodes = grid.nodes().unwrap();
        for (node, seq) in nodes.iter().zip(&table.values) {
            assert_eq!(seq[0], w.eval(node));
            for pair in seq.windows(2) {
                assert!(pair[1] <= pair[0]);
            }
        }
    }

    #[test]
    fn det_barrier_nodes_gain_finite_values() {
        let w = make_density(&DensitySpec::simple("det_barrier", 2, 2, 2.0)).unwrap();
        let grid = GridSpec::diagonal(2, -1.5, 1.5, 5);
        let table = envelope_table(&w, &grid, 3, &OptCfg::fast()).unwrap();
        let nodes = grid.nodes().unwrap();
        let mut relaxed_to_finite = 0;
        for (node, seq) in nodes.iter().zip(&table.values) {
            if w.eval(node).is_infinite() && seq.last().unwrap().is_finite() {
                relaxed_to_finite += 1;
            }
        }
        assert!(relaxed_to_finite > 0, "no constrained node became finite");
    }
}
