//! 3d -> 2d reduction: the membrane density `W_0(xi) = inf_zeta
//! W(xi|zeta)`, bracketing of `Q W_0`, the Z-infinity commutation
//! diagnostic, and thin-film energies on the explicit recovery family
//! `phi(x, x3) = psi(x) + x3 phi_k(x)`.

use crate::density::{ConstraintClass, Density, EnergyFn};
use crate::envelope::{
    convex_envelope_reference, rank_one_envelope, z_envelope_estimate, GridCfg, MeshCfg, OptCfg,
};
use crate::error::{EnvKitError, Result};
use crate::ext_real::ExtReal;
use crate::matrix::{cross3, cross_product_norm, det, vec_norm, Mat};
use crate::tolerances::{COMMUTATION_GAP_THRESHOLD, RECOVERY_RATIO, TOL_BRACKET, TOL_LIN};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

// ---------------------------------------------------------------------
// membrane density

/// Budget for the per-`xi` minimization over the third gradient column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverCfg {
    /// Log-grid magnitudes applied to the normal-direction seed.
    pub s_grid: Vec<f64>,
    /// Nelder-Mead evaluation budget per seed.
    pub nm_evals: usize,
    /// How many of the best raw seeds get a local refinement.
    pub multistart: usize,
    /// Search box half-width factor: `R = factor * (1 + |xi|)`.
    pub radius_factor: f64,
}

impl Default for SolverCfg {
    fn default() -> SolverCfg {
        SolverCfg {
            s_grid: vec![0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            nm_evals: 160,
            multistart: 3,
            radius_factor: 12.0,
        }
    }
}

impl SolverCfg {
    /// Reduced budget for nested evaluations (tables, brackets).
    pub fn fast() -> SolverCfg {
        SolverCfg {
            s_grid: vec![0.1, 0.3, 1.0, 3.0],
            nm_evals: 60,
            multistart: 1,
            ..SolverCfg::default()
        }
    }
}

/// Where a plane (3x2) density came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Provenance {
    Native,
    ReducedFrom { density: String, cfg: SolverCfg },
}

/// A 3x2 density: either native or the membrane reduction of a 3x3 one.
#[derive(Clone)]
pub struct PlaneDensity {
    pub density: Density,
    pub provenance: Provenance,
}

impl PlaneDensity {
    pub fn native(density: Density) -> Result<PlaneDensity> {
        if (density.m, density.n) != (3, 2) {
            return Err(EnvKitError::Dimension("plane densities are 3x2".into()));
        }
        Ok(PlaneDensity { density, provenance: Provenance::Native })
    }

    pub fn eval(&self, xi: &Mat) -> ExtReal {
        self.density.eval(xi)
    }
}

impl EnergyFn for PlaneDensity {
    fn dims(&self) -> (usize, usize) {
        (3, 2)
    }
    fn eval(&self, f: &Mat) -> ExtReal {
        self.density.eval(f)
    }
}

fn append_column(xi: &Mat, zeta: &[f64]) -> Mat {
    let mut data = Vec::with_capacity(9);
    for i in 0..3 {
        data.push(xi.get(i, 0));
        data.push(xi.get(i, 1));
        data.push(zeta[i]);
    }
    Mat::new(3, 3, data).expect("finite entries")
}

/// One membrane-reduction query: minimize `zeta -> W(xi|zeta)`.
fn reduce_at(w: &Density, cfg: &SolverCfg, xi: &Mat) -> ExtReal {
    if w.class == ConstraintClass::StrongDet {
        // the constraint branch is exact: W_0(xi) = +inf iff the columns
        // of xi are linearly dependent
        if cross_product_norm(xi).expect("3x2") == 0.0 {
            return ExtReal::INFINITY;
        }
    }
    let objective = |zeta: &[f64]| w.eval(&append_column(xi, zeta)).value();

    // seeds: zero, the feasible director Phi(xi) = (xi1 ^ xi2)/|xi1 ^ xi2|^2,
    // and magnitudes of the normal direction s * (xi1 ^ xi2)
    let cp = cross3(&xi.column(0), &xi.column(1));
    let cp_norm = vec_norm(&cp);
    let mut seeds: Vec<Vec<f64>> = vec![vec![0.0; 3]];
    if cp_norm > 0.0 {
        seeds.push(cp.iter().map(|c| c / (cp_norm * cp_norm)).collect());
        for &s in &cfg.s_grid {
            seeds.push(cp.iter().map(|c| s * c).collect());
        }
    } else {
        // no normal direction available; probe the coordinate axes
        for e in 0..3 {
            for &s in &cfg.s_grid {
                let mut z = vec![0.0; 3];
                z[e] = s;
                seeds.push(z);
                let mut z = vec![0.0; 3];
                z[e] = -s;
                seeds.push(z);
            }
        }
    }

    let mut scored: Vec<(f64, Vec<f64>)> =
        seeds.into_iter().map(|z| (objective(&z), z)).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN energies"));
    let mut best = scored[0].0;

    let r = cfg.radius_factor * (1.0 + xi.norm());
    let lo = [-r, -r, -r];
    let hi = [r, r, r];
    for (val, seed) in scored.into_iter().take(cfg.multistart) {
        if val.is_infinite() && best.is_finite() {
            break;
        }
        let scale = 0.25 * (1.0 + vec_norm(&seed));
        let (_, v) = crate::opt::nelder_mead(objective, &seed, &lo, &hi, scale, cfg.nm_evals);
        if v < best {
            best = v;
        }
    }
    if best.is_infinite() {
        log::debug!("reduce_density: no feasible zeta found at {xi:?}");
        return ExtReal::INFINITY;
    }
    ExtReal::new(best.max(0.0))
}

/// Membrane density of a 3x3 density: `W_0(xi) = inf_zeta W(xi|zeta)`,
/// as a deterministic upper estimate (multistart local search over
/// `zeta`, cached per `xi`). The `+inf` branch for strong determinant
/// constraints is exact.
pub fn reduce_density(w: &Density, cfg: &SolverCfg) -> Result<PlaneDensity> {
    if (w.m, w.n) != (3, 3) {
        return Err(EnvKitError::Dimension("reduction needs a 3x3 density".into()));
    }
    let class = match w.class {
        ConstraintClass::StrongDet => ConstraintClass::CrossProduct,
        _ => ConstraintClass::Finite,
    };
    let base = w.clone();
    let cfg_owned = cfg.clone();
    let cache: Arc<Mutex<HashMap<u64, ExtReal>>> = Arc::new(Mutex::new(HashMap::new()));
    let name = format!("{}_0", w.name);
    let density = Density::from_fn(&name, 3, 2, w.p, class, move |xi: &Mat| {
        let key = xi.bits_key();
        if let Some(&v) = cache.lock().expect("cache lock").get(&key) {
            return v;
        }
        let v = reduce_at(&base, &cfg_owned, xi);
        let mut cache = cache.lock().expect("cache lock");
        // mostly-distinct query streams (envelope sweeps) would otherwise
        // grow the cache without bound
        if cache.len() < 1 << 20 {
            cache.insert(key, v);
        }
        v
    })
    .with_constants(w.constants.clone());
    Ok(PlaneDensity {
        density,
        provenance: Provenance::ReducedFrom { density: w.name.clone(), cfg: cfg.clone() },
    })
}

// ---------------------------------------------------------------------
// Q W_0 bracketing

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BracketCfg {
    pub opt: OptCfg,
    pub iters: usize,
    /// Per-entry radius and node count of the convex reference box.
    pub convex_radius: Option<f64>,
    pub convex_count: usize,
}

impl Default for BracketCfg {
    fn default() -> BracketCfg {
        // one iteration: plane densities have entry dimension 6, where
        // deeper iterates fall back to nested continuum steps whose cost
        // multiplies per level
        BracketCfg { opt: OptCfg::fast(), iters: 1, convex_radius: None, convex_count: 7 }
    }
}

#[derive(Debug, Serialize)]
pub struct Bracket {
    pub xi: Mat,
    /// Convex-reference value: a box-relative lower reference.
    pub lower: f64,
    /// Rank-one envelope iterate: an upper estimate of `Q W_0`.
    pub upper: ExtReal,
    pub gap: ExtReal,
}

/// Brackets `Q W_0(xi)` between the convex lower reference and the
/// rank-one upper estimate (`Q W <= R W`).
pub fn qw0_bracket(w0: &PlaneDensity, xi: &Mat, cfg: &BracketCfg) -> Result<Bracket> {
    if xi.dims() != (3, 2) {
        return Err(EnvKitError::Dimension("bracket point must be 3x2".into()));
    }
    let upper = rank_one_envelope(&w0.density, xi, cfg.iters, &cfg.opt)?.value;
    let radius = cfg.convex_radius.unwrap_or(1.5 * (1.0 + xi.norm()));
    let grid = GridCfg::symmetric(radius, cfg.convex_count);
    let reference = convex_envelope_reference(&w0.density, &grid)?;
    let lower = reference.eval(xi).value().min(upper.value());
    if let Some(u) = upper.finite() {
        if u < lower - TOL_BRACKET * (1.0 + lower.abs()) {
            return Err(EnvKitError::Certificate(format!(
                "bracket inverted at {xi:?}: upper {u} < lower {lower}"
            )));
        }
    }
    let gap = if upper.is_finite() {
        ExtReal::new((upper.value() - lower).max(0.0))
    } else {
        ExtReal::INFINITY
    };
    Ok(Bracket { xi: xi.clone(), lower, upper, gap })
}

// ---------------------------------------------------------------------
// commutation diagnostic

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommutationCfg {
    /// Cell mesh for the outer (2-D) estimates.
    pub outer_mesh: MeshCfg,
    /// Cell mesh for relaxing the 3-D density inside path A.
    pub inner_mesh: MeshCfg,
    pub opt: OptCfg,
    pub reduce: SolverCfg,
    pub threshold: f64,
}

impl Default for CommutationCfg {
    fn default() -> CommutationCfg {
        // both paths nest three estimators, so each one runs on a
        // minimal budget; the diagnostic compares like against like
        CommutationCfg {
            outer_mesh: MeshCfg { subdivisions: vec![2] },
            inner_mesh: MeshCfg { subdivisions: vec![2] },
            opt: OptCfg {
                directions_dim2: 4,
                directions_dim3: 4,
                t_grid: 3,
                s_grid: 3,
                refine_evals: 8,
                multistart: 1,
                ..OptCfg::fast()
            },
            reduce: SolverCfg {
                s_grid: vec![1.0],
                nm_evals: 16,
                multistart: 1,
                ..SolverCfg::fast()
            },
            threshold: COMMUTATION_GAP_THRESHOLD,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CommutationSample {
    pub xi: Mat,
    /// `Z_inf` estimate of the reduction of the relaxed 3-D density.
    pub path_a: ExtReal,
    /// `Z_inf` estimate of the reduction of the raw 3-D density.
    pub path_b: ExtReal,
    pub gap: f64,
    pub flagged: bool,
}

#[derive(Debug, Serialize)]
pub struct CommutationReport {
    pub density: String,
    pub threshold: f64,
    pub samples: Vec<CommutationSample>,
    pub flagged_count: usize,
}

/// Numerical check of `Z_inf [Z_inf W]_0 = Z_inf W_0`. Both sides are
/// upper estimates with independent slack, so this is a diagnostic, not
/// a certificate; samples whose relative gap exceeds the threshold are
/// flagged.
pub fn commutation_check(
    w: &Density,
    xi_samples: &[Mat],
    cfg: &CommutationCfg,
) -> Result<CommutationReport> {
    if (w.m, w.n) != (3, 3) {
        return Err(EnvKitError::Dimension("commutation check needs a 3x3 density".into()));
    }
    if matches!(w.class, ConstraintClass::StrongDet | ConstraintClass::CrossProduct) {
        return Err(EnvKitError::Precondition(
            "commutation diagnostic applies to finite or weak-constraint densities".into(),
        ));
    }
    let inner = w.clone();
    let inner_mesh = cfg.inner_mesh.clone();
    let inner_opt = cfg.opt.clone();
    let relaxed = Density::from_fn(
        &format!("zinf_{}", w.name),
        3,
        3,
        w.p,
        w.class,
        move |f: &Mat| {
            z_envelope_estimate(&inner, f, &inner_mesh, &inner_opt).expect("3-D cell estimate")
        },
    );
    let reduced_relaxed = reduce_density(&relaxed, &cfg.reduce)?;
    let reduced_raw = reduce_density(w, &cfg.reduce)?;

    let samples: Vec<CommutationSample> = xi_samples
        .par_iter()
        .map(|xi| {
            let a = z_envelope_estimate(&reduced_relaxed.density, xi, &cfg.outer_mesh, &cfg.opt)?;
            let b = z_envelope_estimate(&reduced_raw.density, xi, &cfg.outer_mesh, &cfg.opt)?;
            let gap = match (a.finite(), b.finite()) {
                (Some(x), Some(y)) => (x - y).abs() / (1.0 + x.min(y)),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            };
            Ok(CommutationSample { xi: xi.clone(), path_a: a, path_b: b, gap, flagged: gap > cfg.threshold })
        })
        .collect::<Result<_>>()?;
    let flagged_count = samples.iter().filter(|s| s.flagged).count();
    Ok(CommutationReport {
        density: w.name.clone(),
        threshold: cfg.threshold,
        samples,
        flagged_count,
    })
}

// ---------------------------------------------------------------------
// thin films

/// Axis-aligned rectangle in the plane.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 - TOL_LIN && x <= self.x1 + TOL_LIN && y >= self.y0 - TOL_LIN && y <= self.y1 + TOL_LIN
    }
}

/// One affine piece of the membrane map: `psi(x) = offset + xi * (x - corner)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiPiece {
    pub rect: Rect,
    /// 3x2 gradient of the piece.
    pub gradient: Mat,
    pub offset: [f64; 3],
}

/// Director field `phi_k`: constant, or bilinear in the plane variables
/// (`c00 + c10 x + c01 y + c11 x y` per component).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Director {
    Constant([f64; 3]),
    Bilinear { c00: [f64; 3], c10: [f64; 3], c01: [f64; 3], c11: [f64; 3] },
}

impl Director {
    pub fn value(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Director::Constant(c) => *c,
            Director::Bilinear { c00, c10, c01, c11 } => {
                std::array::from_fn(|i| c00[i] + c10[i] * x + c01[i] * y + c11[i] * x * y)
            }
        }
    }

    /// Plane gradient (3x2) of the director at `(x, y)`.
    pub fn gradient(&self, x: f64, y: f64) -> Mat {
        match self {
            Director::Constant(_) => Mat::zeros(3, 2),
            Director::Bilinear { c10, c01, c11, .. } => {
                let mut g = Mat::zeros(3, 2);
                for i in 0..3 {
                    g.set(i, 0, c10[i] + c11[i] * y);
                    g.set(i, 1, c01[i] + c11[i] * x);
                }
                g
            }
        }
    }
}

/// Thin-film evaluation job: midsurface, thickness ladder, recovery
/// deformation `phi(x, x3) = psi(x) + x3 phi_k(x)`, and quadrature.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThinFilmSpec {
    pub sigma: Rect,
    pub eps_list: Vec<f64>,
    pub psi: Vec<PsiPiece>,
    pub director: Director,
    /// Tensor Gauss order per cell per axis (and for the thickness
    /// variable on `(-1/2, 1/2)`).
    pub quad_order: usize,
}

impl ThinFilmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.x1 <= self.sigma.x0 || self.sigma.y1 <= self.sigma.y0 {
            return Err(EnvKitError::Config("midsurface rectangle is empty".into()));
        }
        if self.eps_list.is_empty()
            || self.eps_list.iter().any(|&e| e <= 0.0)
            || self.eps_list.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(EnvKitError::Config(
                "eps_list must be strictly decreasing and positive".into(),
            ));
        }
        if self.psi.is_empty() {
            return Err(EnvKitError::Config("membrane map has no pieces".into()));
        }
        let mut covered = 0.0;
        for piece in &self.psi {
            if piece.gradient.dims() != (3, 2) {
                return Err(EnvKitError::Dimension("psi gradients must be 3x2".into()));
            }
            if piece.rect.area() <= 0.0
                || !self.sigma.contains(piece.rect.x0, piece.rect.y0)
                || !self.sigma.contains(piece.rect.x1, piece.rect.y1)
            {
                return Err(EnvKitError::Config("psi piece outside the midsurface".into()));
            }
            covered += piece.rect.area();
        }
        if (covered - self.sigma.area()).abs() > 1e-9 * self.sigma.area() {
            return Err(EnvKitError::Config(format!(
                "psi pieces cover area {covered}, midsurface has {}",
                self.sigma.area()
            )));
        }
        gauss_rule(self.quad_order)?;
        Ok(())
    }

    fn piece_at(&self, x: f64, y: f64) -> Option<&PsiPiece> {
        self.psi.iter().find(|p| p.rect.contains(x, y))
    }

    /// Value of the membrane map at a plane point.
    pub fn psi_value(&self, x: f64, y: f64) -> Result<[f64; 3]> {
        let piece = self
            .piece_at(x, y)
            .ok_or_else(|| EnvKitError::Config(format!("({x}, {y}) outside the partition")))?;
        let (dx, dy) = (x - piece.rect.x0, y - piece.rect.y0);
        Ok(std::array::from_fn(|i| {
            piece.offset[i] + piece.gradient.get(i, 0) * dx + piece.gradient.get(i, 1) * dy
        }))
    }

    /// Recovery deformation at `(x, y, x3)` with `x3` the physical
    /// thickness coordinate.
    pub fn recovery_value(&self, x: f64, y: f64, x3: f64) -> Result<[f64; 3]> {
        let psi = self.psi_value(x, y)?;
        let dir = self.director.value(x, y);
        Ok(std::array::from_fn(|i| psi[i] + x3 * dir[i]))
    }
}

/// Gauss-Legendre nodes and weights on `(-1, 1)`.
fn gauss_rule(order: usize) -> Result<Vec<(f64, f64)>> {
    let rule: &[(f64, f64)] = match order {
        1 => &[(0.0, 2.0)],
        2 => {
            const A: f64 = 0.577_350_269_189_625_8;
            &[(-A, 1.0), (A, 1.0)]
        }
        3 => {
            const A: f64 = 0.774_596_669_241_483_4;
            &[(-A, 5.0 / 9.0), (0.0, 8.0 / 9.0), (A, 5.0 / 9.0)]
        }
        4 => {
            const A: f64 = 0.339_981_043_584_856_3;
            const B: f64 = 0.861_136_311_594_052_6;
            const WA: f64 = 0.652_145_154_862_546_1;
            const WB: f64 = 0.347_854_845_137_453_9;
            &[(-B, WB), (-A, WA), (A, WA), (B, WB)]
        }
        5 => {
            const A: f64 = 0.538_469_310_105_683_1;
            const B: f64 = 0.906_179_845_938_664;
            const WA: f64 = 0.478_628_670_499_366_5;
            const WB: f64 = 0.236_926_885_056_189_08;
            &[(-B, WB), (-A, WA), (0.0, 128.0 / 225.0), (A, WA), (B, WB)]
        }
        _ => {
            return Err(EnvKitError::Config(format!(
                "Gauss order {order} unsupported (1..=5)"
            )))
        }
    };
    Ok(rule.to_vec())
}

/// Plane quadrature points `(x, y, weight)` over the partition.
fn plane_quadrature(spec: &ThinFilmSpec) -> Result<Vec<(f64, f64, f64)>> {
    let rule = gauss_rule(spec.quad_order)?;
    let mut pts = Vec::new();
    for piece in &spec.psi {
        let hx = 0.5 * (piece.rect.x1 - piece.rect.x0);
        let hy = 0.5 * (piece.rect.y1 - piece.rect.y0);
        let cx = 0.5 * (piece.rect.x1 + piece.rect.x0);
        let cy = 0.5 * (piece.rect.y1 + piece.rect.y0);
        for &(nx, wx) in &rule {
            for &(ny, wy) in &rule {
                pts.push((cx + hx * nx, cy + hy * ny, wx * wy * hx * hy));
            }
        }
    }
    Ok(pts)
}

fn film_gradient(spec: &ThinFilmSpec, x: f64, y: f64, scaled_x3: f64, eps: f64) -> Result<Mat> {
    let piece = spec
        .piece_at(x, y)
        .ok_or_else(|| EnvKitError::Config(format!("({x}, {y}) outside the partition")))?;
    let dg = spec.director.gradient(x, y);
    let dir = spec.director.value(x, y);
    let mut g = Mat::zeros(3, 3);
    for i in 0..3 {
        for j in 0..2 {
            g.set(i, j, piece.gradient.get(i, j) + eps * scaled_x3 * dg.get(i, j));
        }
        g.set(i, 2, dir[i]);
    }
    Ok(g)
}

/// Rescaled thin-film energy of the recovery deformation:
/// `(1/eps) int_{Sigma_eps} W(grad phi)`, evaluated by the exact change
/// of variables to `Sigma x (-1/2, 1/2)` and tensor Gauss quadrature.
/// Any `+inf` quadrature value makes the integral `+inf`.
pub fn film_energy(w: &Density, spec: &ThinFilmSpec, eps: f64) -> Result<ExtReal> {
    if (w.m, w.n) != (3, 3) {
        return Err(EnvKitError::Dimension("film energies need a 3x3 density".into()));
    }
    spec.validate()?;
    if !spec.eps_list.iter().any(|&e| (e - eps).abs() <= 1e-12 * e) {
        return Err(EnvKitError::Parameter(format!("eps = {eps} is not in eps_list")));
    }
    let rule = gauss_rule(spec.quad_order)?;
    let plane = plane_quadrature(spec)?;
    let total = plane
        .par_iter()
        .map(|&(x, y, wxy)| -> Result<ExtReal> {
            let mut acc = ExtReal::ZERO;
            for &(n3, w3) in &rule {
                let g = film_gradient(spec, x, y, 0.5 * n3, eps)?;
                // thickness weight: nodes on (-1/2, 1/2) carry w3/2
                acc += w.eval(&g).scale(wxy * 0.5 * w3);
                if acc.is_infinite() {
                    return Ok(ExtReal::INFINITY);
                }
            }
            Ok(acc)
        })
        .try_reduce(|| ExtReal::ZERO, |a, b| Ok(a + b))?;
    Ok(total)
}

/// Thickness average `pi_eps(phi)(x) = (1/eps) int phi(x, x3) dx3` of a
/// recovery-family deformation: the odd term integrates to zero, so the
/// result is `psi(x)` exactly.
pub fn pi_average(spec: &ThinFilmSpec, x: f64, y: f64) -> Result<[f64; 3]> {
    spec.psi_value(x, y)
}

/// Quadrature cross-check of [`pi_average`], integrating the recovery
/// deformation through the thickness with the spec's Gauss rule.
pub fn pi_average_quadrature(spec: &ThinFilmSpec, eps: f64, x: f64, y: f64) -> Result<[f64; 3]> {
    let rule = gauss_rule(spec.quad_order)?;
    let mut acc = [0.0; 3];
    for &(n3, w3) in &rule {
        let v = spec.recovery_value(x, y, 0.5 * eps * n3)?;
        for i in 0..3 {
            // (1/eps) * dx3 with x3 = eps * u / 2, u in (-1, 1): weight w3/2
            acc[i] += 0.5 * w3 * v[i];
        }
    }
    Ok(acc)
}

#[derive(Debug, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub energy: ExtReal,
    pub target: f64,
    pub error: f64,
    /// `e(eps_i) / e(eps_{i-1})` for successive list entries.
    pub ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ConvergenceReport {
    pub density: String,
    pub target: f64,
    pub det_floor: f64,
    pub rows: Vec<ConvergenceRow>,
    pub monotone: bool,
    pub ratios_ok: bool,
    pub passed: bool,
}

/// Evaluates the recovery sequence `phi_eps = psi + x3 phi_k` along the
/// thickness ladder against the membrane target
/// `int_Sigma W(grad psi | phi_k)`. Requires the director to satisfy the
/// determinant floor `det(grad psi | phi_k) >= 1/(2j)` (default `j = 1`)
/// at every plane quadrature point.
pub fn recovery_convergence(w: &Density, spec: &ThinFilmSpec) -> Result<ConvergenceReport> {
    if (w.m, w.n) != (3, 3) {
        return Err(EnvKitError::Dimension("film energies need a 3x3 density".into()));
    }
    spec.validate()?;
    let det_floor = 0.5; // j = 1
    let plane = plane_quadrature(spec)?;
    let mut target = 0.0;
    for &(x, y, wt) in &plane {
        let g = film_gradient(spec, x, y, 0.0, 0.0)?;
        let d = det(&g)?;
        if d < det_floor - TOL_LIN {
            return Err(EnvKitError::Precondition(format!(
                "det(grad psi | director) = {d} < {det_floor} at ({x}, {y})"
            )));
        }
        let v = w.eval(&g);
        let Some(v) = v.finite() else {
            return Err(EnvKitError::Precondition(format!(
                "membrane target is infinite at ({x}, {y})"
            )));
        };
        target += wt * v;
    }

    let zero_tol = 1e-12 * (1.0 + target.abs());
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &eps in &spec.eps_list {
        let energy = film_energy(w, spec, eps)?;
        let error = match energy.finite() {
            Some(e) => (e - target).abs(),
            None => f64::INFINITY,
        };
        let ratio = rows.last().map(|prev: &ConvergenceRow| {
            if prev.error <= zero_tol {
                0.0
            } else {
                error / prev.error
            }
        });
        rows.push(ConvergenceRow { eps, energy, target, error, ratio });
    }
    let monotone = rows.windows(2).all(|w| w[1].error <= w[0].error + zero_tol);
    let tail = rows.len().saturating_sub(3);
    let ratios_ok = rows[tail.max(1)..].iter().all(|r| {
        r.error <= zero_tol || r.ratio.is_none_or(|q| q <= RECOVERY_RATIO)
    });
    let passed = monotone && ratios_ok;
    Ok(ConvergenceReport {
        density: w.name.clone(),
        target,
        det_floor,
        rows,
        monotone,
        ratios_ok,
        passed,
    })
}

/// Default thickness ladder.
pub fn default_eps_list() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025, 0.0125]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{make_density, DensitySpec};
    use crate::opt::golden_section;
    use crate::sampling::SampleSpec;

    fn orthonormal_xi() -> Mat {
        Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap()
    }

    #[test]
    fn quadratic_reduces_to_plane_quadratic() {
        let w = make_density(&DensitySpec::simple("quadratic", 3, 3, 2.0)).unwrap();
        let w0 = reduce_density(&w, &SolverCfg::default()).unwrap();
        for xi in SampleSpec::defaults(3, 2).with_budget(100, 30).samples() {
            let got = w0.eval(&xi).value();
            let want = xi.norm().powi(2);
            assert!((got - want).abs() <= 1e-8 * (1.0 + want), "{got} vs {want}");
        }
    }

    #[test]
    fn det_barrier_reduction_matches_one_dim_oracle() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        let w0 = reduce_density(&w, &SolverCfg::default()).unwrap();
        let xi = orthonormal_xi();
        // tangential components of zeta only add |zeta|^2 at fixed det,
        // so the optimum is s * normal with profile s^2 + 1/s
        let (s, oracle_extra) = golden_section(|s| s * s + 1.0 / s, 1e-3, 10.0, 80);
        assert!((s - 2f64.powf(-1.0 / 3.0)).abs() < 1e-6);
        let want = xi.norm().powi(2) + oracle_extra;
        let want_closed = xi.norm().powi(2) + 2f64.powf(-2.0 / 3.0) + 2f64.powf(1.0 / 3.0);
        assert!((want - want_closed).abs() < 1e-9);
        let got = w0.eval(&xi).value();
        assert!(
            (got - want).abs() <= 1e-4 * want,
            "reduced value {got}, oracle {want}"
        );
    }

    #[test]
    fn strong_dc_branch_is_exact_on_rank_deficient_xi() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        let w0 = reduce_density(&w, &SolverCfg::fast()).unwrap();
        let xi = Mat::from_rows(&[vec![1.0, 2.0], vec![0.5, 1.0], vec![-3.0, -6.0]]).unwrap();
        assert!(w0.eval(&xi).is_infinite());
        assert!(w0.eval(&orthonormal_xi()).is_finite());
    }

    #[test]
    fn reduction_requires_three_by_three() {
        let w = make_density(&DensitySpec::simple("quadratic", 2, 2, 2.0)).unwrap();
        assert!(matches!(
            reduce_density(&w, &SolverCfg::fast()),
            Err(EnvKitError::Dimension(_))
        ));
    }

    #[test]
    fn bracket_collapses_on_convex_density() {
        let w = make_density(&DensitySpec::simple("quadratic", 3, 3, 2.0)).unwrap();
        let w0 = reduce_density(&w, &SolverCfg::fast()).unwrap();
        let xi = orthonormal_xi().scale(0.5);
        let b = qw0_bracket(&w0, &xi, &BracketCfg::default()).unwrap();
        let upper = b.upper.value();
        assert!(
            (upper - b.lower).abs() <= 1e-4 * (1.0 + upper),
            "bracket [{}, {}] did not collapse",
            b.lower,
            upper
        );
    }

    #[test]
    fn bracket_on_reduced_det_barrier_is_finite() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        let w0 = reduce_density(&w, &SolverCfg::fast()).unwrap();
        let b = qw0_bracket(&w0, &orthonormal_xi(), &BracketCfg::default()).unwrap();
        assert!(b.upper.is_finite());
        assert!(b.lower <= b.upper.value() + 1e-9);
    }

    fn affine_spec(xi: Mat, director: Director) -> ThinFilmSpec {
        ThinFilmSpec {
            sigma: Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 },
            eps_list: default_eps_list(),
            psi: vec![PsiPiece {
                rect: Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 },
                gradient: xi,
                offset: [0.0; 3],
            }],
            director,
            quad_order: 4,
        }
    }

    #[test]
    fn constant_director_energy_is_eps_independent() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        let zeta = [0.0, 0.0, 1.5];
        let spec = affine_spec(orthonormal_xi(), Director::Constant(zeta));
        let g = film_gradient(&spec, 0.5, 0.5, 0.0, 0.0).unwrap();
        let want = w.eval(&g).value() * spec.sigma.area();
        for &eps in &spec.eps_list {
            let got = film_energy(&w, &spec, eps).unwrap().value();
            assert!((got - want).abs() <= 1e-12 * (1.0 + want), "{got} vs {want} at {eps}");
        }
    }

    #[test]
    fn infeasible_quadrature_point_gives_infinite_energy() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        // det(xi|zeta) < 0
        let spec = affine_spec(orthonormal_xi(), Director::Constant([0.0, 0.0, -1.0]));
        assert!(film_energy(&w, &spec, 0.2).unwrap().is_infinite());
    }

    #[test]
    fn pi_average_recovers_psi() {
        let spec = affine_spec(
            Mat::from_rows(&[vec![1.0, 0.2], vec![-0.3, 1.0], vec![0.1, 0.4]]).unwrap(),
            Director::Bilinear {
                c00: [0.0, 0.0, 1.2],
                c10: [0.3, 0.0, 0.0],
                c01: [0.0, -0.2, 0.0],
                c11: [0.1, 0.1, 0.0],
            },
        );
        for &(x, y) in &[(0.25, 0.75), (0.5, 0.5), (0.9, 0.1)] {
            let exact = pi_average(&spec, x, y).unwrap();
            let psi = spec.psi_value(x, y).unwrap();
            let quad = pi_average_quadrature(&spec, 0.1, x, y).unwrap();
            for i in 0..3 {
                assert!((exact[i] - psi[i]).abs() == 0.0);
                assert!((quad[i] - psi[i]).abs() <= 1e-12, "component {i}: {} vs {}", quad[i], psi[i]);
            }
        }
    }

    #[test]
    fn recovery_convergence_on_det_barrier() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        let spec = affine_spec(
            orthonormal_xi(),
            Director::Bilinear {
                c00: [0.0, 0.0, 1.1],
                c10: [0.2, 0.0, 0.1],
                c01: [0.0, 0.2, 0.1],
                c11: [0.05, -0.05, 0.0],
            },
        );
        let report = recovery_convergence(&w, &spec).unwrap();
        assert!(report.passed, "rows: {:?}", report.rows);
        assert!(report.rows.iter().all(|r| r.error.is_finite()));
    }

    #[test]
    fn det_floor_violation_names_the_point() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        let spec = affine_spec(orthonormal_xi(), Director::Constant([0.0, 0.0, 0.25]));
        let err = recovery_convergence(&w, &spec).unwrap_err();
        match err {
            EnvKitError::Precondition(msg) => assert!(msg.contains("det"), "{msg}"),
            other => panic!("expected precondition error, got {other:?}"),
        }
    }

    #[test]
    fn commutation_gap_small_for_quadratic() {
        let w = make_density(&DensitySpec::simple("quadratic", 3, 3, 2.0)).unwrap();
        let xis: Vec<Mat> = SampleSpec::defaults(3, 2)
            .with_radius(1.5)
            .with_budget(6, 3)
            .samples();
        let report = commutation_check(&w, &xis, &CommutationCfg::default()).unwrap();
        assert_eq!(report.flagged_count, 0, "{:?}", report.samples);
        for s in &report.samples {
            assert!(s.gap <= 1e-4, "gap {} at {:?}", s.gap, s.xi);
        }
    }
}
