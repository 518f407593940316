//! One level of the lamination recursion: the best rank-one split of a
//! matrix against the current (already partially relaxed) energy.

use crate::density::EnergyFn;
use crate::ext_real::ExtReal;
use crate::matrix::{rank_one, Mat};
use crate::opt::{nelder_mead, sphere_design};
use serde::{Deserialize, Serialize};

/// Search budgets for the rank-one step and the envelope iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptCfg {
    /// Unit-sphere design size for the `a` direction, by dimension
    /// (index = dim; dims 2 and 3 matter).
    pub directions_dim2: usize,
    pub directions_dim3: usize,
    /// `|b|` is searched in `(0, b_max_factor * (1 + |F|)]`.
    pub b_max_factor: f64,
    /// Interior grid points for the split weight `t`.
    pub t_grid: usize,
    /// Geometric grid points for the magnitude `s = |b|`.
    pub s_grid: usize,
    /// Local-refinement evaluation budget (Nelder-Mead over `(t, s)`).
    pub refine_evals: usize,
    /// Number of top coarse candidates refined locally.
    pub multistart: usize,
    /// Memo-lattice resolution per matrix entry (odd; lattice is used
    /// only when the full entry space has dimension <= 4).
    pub lattice_points: usize,
    /// Largest `k- + k+` for lattice split pairs.
    pub lattice_pair_sum: usize,
    pub seed: u64,
}

impl Default for OptCfg {
    fn default() -> OptCfg {
        OptCfg {
            directions_dim2: 64,
            directions_dim3: 128,
            b_max_factor: 10.0,
            t_grid: 9,
            s_grid: 12,
            refine_evals: 160,
            multistart: 3,
            lattice_points: 17,
            lattice_pair_sum: 6,
            seed: 0,
        }
    }
}

impl OptCfg {
    /// Reduced budget for nested / batched evaluations.
    pub fn fast() -> OptCfg {
        OptCfg {
            directions_dim2: 16,
            directions_dim3: 32,
            t_grid: 5,
            s_grid: 6,
            refine_evals: 40,
            multistart: 1,
            lattice_points: 13,
            lattice_pair_sum: 5,
            ..OptCfg::default()
        }
    }

    pub fn directions_for(&self, dim: usize) -> usize {
        match dim {
            0 | 1 => 1,
            2 => self.directions_dim2,
            _ => self.directions_dim3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    /// A genuinely two-sided split improved on the base value.
    Interior,
    /// Degenerate: the infimum is attained at t = 0 (no split gains).
    BoundaryT0,
    /// Degenerate at t = 1.
    BoundaryT1,
    /// Base value and every evaluated split are +inf.
    AllInfinite,
}

/// Outcome of one rank-one step at a fixed matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankOneStepResult {
    pub value: ExtReal,
    pub t: f64,
    /// Unit vector in R^N.
    pub a: Vec<f64>,
    /// Vector in R^m; the split direction is `a (x) b`.
    pub b: Vec<f64>,
    pub status: StepStatus,
}

impl RankOneStepResult {
    /// Re-evaluates `(1-t) E(F - t a(x)b) + t E(F + (1-t) a(x)b)` at the
    /// stored optimizer.
    pub fn recompute(&self, energy: &dyn EnergyFn, f: &Mat) -> ExtReal {
        split_objective(&|x| energy.eval(x), f, &rank_one(&self.a, &self.b), self.t)
    }
}

pub(crate) fn split_objective(
    energy: &dyn Fn(&Mat) -> ExtReal,
    f: &Mat,
    dir: &Mat,
    t: f64,
) -> ExtReal {
    if t <= 0.0 {
        return energy(f);
    }
    if t >= 1.0 {
        return energy(f);
    }
    let minus = f.axpy(-t, dir);
    let plus = f.axpy(1.0 - t, dir);
    ExtReal::combine(t, energy(&minus), energy(&plus))
}

struct Candidate {
    value: ExtReal,
    s: f64,
    t: f64,
    dir_index: usize,
}

impl Candidate {
    /// Deterministic preference: better value, then smaller |b|, then
    /// smaller t, then lower direction index.
    fn better_than(&self, other: &Candidate) -> bool {
        let eps = 1e-12 * (1.0 + other.value.value().min(f64::MAX));
        if self.value.value() < other.value.value() - eps {
            return true;
        }
        if self.value.value() > other.value.value() + eps {
            return false;
        }
        (self.s, self.t, self.dir_index) < (other.s, other.t, other.dir_index)
    }
}

/// Best rank-one split of `f` against `energy`, searched over a
/// deterministic direction design with nested `t`/`|b|` grids and local
/// refinement. Never returns more than `energy(f)`.
pub fn continuum_step(
    energy: &dyn Fn(&Mat) -> ExtReal,
    m: usize,
    n: usize,
    f: &Mat,
    cfg: &OptCfg,
) -> RankOneStepResult {
    let base = energy(f);
    let a_dirs = sphere_design(n, cfg.directions_for(n));
    let b_dirs = sphere_design(m, cfg.directions_for(m));
    let b_max = cfg.b_max_factor * (1.0 + f.norm());
    let s_min = 0.02 * (1.0 + f.norm());
    let s_ratio = (b_max / s_min).powf(1.0 / (cfg.s_grid.max(2) as f64 - 1.0));

    let mut best: Option<Candidate> = None;
    let mut shortlist: Vec<Candidate> = Vec::new();
    let mut any_finite_split = false;

    let mut dir_index = 0usize;
    for a in &a_dirs {
        for b in &b_dirs {
            let dir = rank_one(a, b);
            let mut local_best: Option<Candidate> = None;
            let mut s = s_min;
            for _ in 0..cfg.s_grid {
                let scaled = dir.scale(s);
                for j in 1..=cfg.t_grid {
                    let t = j as f64 / (cfg.t_grid + 1) as f64;
                    let v = split_objective(energy, f, &scaled, t);
                    if v.is_finite() {
                        any_finite_split = true;
                    }
                    let cand = Candidate { value: v, s, t, dir_index };
                    if local_best.as_ref().is_none_or(|c| cand.better_than(c)) {
                        local_best = Some(cand);
                    }
                }
                s *= s_ratio;
            }
            if let Some(cand) = local_best {
                if cand.value < base {
                    if best.as_ref().is_none_or(|c| cand.better_than(c)) {
                        shortlist.push(Candidate { ..cand });
                        best = Some(cand);
                    }
                }
            }
            dir_index += 1;
        }
    }

    // Local refinement of the most promising coarse candidates over
    // (t, s) at fixed direction.
    shortlist.reverse(); // best-first
    shortlist.truncate(cfg.multistart);
    for cand in shortlist {
        let (a, b) = dir_pair(&a_dirs, &b_dirs, cand.dir_index);
        let dir = rank_one(a, b);
        let obj = |x: &[f64]| {
            let (t, s) = (x[0], x[1]);
            split_objective(energy, f, &dir.scale(s), t).value()
        };
        let (x, v) = nelder_mead(
            obj,
            &[cand.t, cand.s],
            &[1e-4, s_min * 0.5],
            &[1.0 - 1e-4, b_max],
            0.05,
            cfg.refine_evals,
        );
        if let Some(v) = ExtReal::try_new(v.max(0.0)) {
            let refined = Candidate { value: v, s: x[1], t: x[0], dir_index: cand.dir_index };
            if refined.value < base && best.as_ref().is_none_or(|c| refined.better_than(c)) {
                best = Some(refined);
            }
        }
    }

    match best {
        Some(c) if c.value < base => {
            let (a, b) = dir_pair(&a_dirs, &b_dirs, c.dir_index);
            RankOneStepResult {
                value: c.value,
                t: c.t,
                a: a.clone(),
                b: b.iter().map(|x| x * c.s).collect(),
                status: StepStatus::Interior,
            }
        }
        _ => {
            let status = if base.is_infinite() && !any_finite_split {
                StepStatus::AllInfinite
            } else {
                StepStatus::BoundaryT0
            };
            RankOneStepResult {
                value: base,
                t: 0.0,
                a: unit_e1(n),
                b: vec![0.0; m],
                status,
            }
        }
    }
}

fn dir_pair<'d>(
    a_dirs: &'d [Vec<f64>],
    b_dirs: &'d [Vec<f64>],
    index: usize,
) -> (&'d Vec<f64>, &'d Vec<f64>) {
    let nb = b_dirs.len();
    (&a_dirs[index / nb], &b_dirs[index % nb])
}

fn unit_e1(n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n];
    a[0] = 1.0;
    a
}

/// Public single-step entry point working directly on a density or any
/// other evaluable energy.
pub fn rank_one_step(current: &dyn EnergyFn, f: &Mat, cfg: &OptCfg) -> RankOneStepResult {
    let (m, n) = current.dims();
    continuum_step(&|x| current.eval(x), m, n, f, cfg)
}
