//! Parametric energy-density families and sampling-based condition checks.
//!
//! A density is a deterministic map `W : M^{m x N} -> [0, +inf]` with a
//! growth exponent `p > 1` and a constraint class describing where it is
//! infinite. Infinite branches are decided by exact sign tests on the
//! determinant or the cross-product norm, never by thresholding floats.

use crate::error::{EnvKitError, Result};
use crate::ext_real::ExtReal;
use crate::matrix::{cross_product_norm, det, Mat};
use crate::sampling::SampleSpec;
use crate::tolerances::FIT_MARGIN;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Where a density is allowed to be `+inf`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintClass {
    /// Finite everywhere.
    Finite,
    /// Infinite exactly on the band `-delta <= det F <= 0` (w-DC).
    WeakDet,
    /// Infinite exactly on `det F <= 0`, blowing up as `det -> 0+` (s-DC).
    StrongDet,
    /// Infinite exactly where the column cross product vanishes (*-CPC).
    CrossProduct,
}

/// Constants attached to a catalog family (construction constants for the
/// growth conditions, when known in closed form).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DensityConstants {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coercivity_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_c: Option<f64>,
}

/// Anything that can be evaluated like a density. The envelope machinery
/// is generic over this so it can recurse on its own intermediate stages.
pub trait EnergyFn: Send + Sync {
    fn dims(&self) -> (usize, usize);
    fn eval(&self, f: &Mat) -> ExtReal;
}

type EvalFn = Arc<dyn Fn(&Mat) -> ExtReal + Send + Sync>;

/// An immutable, shareable density.
#[derive(Clone)]
pub struct Density {
    pub name: String,
    pub m: usize,
    pub n: usize,
    /// Growth exponent, strictly greater than 1.
    pub p: f64,
    pub class: ConstraintClass,
    pub constants: DensityConstants,
    eval_fn: EvalFn,
}

impl Density {
    pub fn from_fn(
        name: impl Into<String>,
        m: usize,
        n: usize,
        p: f64,
        class: ConstraintClass,
        f: impl Fn(&Mat) -> ExtReal + Send + Sync + 'static,
    ) -> Density {
        Density {
            name: name.into(),
            m,
            n,
            p,
            class,
            constants: DensityConstants::default(),
            eval_fn: Arc::new(f),
        }
    }

    pub fn with_constants(mut self, constants: DensityConstants) -> Density {
        self.constants = constants;
        self
    }

    pub fn eval(&self, f: &Mat) -> ExtReal {
        debug_assert_eq!(f.dims(), (self.m, self.n), "density dims mismatch");
        (self.eval_fn)(f)
    }

    pub fn is_square(&self) -> bool {
        self.m == self.n
    }
}

impl EnergyFn for Density {
    fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }
    fn eval(&self, f: &Mat) -> ExtReal {
        Density::eval(self, f)
    }
}

impl std::fmt::Debug for Density {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Density")
            .field("name", &self.name)
            .field("dims", &(self.m, self.n))
            .field("p", &self.p)
            .field("class", &self.class)
            .finish()
    }
}

/// Free parameters of a catalog family; unused fields are ignored.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    /// First well of `double_well`.
    pub a: Option<Mat>,
    /// Second well of `double_well`.
    pub b: Option<Mat>,
    /// Polynomial weight of `det_barrier`.
    pub c1: Option<f64>,
    /// Barrier weight of `det_barrier`.
    pub c2: Option<f64>,
    /// Width of the infinite band of `weak_det_barrier`.
    pub delta: Option<f64>,
}

/// JSON-facing description of a density:
/// `{"family": ..., "m": ..., "N": ..., "p": ..., "params": {...}}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensitySpec {
    pub family: String,
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub params: FamilyParams,
}

impl DensitySpec {
    pub fn simple(family: &str, m: usize, n: usize, p: f64) -> DensitySpec {
        DensitySpec {
            family: family.into(),
            m,
            n,
            p: Some(p),
            params: FamilyParams::default(),
        }
    }
}

fn frob_pow(f: &Mat, p: f64) -> f64 {
    // via the squared norm so that p = 2 is exact (powf(x, 1) = x)
    let sumsq: f64 = f.entries().iter().map(|&x| x * x).sum();
    sumsq.powf(p / 2.0)
}

/// Builds a catalog density from its JSON-level spec.
pub fn make_density(spec: &DensitySpec) -> Result<Density> {
    let m = spec.m;
    let n = spec.n;
    if m == 0 || n == 0 || m > 4 || n > 4 {
        return Err(EnvKitError::Config(format!(
            "density dims {m}x{n} outside supported range"
        )));
    }
    let p = spec.p.unwrap_or(2.0);
    if !(p > 1.0) {
        return Err(EnvKitError::Config(format!("growth exponent p = {p} must exceed 1")));
    }
    match spec.family.as_str() {
        "quadratic" => {
            if spec.p.is_some_and(|q| q != 2.0) {
                return Err(EnvKitError::Config("quadratic has p = 2".into()));
            }
            Ok(Density::from_fn("quadratic", m, n, 2.0, ConstraintClass::Finite, |f| {
                ExtReal::new(frob_pow(f, 2.0))
            })
            .with_constants(DensityConstants {
                alpha: Some(1.0),
                beta: Some(1.0),
                coercivity_c: Some(1.0),
                growth_c: Some(1.0),
                ..Default::default()
            }))
        }
        "double_well" => {
            let a = spec.params.a.clone().ok_or_else(|| {
                EnvKitError::Config("double_well needs params.a".into())
            })?;
            let b = spec.params.b.clone().ok_or_else(|| {
                EnvKitError::Config("double_well needs params.b".into())
            })?;
            if a.dims() != (m, n) || b.dims() != (m, n) {
                return Err(EnvKitError::Config("double_well wells have wrong dims".into()));
            }
            Ok(Density::from_fn(
                "double_well",
                m,
                n,
                p,
                ConstraintClass::Finite,
                move |f| {
                    let d = f.sub(&a).norm().min(f.sub(&b).norm());
                    ExtReal::new(d.powf(p))
                },
            ))
        }
        "kohn_strang" => {
            if (m, n) != (2, 2) {
                return Err(EnvKitError::Config("kohn_strang is 2x2 only".into()));
            }
            Ok(Density::from_fn("kohn_strang", 2, 2, 2.0, ConstraintClass::Finite, |f| {
                if f.entries().iter().all(|&v| v == 0.0) {
                    ExtReal::ZERO
                } else {
                    ExtReal::new(1.0 + f.norm().powi(2))
                }
            }))
        }
        "det_barrier" => {
            if m != n {
                return Err(EnvKitError::Config("det_barrier needs a square domain".into()));
            }
            let c1 = spec.params.c1.unwrap_or(1.0);
            let c2 = spec.params.c2.unwrap_or(1.0);
            if c1 <= 0.0 || c2 <= 0.0 {
                return Err(EnvKitError::Config("det_barrier needs c1, c2 > 0".into()));
            }
            Ok(Density::from_fn(
                "det_barrier",
                m,
                n,
                p,
                ConstraintClass::StrongDet,
                move |f| {
                    let d = det(f).expect("square by construction");
                    if d > 0.0 {
                        ExtReal::new(c1 * frob_pow(f, p) + c2 / d)
                    } else {
                        ExtReal::INFINITY
                    }
                },
            )
            .with_constants(DensityConstants {
                alpha: Some(1.0),
                beta: Some(c1.max(c2).max(1.0) * 2.0),
                coercivity_c: Some(c1),
                ..Default::default()
            }))
        }
        "weak_det_barrier" => {
            if m != n {
                return Err(EnvKitError::Config(
                    "weak_det_barrier needs a square domain".into(),
                ));
            }
            let delta = spec.params.delta.unwrap_or(0.5);
            if delta <= 0.0 {
                return Err(EnvKitError::Config("weak_det_barrier needs delta > 0".into()));
            }
            Ok(Density::from_fn(
                "weak_det_barrier",
                m,
                n,
                p,
                ConstraintClass::WeakDet,
                move |f| {
                    let d = det(f).expect("square by construction");
                    if d > 0.0 {
                        ExtReal::new(frob_pow(f, p) + 1.0 / (d * d))
                    } else if d < -delta {
                        let shifted = d + delta;
                        ExtReal::new(frob_pow(f, p) + 1.0 / (shifted * shifted))
                    } else {
                        ExtReal::INFINITY
                    }
                },
            )
            .with_constants(DensityConstants {
                // |det| >= delta + 1 keeps both barrier terms <= 1.
                alpha: Some(delta + 1.0),
                beta: Some(2.0),
                coercivity_c: Some(1.0),
                ..Default::default()
            }))
        }
        "cross_barrier" => {
            if (m, n) != (3, 2) {
                return Err(EnvKitError::Config("cross_barrier is 3x2 only".into()));
            }
            Ok(Density::from_fn(
                "cross_barrier",
                3,
                2,
                p,
                ConstraintClass::CrossProduct,
                move |f| {
                    let v = cross_product_norm(f).expect("3x2 by construction");
                    if v > 0.0 {
                        ExtReal::new(frob_pow(f, p) + 1.0 / v)
                    } else {
                        ExtReal::INFINITY
                    }
                },
            )
            .with_constants(DensityConstants {
                alpha: Some(1.0),
                beta: Some(2.0),
                coercivity_c: Some(1.0),
                ..Default::default()
            }))
        }
        "zero" => {
            // Test-only: violates coercivity by construction.
            Ok(Density::from_fn("zero", m, n, p, ConstraintClass::Finite, |_| ExtReal::ZERO))
        }
        other => Err(EnvKitError::Config(format!("unknown density family {other:?}"))),
    }
}

/// One offending sample: the matrix, the density value there, and the
/// bound it should have satisfied.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub matrix: Mat,
    pub value: ExtReal,
    pub bound: f64,
}

/// Outcome of a sampling-based condition check. Empty `violations` means
/// "pass at the sampled resolution", no more.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_id: String,
    pub seed: u64,
    pub samples_checked: usize,
    pub violations: Vec<Violation>,
    pub constants: BTreeMap<String, f64>,
}

impl ConditionReport {
    fn new(condition_id: &str, seed: u64) -> ConditionReport {
        ConditionReport {
            condition_id: condition_id.into(),
            seed,
            samples_checked: 0,
            violations: Vec::new(),
            constants: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn require_dims(w: &Density, sampler: &SampleSpec) -> Result<()> {
    if (w.m, w.n) != (sampler.m, sampler.n) {
        return Err(EnvKitError::Dimension(format!(
            "sampler dims {}x{} do not match density {}x{}",
            sampler.m, sampler.n, w.m, w.n
        )));
    }
    Ok(())
}

/// Estimates the coercivity constant `C = inf W(F)/|F|^p` over the sample
/// region (skipping `+inf` values and tiny matrices) and flags samples
/// where a finite `W` gives a nonpositive ratio.
pub fn check_coercivity(w: &Density, sampler: &SampleSpec) -> Result<ConditionReport> {
    require_dims(w, sampler)?;
    let samples = sampler.samples();
    if samples.is_empty() {
        return Err(EnvKitError::Config("empty sample set".into()));
    }
    let mut report = ConditionReport::new("coercive", sampler.seed);
    let mut c_fit = f64::INFINITY;
    for f in &samples {
        report.samples_checked += 1;
        if f.norm() < 0.1 {
            continue;
        }
        let Some(v) = w.eval(f).finite() else { continue };
        let ratio = v / f.norm().powf(w.p);
        if ratio <= 0.0 {
            report.violations.push(Violation {
                matrix: f.clone(),
                value: ExtReal::new(v),
                bound: 0.0,
            });
        }
        c_fit = c_fit.min(ratio);
    }
    if c_fit.is_finite() {
        report.constants.insert("coercivity_C".into(), c_fit);
        report
            .constants
            .insert("coercivity_C_margin".into(), c_fit * (1.0 - FIT_MARGIN));
    }
    Ok(report)
}

/// Checks `|det F| >= alpha  =>  W(F) <= beta (1 + |F|^p)` on all samples
/// and fits the tightest `beta` that would pass.
pub fn check_condition_d(
    w: &Density,
    alpha: f64,
    beta: f64,
    sampler: &SampleSpec,
) -> Result<ConditionReport> {
    if !w.is_square() {
        return Err(EnvKitError::Dimension(
            "condition (D) needs a square density".into(),
        ));
    }
    require_dims(w, sampler)?;
    if alpha <= 0.0 || beta <= 0.0 {
        return Err(EnvKitError::Parameter("condition (D) needs alpha, beta > 0".into()));
    }
    let mut report = ConditionReport::new("D", sampler.seed);
    let mut beta_fit: f64 = 0.0;
    for f in sampler.samples() {
        report.samples_checked += 1;
        if det(&f)?.abs() < alpha {
            continue;
        }
        let v = w.eval(&f);
        let bound = beta * (1.0 + f.norm().powf(w.p));
        match v.finite() {
            Some(val) => {
                beta_fit = beta_fit.max(val / (1.0 + f.norm().powf(w.p)));
                if val > bound {
                    report.violations.push(Violation { matrix: f, value: v, bound });
                }
            }
            None => report.violations.push(Violation { matrix: f, value: v, bound }),
        }
    }
    report.constants.insert("alpha".into(), alpha);
    report.constants.insert("beta".into(), beta);
    report.constants.insert("beta_fit".into(), beta_fit);
    report
        .constants
        .insert("beta_fit_margin".into(), beta_fit * (1.0 + FIT_MARGIN));
    Ok(report)
}

/// Checks `|xi_1 ^ xi_2| >= alpha  =>  W0(xi) <= beta (1 + |xi|^p)` for a
/// 3x2 plane density.
pub fn check_condition_p(
    w0: &Density,
    alpha: f64,
    beta: f64,
    sampler: &SampleSpec,
) -> Result<ConditionReport> {
    if (w0.m, w0.n) != (3, 2) {
        return Err(EnvKitError::Dimension("condition (P) needs a 3x2 density".into()));
    }
    require_dims(w0, sampler)?;
    if alpha <= 0.0 {
        return Err(EnvKitError::Parameter("condition (P) needs alpha > 0".into()));
    }
    let mut report = ConditionReport::new("P", sampler.seed);
    let mut beta_fit: f64 = 0.0;
    for f in sampler.samples() {
        report.samples_checked += 1;
        if cross_product_norm(&f)? < alpha {
            continue;
        }
        let v = w0.eval(&f);
        let bound = beta * (1.0 + f.norm().powf(w0.p));
        match v.finite() {
            Some(val) => {
                beta_fit = beta_fit.max(val / (1.0 + f.norm().powf(w0.p)));
                if val > bound {
                    report.violations.push(Violation { matrix: f, value: v, bound });
                }
            }
            None => report.violations.push(Violation { matrix: f, value: v, bound }),
        }
    }
    report.constants.insert("alpha".into(), alpha);
    report.constants.insert("beta".into(), beta);
    report.constants.insert("beta_fit".into(), beta_fit);
    report
        .constants
        .insert("beta_fit_margin".into(), beta_fit * (1.0 + FIT_MARGIN));
    Ok(report)
}

const DELTA_LADDER: [f64; 4] = [1.0, 0.5, 0.1, 0.01];

/// Verifies the strong determinant constraint on samples:
/// `W(F) = +inf  <=>  det F <= 0`, and fits the ladder
/// `c_delta = sup {W/(1+|F|^p) : det F >= delta}` for a fixed set of deltas.
pub fn check_strong_dc(w: &Density, sampler: &SampleSpec) -> Result<ConditionReport> {
    if !w.is_square() {
        return Err(EnvKitError::Dimension("strong-DC check needs a square density".into()));
    }
    require_dims(w, sampler)?;
    let mut report = ConditionReport::new("D1", sampler.seed);
    let mut ladder = [0.0f64; DELTA_LADDER.len()];
    for f in sampler.samples() {
        report.samples_checked += 1;
        let d = det(&f)?;
        let v = w.eval(&f);
        let iff_holds = v.is_infinite() == (d <= 0.0);
        if !iff_holds {
            report.violations.push(Violation {
                matrix: f.clone(),
                value: v,
                bound: d,
            });
            continue;
        }
        if let Some(val) = v.finite() {
            let ratio = val / (1.0 + f.norm().powf(w.p));
            for (slot, &delta) in ladder.iter_mut().zip(&DELTA_LADDER) {
                if d >= delta {
                    *slot = slot.max(ratio);
                }
            }
        }
    }
    for (&delta, &c) in DELTA_LADDER.iter().zip(&ladder) {
        report.constants.insert(format!("c_delta_{delta}"), c);
    }
    Ok(report)
}

/// Fits `c = sup (estimate of Z_inf W)/(1+|F|^p)` over two nested radii
/// and reports whether the fit is stable (evidence of p-ampleness, not a
/// proof). `estimate` supplies the upper estimate of the envelope.
pub fn check_ampleness(
    w: &Density,
    estimate: impl Fn(&Mat) -> Result<ExtReal>,
    sampler: &SampleSpec,
) -> Result<ConditionReport> {
    require_dims(w, sampler)?;
    let mut report = ConditionReport::new("ample", sampler.seed);
    let mut fits = Vec::new();
    for scale in [1.0, 2.0] {
        let spec = sampler.clone().with_radius(sampler.radius * scale);
        let mut fit: f64 = 0.0;
        for f in spec.samples() {
            report.samples_checked += 1;
            let v = estimate(&f)?;
            if let Some(val) = v.finite() {
                fit = fit.max(val / (1.0 + f.norm().powf(w.p)));
            } else {
                report.violations.push(Violation {
                    matrix: f,
                    value: v,
                    bound: f64::INFINITY,
                });
            }
        }
        fits.push(fit);
    }
    let ratio = if fits[0] > 0.0 { fits[1] / fits[0] } else { 1.0 };
    report.constants.insert("c_fit_R".into(), fits[0]);
    report.constants.insert("c_fit_2R".into(), fits[1]);
    report.constants.insert("radius_ratio".into(), ratio);
    report
        .constants
        .insert("c_fit_margin".into(), fits[1] * (1.0 + FIT_MARGIN));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_sampler(m: usize, n: usize) -> SampleSpec {
        SampleSpec::defaults(m, n).with_budget(400, 30)
    }

    #[test]
    fn quadratic_at_identity() {
        let w = make_density(&DensitySpec::simple("quadratic", 2, 2, 2.0)).unwrap();
        assert_eq!(w.eval(&Mat::identity(2)).value(), 2.0);
    }

    #[test]
    fn det_barrier_infinite_on_nonpositive_det() {
        let w = make_density(&DensitySpec::simple("det_barrier", 2, 2, 2.0)).unwrap();
        assert!(w.eval(&Mat::diag(&[1.0, -1.0])).is_infinite());
        assert!(w.eval(&Mat::diag(&[1.0, 0.0])).is_infinite());
        let v = w.eval(&Mat::identity(2)).value();
        assert!((v - 3.0).abs() < 1e-12); // |I|^2 + 1/det = 2 + 1
    }

    #[test]
    fn kohn_strang_defining_cases() {
        let w = make_density(&DensitySpec::simple("kohn_strang", 2, 2, 2.0)).unwrap();
        assert_eq!(w.eval(&Mat::zeros(2, 2)).value(), 0.0);
        let f = Mat::diag(&[0.3, 0.0]);
        assert!((w.eval(&f).value() - 1.09).abs() < 1e-12);
    }

    #[test]
    fn unknown_family_is_config_error() {
        let err = make_density(&DensitySpec::simple("nope", 2, 2, 2.0)).unwrap_err();
        assert!(matches!(err, EnvKitError::Config(_)));
        let err = make_density(&DensitySpec::simple("double_well", 2, 2, 0.5)).unwrap_err();
        assert!(matches!(err, EnvKitError::Config(_)));
    }

    #[test]
    fn coercivity_quadratic_and_zero() {
        let w = make_density(&DensitySpec::simple("quadratic", 2, 2, 2.0)).unwrap();
        let r = check_coercivity(&w, &quick_sampler(2, 2)).unwrap();
        assert!(r.passed());
        assert!((r.constants["coercivity_C"] - 1.0).abs() < 1e-9);

        let z = make_density(&DensitySpec::simple("zero", 2, 2, 2.0)).unwrap();
        let r = check_coercivity(&z, &quick_sampler(2, 2)).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn coercivity_det_barrier_bounded_below() {
        let w = make_density(&DensitySpec::simple("det_barrier", 2, 2, 2.0)).unwrap();
        let r = check_coercivity(&w, &quick_sampler(2, 2)).unwrap();
        assert!(r.passed());
        assert!(r.constants["coercivity_C"] >= 1.0 - 1e-9);
    }

    #[test]
    fn condition_d_examples() {
        // det_barrier is one-sided (+inf for det <= 0), so two-sided (D)
        // must reject it; its constraint is covered by the strong-DC check.
        let w = make_density(&DensitySpec::simple("det_barrier", 2, 2, 2.0)).unwrap();
        let r = check_condition_d(&w, 1.0, 2.0, &quick_sampler(2, 2)).unwrap();
        assert!(!r.passed());
        let r = check_strong_dc(&w, &quick_sampler(2, 2)).unwrap();
        assert!(r.passed(), "violations: {:?}", r.violations.first());

        let wd = make_density(&DensitySpec::simple("weak_det_barrier", 2, 2, 2.0)).unwrap();
        let (a, b) = (wd.constants.alpha.unwrap(), wd.constants.beta.unwrap());
        let r = check_condition_d(&wd, a, b, &quick_sampler(2, 2)).unwrap();
        assert!(r.passed(), "violations: {:?}", r.violations.first());

        let q = make_density(&DensitySpec::simple("quadratic", 2, 2, 2.0)).unwrap();
        let r = check_condition_d(&q, 1.0, 0.1, &quick_sampler(2, 2)).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn condition_p_examples() {
        let w = make_density(&DensitySpec::simple("cross_barrier", 3, 2, 2.0)).unwrap();
        let r = check_condition_p(&w, 1.0, 2.0, &quick_sampler(3, 2)).unwrap();
        assert!(r.passed(), "violations: {:?}", r.violations.first());
        let r = check_condition_p(&w, 1.0, 1e-9, &quick_sampler(3, 2)).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn strong_dc_examples() {
        let w = make_density(&DensitySpec::simple("det_barrier", 3, 3, 2.0)).unwrap();
        let r = check_strong_dc(&w, &quick_sampler(3, 3)).unwrap();
        assert!(r.passed(), "violations: {:?}", r.violations.first());
        // c_delta ladder nondecreasing as delta shrinks
        let cs: Vec<f64> = DELTA_LADDER
            .iter()
            .map(|d| r.constants[&format!("c_delta_{d}")])
            .collect();
        assert!(cs.windows(2).all(|w| w[1] >= w[0] - 1e-12));

        let q = make_density(&DensitySpec::simple("quadratic", 3, 3, 2.0)).unwrap();
        assert!(!check_strong_dc(&q, &quick_sampler(3, 3)).unwrap().passed());

        let wd = make_density(&DensitySpec::simple("weak_det_barrier", 3, 3, 2.0)).unwrap();
        assert!(!check_strong_dc(&wd, &quick_sampler(3, 3)).unwrap().passed());
    }

    #[test]
    fn ampleness_quadratic_stable() {
        let w = make_density(&DensitySpec::simple("quadratic", 2, 2, 2.0)).unwrap();
        let w2 = w.clone();
        let r = check_ampleness(&w, |f| Ok(w2.eval(f)), &quick_sampler(2, 2)).unwrap();
        assert!(r.passed());
        assert!(r.constants["radius_ratio"] <= 1.25);
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = DensitySpec::simple("det_barrier", 3, 3, 2.0);
        let s = serde_json::to_string(&spec).unwrap();
        let back: DensitySpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back.family, "det_barrier");
        assert_eq!(back.n, 3);
    }
}
