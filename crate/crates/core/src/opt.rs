//! Derivative-free minimization helpers.
//!
//! All routines are deterministic: no RNG is used here, and the search
//! designs (sphere point sets, Halton nodes) depend only on their
//! parameters.

use std::f64::consts::PI;

const GOLDEN: f64 = 0.618_033_988_749_894_9; // (sqrt 5 - 1) / 2

/// Golden-section minimization of `f` on `[lo, hi]`.
/// Returns `(argmin, min)`. `f` may return `+inf` (as `f64::INFINITY`).
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    // Also consider the endpoints; with flat or infinite plateaus the
    // interior probes can miss a boundary minimum.
    let mut best = (0.5 * (a + b), f(0.5 * (a + b)));
    for (x, v) in [(x1, f1), (x2, f2), (lo, f(lo)), (hi, f(hi))] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Nelder-Mead simplex search clamped to a box `[lo_i, hi_i]^d`.
///
/// Points are projected onto the box before evaluation, so the objective
/// is only ever called inside it. Returns `(argmin, min)`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    lo: &[f64],
    hi: &[f64],
    scale: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let clamp = |x: &mut Vec<f64>| {
        for i in 0..d {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };

    let mut evals = 0usize;
    macro_rules! eval {
        ($x:expr) => {{
            clamp($x);
            evals += 1;
            f($x)
        }};
    }

    // Initial simplex: start plus axis perturbations.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut x0 = start.to_vec();
    let v0 = eval!(&mut x0);
    simplex.push((x0, v0));
    for i in 0..d {
        let mut x = start.to_vec();
        let h = scale * (hi[i] - lo[i]).max(1e-12);
        x[i] += if x[i] + h <= hi[i] { h } else { -h };
        let v = eval!(&mut x);
        simplex.push((x, v));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let (best_v, worst_v) = (simplex[0].1, simplex[d].1);
        if worst_v.is_finite() && (worst_v - best_v).abs() <= 1e-12 * (1.0 + best_v.abs()) {
            break;
        }
        // Centroid of all but the worst vertex.
        let mut c = vec![0.0; d];
        for (x, _) in simplex.iter().take(d) {
            for i in 0..d {
                c[i] += x[i] / d as f64;
            }
        }
        let worst = simplex[d].0.clone();
        let combine = |alpha: f64| -> Vec<f64> {
            (0..d).map(|i| c[i] + alpha * (c[i] - worst[i])).collect()
        };

        let mut xr = combine(1.0);
        let vr = eval!(&mut xr);
        if vr < simplex[0].1 {
            let mut xe = combine(2.0);
            let ve = eval!(&mut xe);
            simplex[d] = if ve < vr { (xe, ve) } else { (xr, vr) };
        } else if vr < simplex[d - 1].1 {
            simplex[d] = (xr, vr);
        } else {
            let mut xc = combine(if vr < simplex[d].1 { 0.5 } else { -0.5 });
            let vc = eval!(&mut xc);
            if vc < simplex[d].1.min(vr) {
                simplex[d] = (xc, vc);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for k in 1..=d {
                    let mut x: Vec<f64> = (0..d)
                        .map(|i| best[i] + 0.5 * (simplex[k].0[i] - best[i]))
                        .collect();
                    let v = eval!(&mut x);
                    simplex[k] = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    simplex.swap_remove(0)
}

/// Cyclic coordinate descent with golden-section line searches, for
/// objectives with too many variables for a simplex.
pub fn coordinate_descent(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    lo: &[f64],
    hi: &[f64],
    sweeps: usize,
    line_iters: usize,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut x = start.to_vec();
    let mut val = f(&x);
    for _ in 0..sweeps {
        let before = val;
        for i in 0..d {
            let (xi, vi) = golden_section(
                |t| {
                    let mut y = x.clone();
                    y[i] = t;
                    f(&y)
                },
                lo[i],
                hi[i],
                line_iters,
            );
            if vi < val {
                x[i] = xi;
                val = vi;
            }
        }
        if (before - val).abs() <= 1e-12 * (1.0 + val.abs()) {
            break;
        }
    }
    (x, val)
}

/// Fixed direction designs on the unit sphere of `R^dim`, with exactly one
/// representative per antipodal pair (rank-one splits are invariant under
/// `(a, b) -> (-a, -b)`, so half designs suffice).
///
/// * dim 2: equally spaced angles on a half circle,
/// * dim 3: a Fibonacci lattice restricted to the upper hemisphere,
/// * dim 4: a Halton-driven point set on the half sphere.
pub fn sphere_design(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let th = PI * k as f64 / count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci lattice on the upper hemisphere (z >= 0).
            let phi = PI * (3.0 - 5.0f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = (k as f64 + 0.5) / count as f64; // (0, 1)
                    let r = (1.0 - z * z).sqrt();
                    let th = phi * k as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        4 => (0..count)
            .map(|k| {
                // Box-Muller-free normal via Halton + inverse erf is
                // overkill here; a Halton point mapped through tangents
                // gives a deterministic well-spread direction set.
                let mut v: Vec<f64> = (0..4)
                    .map(|j| {
                        let u = halton(k as u64 + 1, PRIMES[j]);
                        ((u - 0.5) * PI * 0.98).tan()
                    })
                    .collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                for x in v.iter_mut() {
                    *x /= n;
                }
                if v[3] < 0.0 || (v[3] == 0.0 && v[0] < 0.0) {
                    for x in v.iter_mut() {
                        *x = -*x;
                    }
                }
                v
            })
            .collect(),
        _ => panic!("sphere_design supports dim 1..=4"),
    }
}

pub const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// The `index`-th element of the base-`base` van der Corput sequence.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_min() {
        let (x, v) = golden_section(|t| (t - 0.3) * (t - 0.3), 0.0, 1.0, 60);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(v < 1e-15);
    }

    #[test]
    fn golden_handles_infinite_plateau() {
        let f = |t: f64| if t < 0.5 { f64::INFINITY } else { t };
        let (x, v) = golden_section(f, 0.0, 1.0, 80);
        assert!((x - 0.5).abs() < 1e-6);
        assert!(v.is_finite());
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let (x, v) = nelder_mead(f, &[-1.0, 1.0], &[-2.0, -2.0], &[2.0, 2.0], 0.1, 4000);
        assert!(v < 1e-8, "v = {v}, x = {x:?}");
    }

    #[test]
    fn nelder_mead_respects_box() {
        // Unconstrained min at (2, 2); box caps it at (1, 1).
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2);
        let (x, _) = nelder_mead(f, &[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 0.2, 2000);
        assert!(x[0] <= 1.0 + 1e-12 && x[1] <= 1.0 + 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn coordinate_descent_quadratic() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (v - 0.1 * i as f64).powi(2)).sum();
        let start = vec![0.5; 6];
        let lo = vec![0.0; 6];
        let hi = vec![1.0; 6];
        let (_, v) = coordinate_descent(f, &start, &lo, &hi, 10, 50);
        assert!(v < 1e-10);
    }

    #[test]
    fn sphere_designs_are_unit() {
        for dim in 2..=4 {
            let pts = sphere_design(dim, 64);
            assert_eq!(pts.len(), 64);
            for p in &pts {
                let n: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn halton_is_in_unit_interval() {
        for k in 1..100 {
            for &b in &PRIMES[..4] {
                let u = halton(k, b);
                assert!((0.0..1.0).contains(&u));
            }
        }
    }
}
