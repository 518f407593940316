//! Deterministic matrix sampling for condition checks.
//!
//! The bulk of a sample set is a low-discrepancy (Halton) point cloud in
//! the Frobenius ball; a smaller structured batch covers the boundary
//! cases that uniform clouds almost never hit: diagonal matrices,
//! rank-deficient matrices, and square matrices with determinant pinned
//! near zero.

use crate::matrix::{rank_one, svd_ascending, Mat};
use crate::opt::{halton, PRIMES};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Region and budget for a sampling-based check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSpec {
    pub m: usize,
    pub n: usize,
    /// Frobenius-ball radius of the sampled region.
    pub radius: f64,
    /// Low-discrepancy points.
    pub count: usize,
    /// Structured points (diagonal / rank-deficient / near-singular).
    pub structured: usize,
    pub seed: u64,
}

impl SampleSpec {
    /// Shipped defaults: ball |F| <= 5, 10^4 Halton points, 10^2 structured.
    pub fn defaults(m: usize, n: usize) -> SampleSpec {
        SampleSpec { m, n, radius: 5.0, count: 10_000, structured: 100, seed: 0 }
    }

    pub fn with_budget(mut self, count: usize, structured: usize) -> SampleSpec {
        self.count = count;
        self.structured = structured;
        self
    }

    pub fn with_radius(mut self, radius: f64) -> SampleSpec {
        self.radius = radius;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> SampleSpec {
        self.seed = seed;
        self
    }

    /// The full deterministic sample list, structured points first.
    pub fn samples(&self) -> Vec<Mat> {
        let mut out = self.structured_points();
        out.extend(self.halton_points());
        out
    }

    fn halton_points(&self) -> Vec<Mat> {
        let d = self.m * self.n;
        // Offset the sequence start by the seed so different seeds give
        // different (still deterministic) clouds.
        let start = 1 + self.seed.wrapping_mul(7919) % 100_003;
        (0..self.count)
            .map(|k| {
                let mut entries: Vec<f64> = (0..d)
                    .map(|j| 2.0 * halton(start + k as u64, PRIMES[j]) - 1.0)
                    .collect();
                let norm = entries.iter().map(|v| v * v).sum::<f64>().sqrt();
                // Scale the unit cube into the ball without collapsing
                // interior points onto the sphere.
                let s = self.radius / (d as f64).sqrt();
                let cap = if norm * s > self.radius { self.radius / (norm * s) } else { 1.0 };
                for v in entries.iter_mut() {
                    *v *= s * cap;
                }
                Mat::new(self.m, self.n, entries).expect("finite entries")
            })
            .collect()
    }

    fn structured_points(&self) -> Vec<Mat> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_5eed);
        let mut out = Vec::with_capacity(self.structured);
        let k = self.m.min(self.n);
        let mut kind = 0usize;
        while out.len() < self.structured {
            match kind % 3 {
                0 => {
                    // Diagonal (in the rectangular sense), mixed signs.
                    let mut f = Mat::zeros(self.m, self.n);
                    for i in 0..k {
                        f.set(i, i, rng.gen_range(-self.radius..self.radius) / (k as f64).sqrt());
                    }
                    out.push(f);
                }
                1 => {
                    // Rank-one, exactly rank-deficient when min dim > 1.
                    let a: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let b: Vec<f64> = (0..self.m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let r = rank_one(&a, &b);
                    let norm = r.norm();
                    let scale = if norm > 1e-9 {
                        rng.gen_range(0.1..self.radius) / norm
                    } else {
                        0.0
                    };
                    out.push(r.scale(scale));
                }
                _ => {
                    // Near-singular: pin the smallest singular value so the
                    // product lands in [-0.1, 0.1] territory.
                    let entries: Vec<f64> = (0..self.m * self.n)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect();
                    let f = Mat::new(self.m, self.n, entries).expect("finite");
                    match svd_ascending(&f) {
                        Ok(s) => {
                            let mut vals = s.sv.clone();
                            vals[0] = rng.gen_range(0.0..0.1);
                            out.push(s.with_values(&vals));
                        }
                        Err(_) => out.push(f),
                    }
                }
            }
            kind += 1;
        }
        out
    }
}
