use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::operators::Point;

/// Deterministic perturbations `e_{i,n} = c / (n+1)^2 * u_{i,n}` with unit
/// directions `u_{i,n}` drawn from a seed keyed by `(seed, i, n)`.
///
/// Index `0` addresses the outer operator; index `i + 1` addresses the
/// `i`-th block operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorModel {
    pub seed: u64,
    pub scale: f64,
    pub perturb_outer: bool,
    pub perturb_blocks: bool,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ErrorModel {
    pub fn new(seed: u64, scale: f64) -> Self {
        ErrorModel {
            seed,
            scale,
            perturb_outer: true,
            perturb_blocks: true,
        }
    }

    /// Norm of every perturbation injected at step `n`.
    pub fn magnitude(&self, n: usize) -> f64 {
        let d = (n + 1) as f64;
        self.scale / (d * d)
    }

    fn direction(&self, index: usize, n: usize, dim: usize) -> Point {
        let key = splitmix(splitmix(splitmix(self.seed) ^ index as u64) ^ n as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p = Point::from(v);
            let norm = p.norm();
            if norm > 1e-12 {
                return p.scale(1.0 / norm);
            }
        }
    }

    /// The perturbation added to the outer operator's output at step `n`.
    pub fn outer(&self, n: usize, dim: usize) -> Option<Point> {
        (self.perturb_outer && self.scale != 0.0)
            .then(|| self.direction(0, n, dim).scale(self.magnitude(n)))
    }

    /// The perturbation added to block operator `i` at step `n`.
    pub fn block(&self, i: usize, n: usize, dim: usize) -> Option<Point> {
        (self.perturb_blocks && self.scale != 0.0)
            .then(|| self.direction(i + 1, n, dim).scale(self.magnitude(n)))
    }

    /// Upper bounds on `sum_n ||e_{0,n}||` and on
    /// `sum_n sum_i ||e_{i,c(i,n)}||` over any horizon, for `m` block
    /// operators and covering constant `k`. Each block perturbation is
    /// reused for at most `k` steps.
    pub fn summability_bounds(&self, m: usize, k: usize) -> (f64, f64) {
        let zeta2 = std::f64::consts::PI * std::f64::consts::PI / 6.0;
        let outer = if self.perturb_outer { self.scale.abs() * zeta2 } else { 0.0 };
        let blocks = if self.perturb_blocks {
            self.scale.abs() * zeta2 * (m * k) as f64
        } else {
            0.0
        };
        (outer, blocks)
    }
}
