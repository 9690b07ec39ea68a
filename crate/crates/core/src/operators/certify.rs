use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AveragedOp, Point};

/// Per-pair tolerance factor: a pair passes when its violation is at most
/// `CERTIFY_TOLERANCE * (1 + |x - y|^2)`.
pub const CERTIFY_TOLERANCE: f64 = 1e-10;

/// Outcome of sampling the averagedness inequality
/// `|Tx - Ty|^2 <= |x - y|^2 - ((1 - a)/a) |(Id - T)x - (Id - T)y|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub samples: usize,
    pub alpha: f64,
    /// Largest raw violation `lhs - rhs` observed (may be negative).
    pub max_violation: f64,
    /// Largest violation divided by `1 + |x - y|^2`.
    pub max_scaled_violation: f64,
    /// Largest `|Tx - Ty| - rho |x - y|` scaled the same way, when a
    /// Lipschitz constant is declared.
    pub max_lipschitz_violation: Option<f64>,
    /// Number of pairs that failed either check.
    pub failures: usize,
    pub passed: bool,
}

fn sample_point(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Point {
    Point::from(
        (0..dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>(),
    )
}

/// Checks the declared averagedness (and Lipschitz constant, if any) of `op`
/// on `sample_count` seeded random pairs.
///
/// Pairs are drawn at scales spanning `[0.1, 30]`; a quarter of them are
/// close pairs so that local behaviour near kinks is also exercised.
pub fn certify_averaged(op: &AveragedOp, sample_count: usize, seed: u64) -> Certificate {
    assert!(sample_count >= 1, "sample_count must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = op.alpha();
    let ratio = (1.0 - alpha) / alpha;
    let mut max_violation = f64::NEG_INFINITY;
    let mut max_scaled = f64::NEG_INFINITY;
    let mut max_lip: Option<f64> = op.lipschitz().map(|_| f64::NEG_INFINITY);
    let mut failures = 0;

    for _ in 0..sample_count {
        let scale = 10f64.powf(rng.random_range(-1.0..1.5));
        let x = sample_point(&mut rng, op.dim(), scale);
        let y = if rng.random_bool(0.25) {
            x.add(&sample_point(&mut rng, op.dim(), 1e-2 * scale))
        } else {
            sample_point(&mut rng, op.dim(), scale)
        };
        let tx = op.eval_raw(&x);
        let ty = op.eval_raw(&y);
        let dxy = x.dist(&y);
        let dxy2 = dxy * dxy;
        let lhs = tx.dist(&ty).powi(2);
        let residual_diff = x.sub(&tx).dist(&y.sub(&ty));
        let rhs = dxy2 - ratio * residual_diff * residual_diff;
        let violation = lhs - rhs;
        let bound = 1.0 + dxy2;
        let mut failed = !violation.is_finite() || violation > CERTIFY_TOLERANCE * bound;
        max_violation = max_violation.max(violation);
        max_scaled = max_scaled.max(violation / bound);

        if let (Some(rho), Some(m)) = (op.lipschitz(), max_lip.as_mut()) {
            let v = (tx.dist(&ty) - rho * dxy) / bound;
            *m = m.max(v);
            failed |= v > CERTIFY_TOLERANCE;
        }
        if failed {
            failures += 1;
        }
    }

    Certificate {
        samples: sample_count,
        alpha,
        max_violation,
        max_scaled_violation: max_scaled,
        max_lipschitz_violation: max_lip,
        failures,
        passed: failures == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_firmly_nonexpansive() {
        let p = AveragedOp::new(3, 0.5, |x: &Point| x.map(|c| c.clamp(-1.0, 2.0))).unwrap();
        let cert = certify_averaged(&p, 2000, 11);
        assert!(cert.passed, "{cert:?}");
    }

    #[test]
    fn identity_passes_at_half() {
        let cert = certify_averaged(&AveragedOp::identity(4), 500, 1);
        assert!(cert.passed);
        assert!(cert.max_violation.abs() < 1e-9);
    }

    #[test]
    fn doubling_fails() {
        // x = (1), y = (0): |Tx - Ty|^2 = 4, rhs = 1 - 1 = 0, violation 4.
        let two = AveragedOp::new(1, 0.5, |x: &Point| x.scale(2.0)).unwrap();
        let cert = certify_averaged(&two, 100, 3);
        assert!(!cert.passed);
        assert!(cert.max_violation > 0.0);
        assert_eq!(cert.failures, 100);
    }

    #[test]
    fn overstated_lipschitz_fails() {
        let half = AveragedOp::scaled_identity(2, 0.9).unwrap();
        let lying = AveragedOp::new(2, half.alpha(), |x: &Point| x.scale(0.9))
            .unwrap()
            .with_lipschitz(0.5)
            .unwrap();
        assert!(certify_averaged(&half, 200, 5).passed);
        assert!(!certify_averaged(&lying, 200, 5).passed);
    }
}
