use super::{SolverError, Trace, TraceRecord};
use crate::operators::{Point, Weights};

/// Relative tolerance of the Fejer-type audit, scaled by `1 + ||x_0 - x_ref||`.
pub const FEJER_TOLERANCE: f64 = 1e-9;
/// Relative slack of the linear-rate audit, scaled by `1 + xi_hat`.
pub const RATE_SLACK: f64 = 1e-12;

/// `||x_k - x_ref||` for every recorded iterate, falling back to the
/// distances logged during the run.
pub fn distances(trace: &Trace, x_ref: Option<&Point>) -> Result<Vec<f64>, SolverError> {
    if let (Some(its), Some(r)) = (&trace.iterates, x_ref) {
        if let Some(bad) = its.iter().find(|p| p.dim() != r.dim()) {
            return Err(SolverError::DimensionMismatch {
                expected: r.dim(),
                got: bad.dim(),
            });
        }
        return Ok(its.iter().map(|p| p.dist(r)).collect());
    }
    trace
        .records
        .iter()
        .map(|r| r.dist_ref)
        .collect::<Option<Vec<_>>>()
        .ok_or(SolverError::MissingIterates)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FejerReport {
    /// Number of steps `n >= K - 1` at which the inequality was evaluated.
    pub checked: usize,
    /// Largest `lhs - rhs`; negative when every step has room to spare.
    pub max_violation: f64,
    pub tolerance: f64,
    /// Indices `n + 1` of the iterates that broke the inequality.
    pub failures: Vec<usize>,
    /// True when the distance to the reference never increased.
    pub monotone: bool,
    pub passed: bool,
}

/// Checks, for every step `n >= K - 1`,
///
/// `||x_{n+1} - x|| <= sum_i w_i ||x_{c(i,n)} - x|| + ||e_{0,n}|| + sum_i ||e_{i,c(i,n)}||`
///
/// where `c(i,n)` is the last activation of `i` up to `n`.
pub fn fejer_audit(trace: &Trace, weights: &Weights, x_ref: &Point) -> Result<FejerReport, SolverError> {
    let d = distances(trace, Some(x_ref))?;
    fejer_audit_distances(&d, &trace.records, weights, trace.k)
}

/// [`fejer_audit`] on precomputed distances `dists[k] = ||x_k - x||`.
///
/// Records without per-operator error norms are bounded by the sum of
/// `errsum` over the last `K` steps.
pub fn fejer_audit_distances(
    dists: &[f64],
    records: &[TraceRecord],
    weights: &Weights,
    k: usize,
) -> Result<FejerReport, SolverError> {
    let m = weights.len();
    let w = weights.as_slice();
    let steps: Vec<&TraceRecord> = records.iter().filter(|r| r.step.is_some()).collect();
    if dists.len() < steps.len() + 1 {
        return Err(SolverError::MissingIterates);
    }
    let tolerance = FEJER_TOLERANCE * (1.0 + dists[0]);
    let mut last: Vec<Option<usize>> = vec![None; m];
    let mut last_err = vec![0.0; m];
    let mut max_violation = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut monotone = true;

    for (idx, rec) in steps.iter().enumerate() {
        let n = rec.n;
        if n != idx {
            return Err(SolverError::InvalidConfig(format!(
                "trace step {idx} is labelled {n}"
            )));
        }
        for (pos, &i) in rec.block.iter().enumerate() {
            if i >= m {
                return Err(SolverError::CountMismatch { expected: m, got: i + 1 });
            }
            last[i] = Some(n);
            last_err[i] = rec.op_errors.as_ref().map_or(0.0, |e| e[pos]);
        }
        if dists[n + 1] > dists[n] {
            monotone = false;
        }
        if n + 1 < k || last.iter().any(Option::is_none) {
            continue;
        }
        let lagged: f64 = (0..m).map(|i| w[i] * dists[last[i].expect("activated")]).sum();
        let err_terms = if rec.op_errors.is_some() {
            last_err.iter().sum::<f64>()
        } else {
            steps[n + 1 - k..=n].iter().map(|r| r.errsum).sum()
        };
        let rhs = lagged + rec.err0 + err_terms;
        let violation = dists[n + 1] - rhs;
        max_violation = max_violation.max(violation);
        if violation > tolerance {
            failures.push(n + 1);
        }
        checked += 1;
    }
    Ok(FejerReport {
        checked,
        max_violation,
        tolerance,
        passed: failures.is_empty(),
        failures,
        monotone,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    /// `rho_0 * sum_i w_i rho_i`
    pub rho: f64,
    /// `max_{k <= K-1} ||x_k - x_ref||`
    pub xi_hat: f64,
    pub checked: usize,
    /// Largest `||x_n - x_ref|| - envelope(n)`.
    pub max_excess: f64,
    pub slack: f64,
    pub failures: Vec<usize>,
    pub passed: bool,
}

/// `rho^{(1-K)/K} * xi_hat * rho^{n/K}`
pub fn rate_envelope(rho: f64, xi_hat: f64, k: usize, n: usize) -> f64 {
    let k = k as f64;
    xi_hat * rho.powf((1.0 - k + n as f64) / k)
}

/// Checks every recorded iterate against the geometric envelope implied by
/// the declared Lipschitz constants. Refused when the combined factor is
/// not below one.
pub fn linear_rate_audit(
    trace: &Trace,
    rho0: f64,
    rhos: &[f64],
    weights: &Weights,
    x_ref: &Point,
) -> Result<RateReport, SolverError> {
    if rhos.len() != weights.len() {
        return Err(SolverError::CountMismatch {
            expected: weights.len(),
            got: rhos.len(),
        });
    }
    let all = std::iter::once(&rho0).chain(rhos);
    if all.clone().any(|r| !(*r >= 0.0 && *r <= 1.0)) {
        return Err(SolverError::InvalidConfig("Lipschitz constants must lie in [0, 1]".into()));
    }
    let rho = rho0 * weights.as_slice().iter().zip(rhos).map(|(w, r)| w * r).sum::<f64>();
    if !(rho < 1.0) || rho <= 0.0 {
        return Err(SolverError::NoContraction(rho));
    }
    let d = distances(trace, Some(x_ref))?;
    Ok(linear_rate_audit_distances(&d, trace.k, rho))
}

/// [`linear_rate_audit`] on precomputed distances and a combined factor
/// `rho` already known to lie in `(0, 1)`.
pub fn linear_rate_audit_distances(d: &[f64], k: usize, rho: f64) -> RateReport {
    let xi_hat = d.iter().take(k).cloned().fold(0.0, f64::max);
    let slack = RATE_SLACK * (1.0 + xi_hat);
    let mut failures = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for (n, &dn) in d.iter().enumerate() {
        let excess = dn - rate_envelope(rho, xi_hat, k, n);
        max_excess = max_excess.max(excess);
        if excess > slack {
            failures.push(n);
        }
    }
    RateReport {
        rho,
        xi_hat,
        checked: d.len(),
        max_excess,
        slack,
        passed: failures.is_empty(),
        failures,
    }
}

/// `(sum_n ||e_{0,n}||, sum_n sum_i ||e_{i,c(i,n)}||)` accumulated over the
/// steps of a trace with per-operator error norms.
pub fn error_sums(trace: &Trace, m: usize) -> (f64, f64) {
    let mut last_err = vec![0.0; m];
    let mut outer = 0.0;
    let mut lagged = 0.0;
    for rec in trace.steps() {
        outer += rec.err0;
        match &rec.op_errors {
            Some(errs) => {
                for (&i, &e) in rec.block.iter().zip(errs) {
                    last_err[i] = e;
                }
                lagged += last_err.iter().sum::<f64>();
            }
            None => lagged += rec.errsum,
        }
    }
    (outer, lagged)
}
