//! The triangular array induced by a schedule and a weight vector, and the
//! checks that make it a concentrating array.

use super::{last_activation, BlockSchedule, ScheduleError};

pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Row `n` of the array, stored sparsely as `(j, mu_{n,j})` with `j`
/// ascending. At most `K` entries are nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentratingRow {
    pub n: usize,
    pub entries: Vec<(usize, f64)>,
}

impl ConcentratingRow {
    pub fn get(&self, j: usize) -> f64 {
        self.entries
            .iter()
            .find(|(jj, _)| *jj == j)
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v).sum()
    }

    pub fn dot(&self, xs: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, v)| v * xs[j]).sum()
    }
}

fn check_weights(s: &BlockSchedule, weights: &[f64]) -> Result<(), ScheduleError> {
    if weights.len() != s.m() {
        return Err(ScheduleError::LengthMismatch {
            expected: s.m(),
            got: weights.len(),
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w > 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(ScheduleError::InvalidWeights(format!(
            "weights must be positive and sum to 1 (sum = {sum})"
        )));
    }
    Ok(())
}

/// Row `n` of the array.
///
/// For `n < K - 1` the row is the unit mass at `j = n`. From `n = K - 1`
/// on, `mu_{n,j}` is the total weight of the indices whose most recent
/// activation up to step `n` happened at step `j` (zero outside the window
/// `{n - K + 1, ..., n}`).
pub fn mu_row(
    s: &BlockSchedule,
    weights: &[f64],
    n: usize,
) -> Result<ConcentratingRow, ScheduleError> {
    check_weights(s, weights)?;
    let k = s.k();
    if n + 1 < k {
        return Ok(ConcentratingRow {
            n,
            entries: vec![(n, 1.0)],
        });
    }
    let mut seen = vec![false; s.m()];
    let mut entries = Vec::with_capacity(k);
    for j in (n + 1 - k..=n).rev() {
        let mut mass = 0.0;
        let mut any = false;
        for &i in s.block(j).iter() {
            if !seen[i] {
                seen[i] = true;
                mass += weights[i];
                any = true;
            }
        }
        if any {
            entries.push((j, mass));
        }
    }
    entries.reverse();
    Ok(ConcentratingRow { n, entries })
}

/// Outcome of checking the three sufficient conditions for a concentrating
/// array: unit row sums, the band `n - j >= K => mu_{n,j} = 0`, and a
/// positive infimum of the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentratingReport {
    pub rows_checked: usize,
    pub max_row_sum_error: f64,
    pub row_sum_ok: bool,
    pub band_ok: bool,
    pub nonnegative: bool,
    pub diagonal_infimum: f64,
    pub diagonal_ok: bool,
    pub failures: Vec<String>,
    pub passed: bool,
}

pub fn check_concentrating(rows: &[ConcentratingRow], k: usize) -> ConcentratingReport {
    let mut failures = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut band_ok = true;
    let mut nonnegative = true;
    let mut diag_inf = f64::INFINITY;

    for row in rows {
        let err = (row.sum() - 1.0).abs();
        max_err = max_err.max(err);
        if err > ROW_SUM_TOLERANCE {
            failures.push(format!("row {} sums to {}", row.n, row.sum()));
        }
        for &(j, v) in &row.entries {
            if v < 0.0 {
                nonnegative = false;
                failures.push(format!("row {} has negative entry at j = {j}", row.n));
            }
            if j > row.n {
                band_ok = false;
                failures.push(format!("row {} has entry beyond the diagonal (j = {j})", row.n));
            } else if row.n - j >= k && v != 0.0 {
                band_ok = false;
                failures.push(format!("row {} has mass {v} at j = {j}, outside the band", row.n));
            }
        }
        diag_inf = diag_inf.min(row.get(row.n));
    }
    let row_sum_ok = max_err <= ROW_SUM_TOLERANCE;
    let diagonal_ok = diag_inf > 0.0;
    if !diagonal_ok {
        failures.push(format!("diagonal infimum {diag_inf} is not positive"));
    }
    ConcentratingReport {
        rows_checked: rows.len(),
        max_row_sum_error: max_err,
        row_sum_ok,
        band_ok,
        nonnegative,
        diagonal_infimum: diag_inf,
        diagonal_ok,
        passed: row_sum_ok && band_ok && nonnegative && diagonal_ok,
        failures,
    }
}

/// Evaluates both sides of `sum_j mu_{n,j} xs_j = sum_i w_i xs_{c(i,n)}`
/// independently and compares them.
pub fn lag_identity_check(
    s: &BlockSchedule,
    weights: &[f64],
    n: usize,
    xs: &[f64],
    tol: f64,
) -> Result<bool, ScheduleError> {
    if xs.len() != n + 1 {
        return Err(ScheduleError::LengthMismatch {
            expected: n + 1,
            got: xs.len(),
        });
    }
    if n + 1 < s.k() {
        return Err(ScheduleError::BeforeFirstWindow { n, k: s.k() });
    }
    let lhs = mu_row(s, weights, n)?.dot(xs);
    let mut rhs = 0.0;
    for (i, w) in weights.iter().enumerate() {
        rhs += w * xs[last_activation(s, i, n)?];
    }
    Ok((lhs - rhs).abs() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_mass_before_first_window() {
        let s = BlockSchedule::cyclic(4, 1).unwrap();
        let w = [0.25; 4];
        for n in 0..3 {
            let row = mu_row(&s, &w, n).unwrap();
            assert_eq!(row.entries, vec![(n, 1.0)]);
        }
    }

    #[test]
    fn full_activation_concentrates_on_diagonal() {
        let s = BlockSchedule::full(3).unwrap();
        let w = [1.0 / 3.0; 3];
        for n in 0..10 {
            let row = mu_row(&s, &w, n).unwrap();
            assert_eq!(row.entries.len(), 1);
            assert_eq!(row.entries[0].0, n);
            assert!((row.entries[0].1 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn set_difference_example() {
        let s = BlockSchedule::explicit(2, vec![vec![0], vec![1]], 2).unwrap();
        let row = mu_row(&s, &[0.3, 0.7], 1).unwrap();
        assert_eq!(row.get(0), 0.3);
        assert_eq!(row.get(1), 0.7);
    }

    #[test]
    fn invalid_weights_rejected() {
        let s = BlockSchedule::full(2).unwrap();
        assert!(mu_row(&s, &[0.5, 0.6], 3).is_err());
        assert!(mu_row(&s, &[1.0], 3).is_err());
    }

    fn rows_for(s: &BlockSchedule, w: &[f64], horizon: usize) -> Vec<ConcentratingRow> {
        (0..horizon).map(|n| mu_row(s, w, n).unwrap()).collect()
    }

    #[test]
    fn checker_accepts_generated_and_rejects_mutations() {
        let s = BlockSchedule::quasicyclic_random(4, 3, 9).unwrap();
        let w = [0.1, 0.2, 0.3, 0.4];
        let rows = rows_for(&s, &w, 60);
        let rep = check_concentrating(&rows, 3);
        assert!(rep.passed, "{rep:?}");
        assert!(rep.diagonal_infimum >= 0.1);

        let mut bad_sum = rows.clone();
        bad_sum[20].entries.last_mut().unwrap().1 -= 0.1;
        let rep = check_concentrating(&bad_sum, 3);
        assert!(!rep.row_sum_ok && !rep.passed);

        let mut bad_band = rows.clone();
        let n = bad_band[30].n;
        bad_band[30].entries.insert(0, (n - 3, 0.0));
        assert!(check_concentrating(&bad_band, 3).passed, "explicit zeros are allowed");
        bad_band[30].entries[0].1 = 0.05;
        let last = bad_band[30].entries.len() - 1;
        bad_band[30].entries[last].1 -= 0.05;
        let rep = check_concentrating(&bad_band, 3);
        assert!(rep.row_sum_ok && !rep.band_ok && !rep.passed);

        let mut bad_diag = rows;
        let pick = (10..bad_diag.len())
            .find(|&r| bad_diag[r].entries.len() > 1)
            .expect("some row spreads its mass");
        let row = &mut bad_diag[pick];
        let n = row.n;
        let mass = row.get(n);
        row.entries.retain(|(j, _)| *j != n);
        row.entries[0].1 += mass;
        let rep = check_concentrating(&bad_diag, 3);
        assert!(rep.row_sum_ok && rep.band_ok && !rep.diagonal_ok && !rep.passed);
    }

    #[test]
    fn lag_identity_examples() {
        let s = BlockSchedule::quasicyclic_random(4, 3, 2).unwrap();
        let w = [0.25; 4];
        for n in 2..40 {
            assert!(lag_identity_check(&s, &w, n, &vec![1.0; n + 1], 1e-15).unwrap());
        }
        let full = BlockSchedule::full(3).unwrap();
        let xs: Vec<f64> = (0..8).map(|v| v as f64 * 0.7).collect();
        assert!(lag_identity_check(&full, &[0.2, 0.3, 0.5], 7, &xs, 1e-15).unwrap());
        assert!(lag_identity_check(&full, &[0.2, 0.3, 0.5], 7, &xs[..5], 1e-15).is_err());
    }

    proptest! {
        #[test]
        fn lag_identity_random(seed in 0u64..1000, xs in prop::collection::vec(0.0f64..100.0, 60)) {
            let s = BlockSchedule::quasicyclic_random(4, 3, seed).unwrap();
            let w = [0.1, 0.2, 0.3, 0.4];
            for n in 2..60 {
                prop_assert!(lag_identity_check(&s, &w, n, &xs[..=n], 1e-12).unwrap());
            }
        }
    }
}
