use std::fmt;
use std::ops::{Index, IndexMut};

use super::OperatorError;

/// A point of the ambient space, stored as a dense coordinate vector.
#[derive(Clone, PartialEq, Default)]
pub struct Point(Vec<f64>);

impl Point {
    /// Builds a point, rejecting NaN and infinite coordinates.
    pub fn new(coords: Vec<f64>) -> Result<Self, OperatorError> {
        if let Some(k) = coords.iter().position(|c| !c.is_finite()) {
            return Err(OperatorError::NonFinite { coordinate: k });
        }
        Ok(Point(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Point(vec![value; dim])
    }

    /// The `k`-th canonical basis vector.
    pub fn unit(dim: usize, k: usize) -> Self {
        let mut p = Point::zeros(dim);
        p.0[k] = 1.0;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &Point) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add(&self, other: &Point) -> Point {
        debug_assert_eq!(self.dim(), other.dim());
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Point) -> Point {
        debug_assert_eq!(self.dim(), other.dim());
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Point {
        Point(self.0.iter().map(|a| s * a).collect())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Point) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    /// `self + lambda * (target - self)`
    pub fn lerp(&self, target: &Point, lambda: f64) -> Point {
        Point(
            self.0
                .iter()
                .zip(&target.0)
                .map(|(x, t)| x + lambda * (t - x))
                .collect(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Point {
        Point(self.0.iter().map(|&c| f(c)).collect())
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl From<&[f64]> for Point {
    fn from(v: &[f64]) -> Self {
        Point(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(v: [f64; N]) -> Self {
        Point(v.to_vec())
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.0[k]
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Weighted sum `sum_i w_i p_i` accumulated in the given order with Neumaier
/// compensation, coordinate by coordinate.
pub fn weighted_sum<'a, I>(dim: usize, terms: I) -> Point
where
    I: IntoIterator<Item = (f64, &'a Point)>,
{
    let mut sum = vec![0.0; dim];
    let mut comp = vec![0.0; dim];
    for (w, p) in terms {
        debug_assert_eq!(p.dim(), dim);
        for k in 0..dim {
            let term = w * p.0[k];
            let t = sum[k] + term;
            if sum[k].abs() >= term.abs() {
                comp[k] += (sum[k] - t) + term;
            } else {
                comp[k] += (term - t) + sum[k];
            }
            sum[k] = t;
        }
    }
    for k in 0..dim {
        sum[k] += comp[k];
    }
    Point(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(Point::new(vec![1.0, f64::NAN]).is_err());
        assert!(Point::new(vec![f64::INFINITY]).is_err());
        assert!(Point::new(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let big = Point::from([1e16]);
        let one = Point::from([1.0]);
        let s = weighted_sum(1, [(1.0, &big), (1.0, &one), (-1.0, &big)]);
        assert_eq!(s[0], 1.0);
    }

    #[test]
    fn basic_geometry() {
        let a = Point::from([3.0, 4.0]);
        assert_eq!(a.norm(), 5.0);
        assert_eq!(a.dist(&Point::zeros(2)), 5.0);
        assert_eq!(a.lerp(&Point::zeros(2), 0.5), Point::from([1.5, 2.0]));
    }
}
