//! Natural cubic spline with analytic first derivative.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    /// Knots may be given in any order but must be distinct.
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("spline needs at least two knots".into()));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidArgument("spline knots must be distinct".into()));
        }
        if pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidArgument("spline knots must be finite".into()));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            let size = n - 2;
            let mut diag = vec![0.0; size];
            let mut upper = vec![0.0; size];
            let mut rhs = vec![0.0; size];
            for i in 0..size {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                upper[i] = h[i + 1];
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
            }
            for i in 1..size {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; size];
            sol[size - 1] = rhs[size - 1] / diag[size - 1];
            for i in (0..size - 1).rev() {
                sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        Ok(Self { x, y, m })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Value at `t`; outside the knots the end cubic pieces are extended.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h
            + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_knots_and_lines() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 * i as f64 - 1.0)).collect();
        let s = CubicSpline::new(&pts).unwrap();
        for &(x, y) in &pts {
            assert!((s.eval(x) - y).abs() < 1e-14);
        }
        for t in [0.3, 2.5, 4.9, 7.0, -1.0] {
            assert!((s.eval(t) - (2.0 * t - 1.0)).abs() < 1e-12);
            assert!((s.derivative(t) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (0.4 * i as f64).sin())).collect();
        let s = CubicSpline::new(&pts).unwrap();
        let h = 1e-6;
        for t in [0.5, 3.3, 8.7] {
            let fd = (s.eval(t + h) - s.eval(t - h)) / (2.0 * h);
            assert!((s.derivative(t) - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn knot_order_irrelevant() {
        let a = CubicSpline::new(&[(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)]).unwrap();
        let b = CubicSpline::new(&[(2.0, 2.0), (0.0, 1.0), (1.0, 3.0)]).unwrap();
        assert_eq!(a, b);
        assert!(CubicSpline::new(&[(0.0, 1.0), (0.0, 2.0)]).is_err());
    }
}
