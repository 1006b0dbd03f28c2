//! Periodic cubic splines on uniform grids.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct PeriodicSpline {
    period: f64,
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl PeriodicSpline {
    /// Interpolate samples `y[i] = f(i·period/n)`.
    pub fn new(period: f64, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n < 3 || !(period > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "periodic spline needs at least 3 samples and a positive period (got {n}, {period})"
            )));
        }
        let h = period / n as f64;
        let rhs: Vec<f64> = (0..n)
            .map(|i| 6.0 * (y[(i + 1) % n] - 2.0 * y[i] + y[(i + n - 1) % n]) / (h * h))
            .collect();
        let m = solve_cyclic(n, &rhs);
        Ok(Self { period, h, y, m })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.y
    }

    fn locate(&self, s: f64) -> (usize, usize, f64) {
        let n = self.y.len();
        let u = s.rem_euclid(self.period) / self.h;
        let i = (u.floor() as usize).min(n - 1);
        let t = (u - i as f64).clamp(0.0, 1.0) * self.h;
        (i, (i + 1) % n, t)
    }

    pub fn eval(&self, s: f64) -> f64 {
        let (i, j, t) = self.locate(s);
        let h = self.h;
        let u = h - t;
        self.m[i] * u * u * u / (6.0 * h)
            + self.m[j] * t * t * t / (6.0 * h)
            + (self.y[i] - self.m[i] * h * h / 6.0) * u / h
            + (self.y[j] - self.m[j] * h * h / 6.0) * t / h
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let (i, j, t) = self.locate(s);
        let h = self.h;
        let u = h - t;
        -self.m[i] * u * u / (2.0 * h) + self.m[j] * t * t / (2.0 * h)
            + (self.y[j] - self.y[i]) / h
            - (self.m[j] - self.m[i]) * h / 6.0
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        let (i, j, t) = self.locate(s);
        (self.m[i] * (self.h - t) + self.m[j] * t) / self.h
    }

    fn cell_integral(&self, i: usize) -> f64 {
        let j = (i + 1) % self.y.len();
        let h = self.h;
        h * (self.y[i] + self.y[j]) / 2.0 - h * h * h * (self.m[i] + self.m[j]) / 24.0
    }

    /// Integral over one full period.
    pub fn integral(&self) -> f64 {
        (0..self.y.len()).map(|i| self.cell_integral(i)).sum()
    }

    /// `∫₀ˢ` for `s ∈ [0, period]`.
    pub fn integral_to(&self, s: f64) -> f64 {
        if s >= self.period {
            return self.integral();
        }
        let (i, _, t) = self.locate(s.max(0.0));
        let whole: f64 = (0..i).map(|k| self.cell_integral(k)).sum();
        whole + self.partial_cell(i, t)
    }

    fn partial_cell(&self, i: usize, t: f64) -> f64 {
        let j = (i + 1) % self.y.len();
        let h = self.h;
        let u = h - t;
        let (ai, aj) = (self.y[i] - self.m[i] * h * h / 6.0, self.y[j] - self.m[j] * h * h / 6.0);
        self.m[i] * (h.powi(4) - u.powi(4)) / (24.0 * h)
            + self.m[j] * t.powi(4) / (24.0 * h)
            + ai * (h * h - u * u) / (2.0 * h)
            + aj * t * t / (2.0 * h)
    }
}

/// Solve `x[i-1] + 4x[i] + x[i+1] = r[i]` cyclically via Sherman–Morrison.
fn solve_cyclic(n: usize, r: &[f64]) -> Vec<f64> {
    let (a, b, c) = (1.0, 4.0, 1.0);
    let gamma = -b;
    let mut diag = vec![b; n];
    diag[0] = b - gamma;
    diag[n - 1] = b - a * c / gamma;
    let x = solve_tridiagonal(a, &diag, c, r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = c;
    let z = solve_tridiagonal(a, &diag, c, &u);
    let fact = (x[0] + a * x[n - 1] / gamma) / (1.0 + z[0] + a * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn solve_tridiagonal(a: f64, diag: &[f64], c: f64, r: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut beta = diag[0];
    x[0] = r[0] / beta;
    for i in 1..n {
        cp[i] = c / beta;
        beta = diag[i] - a * cp[i];
        x[i] = (r[i] - a * x[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        x[i] -= cp[i + 1] * x[i + 1];
    }
    x
}

/// Cubic Hermite interpolation on `[0, h]`.
pub fn hermite(y0: f64, d0: f64, y1: f64, d1: f64, h: f64, t: f64) -> f64 {
    let u = t / h;
    let (u2, u3) = (u * u, u * u * u);
    (2.0 * u3 - 3.0 * u2 + 1.0) * y0
        + (u3 - 2.0 * u2 + u) * h * d0
        + (-2.0 * u3 + 3.0 * u2) * y1
        + (u3 - u2) * h * d1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn f(s: f64) -> f64 {
        (s).sin() + 0.5 * (2.0 * s).cos() + 0.3
    }

    fn spline(n: usize) -> PeriodicSpline {
        let y = (0..n).map(|i| f(TAU * i as f64 / n as f64)).collect();
        PeriodicSpline::new(TAU, y).unwrap()
    }

    #[test]
    fn interpolates_and_differentiates() {
        let sp = spline(256);
        for k in 0..50 {
            let s: f64 = -3.0 + 0.23 * k as f64;
            assert_relative_eq!(sp.eval(s), f(s), epsilon = 1e-7);
            let d = s.cos() - (2.0 * s).sin();
            assert_relative_eq!(sp.derivative(s), d, epsilon = 1e-5);
            let dd = -s.sin() - 2.0 * (2.0 * s).cos();
            assert_relative_eq!(sp.second_derivative(s), dd, epsilon = 1e-3);
        }
        assert_relative_eq!(sp.eval(0.0), sp.eval(TAU), epsilon = 1e-14);
    }

    #[test]
    fn integrals() {
        let sp = spline(128);
        assert_relative_eq!(sp.integral(), 0.3 * TAU, epsilon = 1e-9);
        for s in [0.0f64, 0.4, 1.7, 3.0, 6.0] {
            let exact = 1.0 - s.cos() + 0.25 * (2.0 * s).sin() + 0.3 * s;
            assert_relative_eq!(sp.integral_to(s), exact, epsilon = 1e-7);
        }
    }

    #[test]
    fn convergence_is_fourth_order() {
        let err = |n| {
            let sp = spline(n);
            (0..97)
                .map(|k| {
                    let s = 0.0647 * k as f64;
                    (sp.eval(s) - f(s)).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!(ratio > 12.0 && ratio < 20.0, "{ratio}");
    }

    #[test]
    fn rejects_short_input() {
        assert!(PeriodicSpline::new(1.0, vec![1.0, 2.0]).is_err());
        assert!(PeriodicSpline::new(0.0, vec![1.0; 4]).is_err());
    }

    #[test]
    fn hermite_endpoints() {
        assert_relative_eq!(hermite(1.0, 2.0, 3.0, -1.0, 0.5, 0.0), 1.0);
        assert_relative_eq!(hermite(1.0, 2.0, 3.0, -1.0, 0.5, 0.5), 3.0);
    }
}
