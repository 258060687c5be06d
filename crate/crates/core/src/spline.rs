//! Natural cubic spline interpolation.

use crate::error::{Error, Result};

/// Piecewise cubic through `(x_i, y_i)` with zero curvature at both ends.
///
/// Each segment is stored as `y_i + b·dx + c·dx² + d·dx³`, so constant data
/// evaluates to exactly the constant.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n != y.len() {
            return Err(Error::DimensionMismatch {
                context: "spline knots",
                expected: n.to_string(),
                actual: y.len().to_string(),
            });
        }
        if n < 2 {
            return Err(Error::invalid("knots", "a spline needs at least two knots"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("knots", "knot positions must be strictly increasing"));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let slope: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();

        // second derivatives m_1..m_{n-2}; m_0 = m_{n-1} = 0 (Thomas algorithm)
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                rhs[i] = 6.0 * (slope[i + 1] - slope[i]);
            }
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * h[i];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
            }
        }
        let mut b = Vec::with_capacity(n - 1);
        let mut c = Vec::with_capacity(n - 1);
        let mut d = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            b.push(slope[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0);
            c.push(m[i] / 2.0);
            d.push((m[i + 1] - m[i]) / (6.0 * h[i]));
        }
        Ok(CubicSpline {
            x: x.to_vec(),
            y: y.to_vec(),
            b,
            c,
            d,
        })
    }

    /// Knots at `0, span/(n-1), ..., span`.
    pub fn uniform(span: f64, y: &[f64]) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::invalid("knots", "a spline needs at least two knots"));
        }
        let x: Vec<f64> = (0..n).map(|i| span * i as f64 / (n - 1) as f64).collect();
        CubicSpline::new(&x, y)
    }

    /// Evaluate; outside the knot range the end cubic is extended.
    pub fn eval(&self, t: f64) -> f64 {
        let last = self.x.len() - 2;
        let i = match self.x.partition_point(|&k| k <= t) {
            0 => 0,
            p => (p - 1).min(last),
        };
        let dx = t - self.x[i];
        self.y[i] + dx * (self.b[i] + dx * (self.c[i] + dx * self.d[i]))
    }
}
