use crate::curve::Curve;
use crate::error::{Error, Result};

/// Natural cubic interpolating spline (zero second derivative at both ends).
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    // per interval: a + b dx + c dx^2 + d dx^3
    coeffs: Vec<[f64; 4]>,
}

impl CubicSpline {
    pub fn natural(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() {
            return Err(Error::invalid(
                "spline abscissae and ordinates differ in length",
            ));
        }
        if n < 4 {
            return Err(Error::invalid(format!(
                "spline needs at least 4 points, got {n}"
            )));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "spline abscissae must be strictly increasing",
            ));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();

        // Thomas algorithm on the interior second derivatives
        let m = n - 2;
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut lower = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for k in 0..m {
            let i = k + 1;
            lower[k] = h[i - 1];
            diag[k] = 2.0 * (h[i - 1] + h[i]);
            upper[k] = h[i];
            rhs[k] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
        }
        for k in 1..m {
            let w = lower[k] / diag[k - 1];
            diag[k] -= w * upper[k - 1];
            rhs[k] -= w * rhs[k - 1];
        }
        let mut second = vec![0.0; n];
        for k in (0..m).rev() {
            let next = if k + 1 < m { second[k + 2] } else { 0.0 };
            second[k + 1] = (rhs[k] - upper[k] * next) / diag[k];
        }

        let coeffs = (0..n - 1)
            .map(|i| {
                let hi = h[i];
                [
                    ys[i],
                    (ys[i + 1] - ys[i]) / hi - hi * (2.0 * second[i] + second[i + 1]) / 6.0,
                    second[i] / 2.0,
                    (second[i + 1] - second[i]) / (6.0 * hi),
                ]
            })
            .collect();
        Ok(Self {
            xs: xs.to_vec(),
            coeffs,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    fn interval(&self, x: f64) -> usize {
        let last = self.coeffs.len() - 1;
        if x <= self.xs[0] {
            0
        } else {
            (self.xs.partition_point(|&k| k <= x) - 1).min(last)
        }
    }
}

impl Curve for CubicSpline {
    fn derivatives(&self, t: f64) -> [f64; 4] {
        let i = self.interval(t);
        let [a, b, c, d] = self.coeffs[i];
        let dx = t - self.xs[i];
        [
            a + dx * (b + dx * (c + dx * d)),
            b + dx * (2.0 * c + 3.0 * d * dx),
            2.0 * c + 6.0 * d * dx,
            6.0 * d,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots() {
        let xs = [0.0, 1.0, 2.5, 3.0, 5.0];
        let ys = [1.0, 2.0, 0.5, 4.0, 3.0];
        let s = CubicSpline::natural(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((s.value(*x) - y).abs() < 1e-12);
        }
        // natural ends
        assert!(s.derivatives(0.0)[2].abs() < 1e-12);
        assert!(s.derivatives(5.0)[2].abs() < 1e-12);
    }

    #[test]
    fn second_derivative_continuous_at_knots() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 0.7).sin() * 10.0).collect();
        let s = CubicSpline::natural(&xs, &ys).unwrap();
        for &x in &xs[1..7] {
            let l = s.derivatives(x - 1e-9)[2];
            let r = s.derivatives(x + 1e-9)[2];
            assert!((l - r).abs() < 1e-6);
        }
    }
}
