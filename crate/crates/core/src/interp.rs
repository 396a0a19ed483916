//! Monotone piecewise-cubic Hermite interpolation (Fritsch-Butland slopes).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl MonotoneCubic {
    /// `x` must be strictly increasing with at least two points.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && x.len() == y.len());
        debug_assert!(x.windows(2).all(|w| w[1] > w[0]));
        let m = x.len();
        let secant: Vec<f64> = (0..m - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut slope = vec![0.0; m];
        slope[0] = secant[0];
        slope[m - 1] = secant[m - 2];
        for i in 1..m - 1 {
            let (d0, d1) = (secant[i - 1], secant[i]);
            if d0 * d1 <= 0.0 {
                slope[i] = 0.0;
            } else {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let w0 = 2.0 * h1 + h0;
                let w1 = h1 + 2.0 * h0;
                slope[i] = (w0 + w1) / (w0 / d0 + w1 / d1);
            }
        }
        MonotoneCubic { x, y, slope }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    /// Evaluate; clamps to the end values outside the node range.
    pub fn eval(&self, t: f64) -> f64 {
        let m = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[m - 1] {
            return self.y[m - 1];
        }
        let i = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.slope[i] + h01 * self.y[i + 1] + h11 * h * self.slope[i + 1]
    }
}
