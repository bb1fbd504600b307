/// Natural cubic spline through `(t_k, y_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    moments: Vec<f64>,
}

impl CubicSpline {
    /// Returns `None` unless there are at least two strictly increasing,
    /// finite knots with matching values.
    pub fn natural(knots: &[f64], values: &[f64]) -> Option<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return None;
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().chain(values).any(|v| !v.is_finite()) {
            return None;
        }
        let mut moments = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for the interior moments (Thomas algorithm)
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let h0 = knots[i + 1] - knots[i];
                let h1 = knots[i + 2] - knots[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((values[i + 2] - values[i + 1]) / h1 - (values[i + 1] - values[i]) / h0);
            }
            for i in 1..m {
                let lower = knots[i + 1] - knots[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            moments[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                moments[i + 1] = (rhs[i] - upper[i] * moments[i + 2]) / diag[i];
            }
        }
        Some(Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            moments,
        })
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Value, first and second derivative at `t`, which is clamped to the
    /// knot range.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let t = t.clamp(self.start(), self.end());
        let k = match self.knots.partition_point(|x| *x <= t) {
            0 => 0,
            p => (p - 1).min(self.knots.len() - 2),
        };
        let h = self.knots[k + 1] - self.knots[k];
        let a = (self.knots[k + 1] - t) / h;
        let b = (t - self.knots[k]) / h;
        let (m0, m1) = (self.moments[k], self.moments[k + 1]);
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let y = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let dy = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let ddy = a * m0 + b * m1;
        (y, dy, ddy)
    }
}
