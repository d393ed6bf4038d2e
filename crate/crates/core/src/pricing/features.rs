//! Features over the time-augmented state `{x, t}`.

use crate::error::{Error, Result};

/// Gaussian bumps over the normalized plane `(x / x_0, t / T)` plus a
/// trailing constant feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfFeatures {
    centers: Vec<(f64, f64)>,
    width_x: f64,
    width_t: f64,
    x_scale: f64,
    t_scale: f64,
}

impl RbfFeatures {
    pub fn new(centers: Vec<(f64, f64)>, width_x: f64, width_t: f64, x_scale: f64, t_scale: f64) -> Result<Self> {
        if !(width_x > 0.0 && width_t > 0.0) {
            return Err(Error::InvalidArgument(format!("RBF widths must be positive, got {width_x}, {width_t}")));
        }
        if !(x_scale > 0.0 && t_scale > 0.0) {
            return Err(Error::InvalidArgument("RBF scales must be positive".into()));
        }
        Ok(RbfFeatures { centers, width_x, width_t, x_scale, t_scale })
    }

    /// `n_x × n_t` centers spread evenly over the given ranges, widths equal
    /// to the grid spacing.
    pub fn grid(
        n_x: usize,
        n_t: usize,
        x_range: (f64, f64),
        t_range: (f64, f64),
        x_scale: f64,
        t_scale: f64,
    ) -> Result<Self> {
        if n_x < 2 || n_t < 2 {
            return Err(Error::InvalidArgument("RBF grid needs at least two centers per axis".into()));
        }
        let step = |(a, b): (f64, f64), n: usize| (b - a) / (n - 1) as f64;
        let (dx, dt) = (step(x_range, n_x), step(t_range, n_t));
        let centers = (0..n_x)
            .flat_map(|i| (0..n_t).map(move |j| (x_range.0 + i as f64 * dx, t_range.0 + j as f64 * dt)))
            .collect();
        Self::new(centers, dx, dt, x_scale, t_scale)
    }

    pub fn dim(&self) -> usize {
        self.centers.len() + 1
    }

    pub fn eval_into(&self, x: f64, t: usize, out: &mut [f64]) {
        let (u, s) = (x / self.x_scale, t as f64 / self.t_scale);
        for (o, (cx, ct)) in out.iter_mut().zip(&self.centers) {
            let (a, b) = ((u - cx) / self.width_x, (s - ct) / self.width_t);
            *o = (-(a * a + b * b)).exp();
        }
        out[self.centers.len()] = 1.0;
    }

    pub fn eval(&self, x: f64, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, t, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_examples() {
        let f = RbfFeatures::grid(7, 7, (0.7, 1.3), (0.0, 1.0), 100.0, 20.0).unwrap();
        assert_eq!(f.dim(), 50);
        let at_center = f.eval(100.0, 10);
        // center (1.0, 0.5) is the 25th
        assert!((at_center[24] - 1.0).abs() < 1e-12);
        assert!(at_center.iter().all(|v| *v > 0.0 && *v <= 1.0));
        let far = f.eval(1000.0, 10);
        assert!(far[..49].iter().all(|v| *v < 1e-100));
        assert_eq!(far[49], 1.0);
    }
}
