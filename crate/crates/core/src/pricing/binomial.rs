//! Estimating the up-probability of a binomial price model from data.

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

const BISECTION_TOL: f64 = 1e-12;

/// Tolerance when matching observed price ratios to the model factors.
pub const RATIO_TOL: f64 = 1e-9;

/// `P(Bin(n, p) <= k)` through the regularized incomplete beta function.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        1.0
    } else if p <= 0.0 {
        1.0
    } else if p >= 1.0 {
        0.0
    } else {
        beta_reg((n - k) as f64, k as f64 + 1.0, 1.0 - p)
    }
}

/// `P(Bin(n, p) >= k)`.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        1.0 - binomial_cdf(k - 1, n, p)
    }
}

/// Root of a monotone function on `[0, 1]` by bisection.
fn bisect(target: f64, increasing: bool, f: impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (0.0f64, 1.0f64);
    while b - a > BISECTION_TOL {
        let m = 0.5 * (a + b);
        if (f(m) < target) == increasing {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Exact two-sided `100 (1 - α)%` interval for a binomial proportion.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 0 <= k <= n and n >= 1, got k = {k}, n = {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let half = alpha / 2.0;
    let lo = if k == 0 { 0.0 } else { bisect(half, true, |p| binomial_upper_tail(k, n, p)) };
    let hi = if k == n { 1.0 } else { bisect(half, false, |p| binomial_cdf(k, n, p)) };
    Ok((lo, hi))
}

/// Point estimate and confidence interval for the up-probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainUpProbability {
    pub p_hat: f64,
    pub p_minus: f64,
    pub p_plus: f64,
    pub alpha: f64,
    /// Observed moves.
    pub n: u64,
}

impl UncertainUpProbability {
    /// Collapses the interval to the point estimate.
    pub fn nominal(&self) -> Self {
        UncertainUpProbability { p_minus: self.p_hat, p_plus: self.p_hat, ..*self }
    }

    pub fn width(&self) -> f64 {
        self.p_plus - self.p_minus
    }
}

/// Counts up moves across price paths and attaches a Clopper-Pearson
/// interval. Every ratio `x_{t+1} / x_t` must match `f_up` or `f_down`.
pub fn fit_model(paths: &[Vec<f64>], f_up: f64, f_down: f64, alpha: f64) -> Result<UncertainUpProbability> {
    let (mut ups, mut n) = (0u64, 0u64);
    for path in paths {
        for pair in path.windows(2) {
            let ratio = pair[1] / pair[0];
            if (ratio - f_up).abs() <= RATIO_TOL {
                ups += 1;
            } else if (ratio - f_down).abs() > RATIO_TOL {
                return Err(Error::PriceData { index: n as usize, ratio });
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no price moves in the data".into()));
    }
    let (p_minus, p_plus) = clopper_pearson(ups, n, alpha)?;
    let p_hat = ups as f64 / n as f64;
    Ok(UncertainUpProbability { p_hat, p_minus: p_minus.min(p_hat), p_plus: p_plus.max(p_hat), alpha, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_are_exact() {
        assert_eq!(clopper_pearson(0, 10, 0.05).unwrap().0, 0.0);
        assert_eq!(clopper_pearson(10, 10, 0.05).unwrap().1, 1.0);
        assert!(clopper_pearson(3, 2, 0.05).is_err());
        assert!(clopper_pearson(0, 0, 0.05).is_err());
        assert!(clopper_pearson(1, 2, 1.0).is_err());
    }

    #[test]
    fn interval_tails_hit_half_alpha() {
        let (lo, hi) = clopper_pearson(7, 30, 0.1).unwrap();
        assert!((binomial_upper_tail(7, 30, lo) - 0.05).abs() < 1e-9);
        assert!((binomial_cdf(7, 30, hi) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn fit_counts_moves() {
        let up = vec![100.0, 102.0, 104.04, 106.1208];
        let m = fit_model(&[up.clone(), up], 1.02, 0.98, 0.05).unwrap();
        assert_eq!(m.p_hat, 1.0);
        assert_eq!(m.n, 6);
        assert_eq!(m.p_plus, 1.0);

        let mut path = vec![100.0];
        for i in 0..10 {
            let f = if i % 2 == 0 { 1.02 } else { 0.98 };
            path.push(path[i] * f);
        }
        let m = fit_model(&[path], 1.02, 0.98, 0.05).unwrap();
        assert_eq!(m.p_hat, 0.5);
        assert!((m.p_minus - 0.1871).abs() < 1e-3 && (m.p_plus - 0.8129).abs() < 1e-3);
    }

    #[test]
    fn fit_rejects_bad_data() {
        assert!(matches!(
            fit_model(&[vec![100.0, 102.0, 101.0]], 1.02, 0.98, 0.05),
            Err(Error::PriceData { index: 1, .. })
        ));
        assert!(fit_model(&[vec![100.0]], 1.02, 0.98, 0.05).is_err());
        assert!(fit_model(&[], 1.02, 0.98, 0.05).is_err());
    }
}
