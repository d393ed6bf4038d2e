//! Small dense helpers around `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Condition number above which a Gram matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Factorized symmetric positive definite matrix, e.g. `Φ⊤DΦ`.
#[derive(Debug, Clone)]
pub struct GramSolver {
    chol: Cholesky<f64, Dyn>,
    condition: f64,
}

impl GramSolver {
    pub fn new(gram: DMatrix<f64>) -> Result<Self> {
        let condition = condition_number(&gram);
        if !(condition <= MAX_CONDITION) {
            return Err(Error::RankDeficient { condition });
        }
        let chol = Cholesky::new(gram).ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
        Ok(GramSolver { chol, condition })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }
}

/// Ratio of extreme singular values; `inf` for singular or empty input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() || m.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}
