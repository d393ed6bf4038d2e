//! Exploration kernels and the projection weights they induce.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{is_distribution, Policy, TransitionTable, VALIDATION_TOL};

const POWER_TOL: f64 = 1e-14;
const POWER_MAX_ITERS: usize = 200_000;

/// Strictly positive state weights `d`; `D = diag(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights(Vec<f64>);

impl ProjectionWeights {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if let Some(j) = d.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidArgument(format!("projection weight d[{j}] = {} is not positive", d[j])));
        }
        Ok(ProjectionWeights(d))
    }

    pub fn uniform(n: usize) -> Self {
        ProjectionWeights(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `‖v‖_d = sqrt(Σ d_j v_j²)`.
pub fn d_norm(v: &[f64], d: &ProjectionWeights) -> f64 {
    v.iter().zip(d.as_slice()).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

/// State-to-state exploration transitions `P̂(x'|x)` over `X ∪ Z`, with the
/// exploration policy already folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationKernel {
    n_states: usize,
    n_terminals: usize,
    rows: Vec<Vec<f64>>,
}

impl ExplorationKernel {
    pub fn new(rows: Vec<Vec<f64>>, n_terminals: usize) -> Result<Self> {
        let n_states = rows.len();
        for (x, r) in rows.iter().enumerate() {
            if r.len() != n_states + n_terminals {
                return Err(Error::DimensionMismatch { expected: n_states + n_terminals, actual: r.len() });
            }
            if !is_distribution(r, VALIDATION_TOL) {
                return Err(Error::InvalidArgument(format!("kernel row {x} is not a distribution")));
            }
        }
        Ok(ExplorationKernel { n_states, n_terminals, rows })
    }

    /// `P̂(·|x) = P(·|x, π(x))` from a nominal transition table.
    pub fn from_policy(table: &TransitionTable, policy: &Policy) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..policy.len()).map(|x| table.row(x, policy.action(x)).to_vec()).collect();
        let n_outcomes = rows.first().map_or(0, Vec::len);
        Self::new(rows, n_outcomes.saturating_sub(policy.len()))
    }

    /// Reads one comma-separated row per state over `X ∪ Z`.
    pub fn load_csv(path: impl AsRef<Path>, n_terminals: usize) -> Result<Self> {
        let f = super::FeatureMap::load_csv(path)?;
        let m = f.matrix();
        let rows = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Self::new(rows, n_terminals)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_terminals(&self) -> usize {
        self.n_terminals
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    #[inline]
    pub fn prob(&self, x: usize, next: usize) -> f64 {
        self.rows[x][next]
    }

    fn successors(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[x].iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(j, _)| j)
    }

    fn terminal_mass(&self) -> f64 {
        self.rows.iter().map(|r| r[self.n_states..].iter().sum::<f64>()).fold(0.0, f64::max)
    }

    /// Every state reaches a terminal with positive probability; any such
    /// path can be shortened to at most `|X|` steps.
    pub fn is_proper(&self) -> bool {
        let n = self.n_states;
        let mut reaches = vec![false; n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for x in 0..n {
            if self.rows[x][n..].iter().any(|p| *p > 0.0) {
                reaches[x] = true;
                queue.push_back(x);
            }
        }
        while let Some(y) = queue.pop_front() {
            for x in 0..n {
                if !reaches[x] && self.rows[x][y] > 0.0 {
                    reaches[x] = true;
                    queue.push_back(x);
                }
            }
        }
        reaches.into_iter().all(|r| r)
    }

    fn reachable_from(&self, start: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut seen = vec![false; self.n_states];
        let mut queue: VecDeque<usize> = start.into_iter().collect();
        for &s in &queue {
            seen[s] = true;
        }
        while let Some(x) = queue.pop_front() {
            for j in self.successors(x).filter(|&j| j < self.n_states) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    /// Period of an irreducible chain (gcd of cycle lengths through state 0).
    fn period(&self) -> usize {
        let n = self.n_states;
        let mut level = vec![usize::MAX; n];
        level[0] = 0;
        let mut queue = VecDeque::from([0]);
        let mut g = 0usize;
        while let Some(x) = queue.pop_front() {
            for y in self.successors(x).filter(|&j| j < n) {
                if level[y] == usize::MAX {
                    level[y] = level[x] + 1;
                    queue.push_back(y);
                } else {
                    g = gcd(g, (level[x] + 1).abs_diff(level[y]));
                }
            }
        }
        g
    }

    /// `d_j = lim_t P̂(x_t = j | x_0 = i)` for a terminal-free ergodic chain,
    /// by power iteration from a point mass.
    pub fn stationary_weights(&self) -> Result<ProjectionWeights> {
        let n = self.n_states;
        if n == 0 {
            return Err(Error::InvalidArgument("empty kernel".into()));
        }
        if self.terminal_mass() > 0.0 {
            return Err(Error::NotErgodic("kernel reaches terminal states; use visit weights".into()));
        }
        if self.reachable_from([0]).iter().any(|r| !r) || !self.is_strongly_connected() {
            return Err(Error::NotErgodic("chain is reducible".into()));
        }
        if self.period() != 1 {
            return Err(Error::NotErgodic(format!("chain is periodic with period {}", self.period())));
        }
        let p = DMatrix::from_fn(n, n, |i, j| self.rows[i][j]);
        let pt = p.transpose();
        let mut d = DVector::zeros(n);
        d[0] = 1.0;
        for _ in 0..POWER_MAX_ITERS {
            let next = &pt * &d;
            let change = (&next - &d).lp_norm(1);
            d = next;
            if change <= POWER_TOL {
                let s = d.sum();
                return ProjectionWeights::new(d.iter().map(|x| x / s).collect());
            }
        }
        Err(Error::NotErgodic("power iteration did not converge".into()))
    }

    fn is_strongly_connected(&self) -> bool {
        let n = self.n_states;
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0]);
        while let Some(y) = queue.pop_front() {
            for x in 0..n {
                if !seen[x] && self.rows[x][y] > 0.0 {
                    seen[x] = true;
                    queue.push_back(x);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Expected visit counts `d_j = Σ_t P̂(x_t = j)` from `start`, solving
    /// `d⊤ = s⊤ (I - P̂_X)⁻¹` where `P̂_X` drops the terminal columns.
    pub fn visit_weights(&self, start: &[f64]) -> Result<ProjectionWeights> {
        let n = self.n_states;
        if start.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: start.len() });
        }
        if self.n_terminals == 0 {
            return Err(Error::ImproperKernel("no terminal states".into()));
        }
        if !self.is_proper() {
            return Err(Error::ImproperKernel("some state never reaches a terminal".into()));
        }
        let seen = self.reachable_from((0..n).filter(|&x| start[x] > 0.0));
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::UnreachableState(j));
        }
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - self.rows[j][i]);
        let d = a
            .lu()
            .solve(&DVector::from_column_slice(start))
            .ok_or_else(|| Error::ImproperKernel("I - P̂ is singular".into()))?;
        ProjectionWeights::new(d.iter().copied().collect())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(rows: &[&[f64]], n_terminals: usize) -> ExplorationKernel {
        ExplorationKernel::new(rows.iter().map(|r| r.to_vec()).collect(), n_terminals).unwrap()
    }

    fn assert_weights(d: &ProjectionWeights, expected: &[f64]) {
        for (a, b) in d.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-10, "{:?} vs {expected:?}", d.as_slice());
        }
    }

    #[test]
    fn stationary_examples() {
        let d = kernel(&[&[0.5, 0.5], &[0.5, 0.5]], 0).stationary_weights().unwrap();
        assert_weights(&d, &[0.5, 0.5]);
        let d = kernel(&[&[0.9, 0.1], &[0.1, 0.9]], 0).stationary_weights().unwrap();
        assert_weights(&d, &[0.5, 0.5]);
        let d = kernel(&[&[0.5, 0.5], &[1.0, 0.0]], 0).stationary_weights().unwrap();
        assert_weights(&d, &[2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn stationary_rejects_bad_chains() {
        let periodic = kernel(&[&[0.0, 1.0], &[1.0, 0.0]], 0);
        assert!(matches!(periodic.stationary_weights(), Err(Error::NotErgodic(m)) if m.contains("periodic")));
        let reducible = kernel(&[&[1.0, 0.0], &[0.5, 0.5]], 0);
        assert!(matches!(reducible.stationary_weights(), Err(Error::NotErgodic(_))));
        let absorbing = kernel(&[&[0.5, 0.5]], 1);
        assert!(absorbing.stationary_weights().is_err());
    }

    #[test]
    fn visit_examples() {
        let d = kernel(&[&[0.5, 0.5]], 1).visit_weights(&[1.0]).unwrap();
        assert_weights(&d, &[2.0]);
        let d = kernel(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], 1).visit_weights(&[1.0, 0.0]).unwrap();
        assert_weights(&d, &[1.0, 1.0]);
        let d = kernel(&[&[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0]], 1).visit_weights(&[1.0, 0.0]).unwrap();
        assert_weights(&d, &[2.0, 1.0]);
    }

    #[test]
    fn visit_rejects_improper_and_unreachable() {
        let improper = kernel(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]], 1);
        assert!(!improper.is_proper());
        assert!(matches!(improper.visit_weights(&[1.0, 0.0]), Err(Error::ImproperKernel(_))));
        let k = kernel(&[&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]], 1);
        assert!(matches!(k.visit_weights(&[1.0, 0.0]), Err(Error::UnreachableState(1))));
    }
}
