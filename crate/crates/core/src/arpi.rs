//! Approximate robust policy iteration with state-action features.
//!
//! `Q̃(x, u) = φ(x, u)⊤w`. Each outer step evaluates the greedy policy of
//! `w_i` by iterating on `θ` with the sampled normal equations, where the
//! next-state values fed to `σ` are `φ(x', π*_{w_i}(x'))⊤θ`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exact::argmax_first;
use crate::linear::{
    check_assumption2, iterate_weights, DominanceReport, ExplorationKernel, FeatureMap, RpviOptions, RpviSolution,
};
use crate::model::{Policy, RobustMdp, TransitionTable};
use crate::sampling::{Behavior, PairFeatures, SampledMatrices};

/// `φ(x, u) ∈ R^k`, stored as rows indexed by `x * |U| + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionFeatureMap {
    n_actions: usize,
    phi: DMatrix<f64>,
}

impl StateActionFeatureMap {
    pub fn new(n_actions: usize, phi: DMatrix<f64>) -> Result<Self> {
        if n_actions == 0 || phi.nrows() % n_actions != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows do not cover {n_actions} actions per state",
                phi.nrows()
            )));
        }
        Ok(StateActionFeatureMap { n_actions, phi })
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        k: usize,
        f: impl Fn(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut phi = DMatrix::zeros(n_states * n_actions, k);
        for x in 0..n_states {
            for u in 0..n_actions {
                let row = f(x, u);
                if row.len() != k {
                    return Err(Error::DimensionMismatch { expected: k, actual: row.len() });
                }
                for (j, v) in row.into_iter().enumerate() {
                    phi[(x * n_actions + u, j)] = v;
                }
            }
        }
        Self::new(n_actions, phi)
    }

    /// One indicator per state-action pair.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        StateActionFeatureMap { n_actions, phi: DMatrix::identity(n, n) }
    }

    /// `φ(x, u) = e_u ⊗ ψ(x)`: a separate copy of the state features per action.
    pub fn per_action(state: &FeatureMap, n_actions: usize) -> Self {
        let k = state.dim();
        let m = state.matrix();
        let phi = DMatrix::from_fn(state.n_states() * n_actions, k * n_actions, |i, j| {
            let (x, u) = (i / n_actions, i % n_actions);
            if j / k == u {
                m[(x, j % k)]
            } else {
                0.0
            }
        });
        StateActionFeatureMap { n_actions, phi }
    }

    /// One row per `(x, u)` in `x`-major order.
    pub fn load_csv(path: impl AsRef<Path>, n_actions: usize) -> Result<Self> {
        Self::new(n_actions, FeatureMap::load_csv(path)?.matrix().clone())
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn row(&self, x: usize, u: usize) -> Vec<f64> {
        self.phi.row(x * self.n_actions + u).iter().copied().collect()
    }

    pub fn q_value(&self, x: usize, u: usize, w: &[f64]) -> f64 {
        self.phi.row(x * self.n_actions + u).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// `φ(x, π(x))⊤θ` for every state.
    pub fn policy_values(&self, policy: &Policy, theta: &[f64]) -> Vec<f64> {
        (0..self.n_states()).map(|x| self.q_value(x, policy.action(x), theta)).collect()
    }
}

impl PairFeatures for StateActionFeatureMap {
    fn dim(&self) -> usize {
        StateActionFeatureMap::dim(self)
    }

    fn pair_row(&self, x: usize, u: usize) -> Vec<f64> {
        self.row(x, u)
    }
}

/// `π*_w(x) = argmax_u φ(x, u)⊤w`, ties to the lowest action.
pub fn greedy_policy(w: &[f64], features: &StateActionFeatureMap) -> Policy {
    let mut q = vec![0.0; features.n_actions()];
    Policy::new(
        (0..features.n_states())
            .map(|x| {
                for (u, qu) in q.iter_mut().enumerate() {
                    *qu = features.q_value(x, u, w);
                }
                argmax_first(&q)
            })
            .collect(),
    )
}

/// Evaluates the greedy policy of `w_i` by iterating
/// `θ_{j+1} = Â⁻¹ (b̂ + γ ĉ(Φ*_{w_i} θ_j))`, starting from `theta0` or `w_i`.
pub fn arpi_inner(
    matrices: &SampledMatrices,
    model: &RobustMdp,
    features: &StateActionFeatureMap,
    w_i: &[f64],
    theta0: Option<&[f64]>,
    opts: RpviOptions,
) -> Result<RpviSolution> {
    let solver = matrices.solver()?;
    let greedy = greedy_policy(w_i, features);
    let start = DVector::from_column_slice(theta0.unwrap_or(w_i));
    iterate_weights(features.dim(), Some(&start), opts, |theta| {
        let next = features.policy_values(&greedy, theta.as_slice());
        let c = matrices.c_hat(model, &next)?;
        Ok(solver.solve(&(&matrices.b_hat + c * matrices.discount)))
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ArpiOptions {
    pub inner: RpviOptions,
    pub max_outer: usize,
}

impl Default for ArpiOptions {
    fn default() -> Self {
        ArpiOptions { inner: RpviOptions::default(), max_outer: 30 }
    }
}

/// One row of the per-iteration report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterDiagnostic {
    /// `i + 1` for the step producing `w_{i+1}`.
    pub outer: usize,
    pub inner_iterations: usize,
    pub residual: f64,
    /// Sampled states where the greedy actions of `w_i` and `w_{i+1}` differ.
    pub policy_changes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArpiResult {
    pub weights: Vec<f64>,
    pub policy: Policy,
    /// Greedy policy stopped changing on the sampled states.
    pub converged: bool,
    /// Length of a detected policy cycle.
    pub cycle: Option<usize>,
    pub diagnostics: Vec<OuterDiagnostic>,
}

/// Outer loop from `w_0 = 0`. Stops when the greedy policy repeats on the
/// sampled states, when an earlier policy recurs (reported in
/// [`ArpiResult::cycle`]), or after `max_outer` steps.
pub fn arpi(
    matrices: &SampledMatrices,
    model: &RobustMdp,
    features: &StateActionFeatureMap,
    opts: ArpiOptions,
) -> Result<ArpiResult> {
    if features.n_states() != model.n_states() || features.n_actions() != model.n_actions() {
        return Err(Error::DimensionMismatch { expected: model.n_states(), actual: features.n_states() });
    }
    let mut sampled: Vec<usize> = matrices.pairs.iter().map(|p| p.state).collect();
    sampled.sort_unstable();
    sampled.dedup();
    let restrict = |p: &Policy| -> Vec<usize> { sampled.iter().map(|&x| p.action(x)).collect() };

    let mut w = vec![0.0; features.dim()];
    let mut policy = greedy_policy(&w, features);
    let mut history = vec![restrict(&policy)];
    let mut diagnostics = Vec::new();
    for i in 0..opts.max_outer {
        let sol = arpi_inner(matrices, model, features, &w, None, opts.inner)
            .map_err(|e| Error::InnerFailure { outer: i + 1, source: Box::new(e) })?;
        let next_policy = greedy_policy(&sol.weights, features);
        let key = restrict(&next_policy);
        let changes = key.iter().zip(history.last().unwrap()).filter(|(a, b)| a != b).count();
        diagnostics.push(OuterDiagnostic {
            outer: i + 1,
            inner_iterations: sol.iterations,
            residual: sol.residual,
            policy_changes: changes,
        });
        w = sol.weights;
        policy = next_policy;
        if changes == 0 {
            return Ok(ArpiResult { weights: w, policy, converged: true, cycle: None, diagnostics });
        }
        if let Some(j) = history.iter().position(|h| *h == key) {
            let cycle = Some(history.len() - j);
            return Ok(ArpiResult { weights: w, policy, converged: false, cycle, diagnostics });
        }
        history.push(key);
    }
    Ok(ArpiResult { weights: w, policy, converged: false, cycle: None, diagnostics })
}

/// Pair-to-pair exploration `P̂((x', u') | (x, u)) = P̂(x'|x, u) μ(u'|x')`.
pub fn pair_exploration_kernel(dynamics: &TransitionTable, behavior: &Behavior) -> Result<ExplorationKernel> {
    let (n, na) = (dynamics.n_states(), dynamics.n_actions());
    let n_terminals = dynamics.row(0, 0).len() - n;
    let mut rows = Vec::with_capacity(n * na);
    for x in 0..n {
        for u in 0..na {
            let p = dynamics.row(x, u);
            let mut row = vec![0.0; n * na + n_terminals];
            for y in 0..n {
                match behavior {
                    Behavior::Fixed(pi) => row[y * na + pi.action(y)] = p[y],
                    Behavior::UniformRandom => {
                        for v in 0..na {
                            row[y * na + v] = p[y] / na as f64;
                        }
                    }
                }
            }
            row[n * na..].copy_from_slice(&p[n..]);
            rows.push(row);
        }
    }
    ExplorationKernel::new(rows, n_terminals)
}

/// Dominance check for evaluating `Q^π` on the equivalent state-action model
/// with data collected under `dynamics` and `behavior`.
pub fn check_pair_assumption(
    model: &RobustMdp,
    policy: &Policy,
    dynamics: &TransitionTable,
    behavior: &Behavior,
) -> Result<DominanceReport> {
    let sa = model.state_action_model(policy)?;
    let kernel = pair_exploration_kernel(dynamics, behavior)?;
    check_assumption2(&sa, &Policy::constant(sa.n_states(), 0), &kernel)
}
