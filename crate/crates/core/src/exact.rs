//! Exact tabular robust dynamic programming.
//!
//! These solvers are the ground truth for the approximate methods: fixed-policy
//! evaluation by iterating `T^π v = r^π + γ σ_π v`, robust value iteration with
//! the sup-over-actions operator, and robust policy iteration.

use crate::error::{Error, Result};
use crate::model::{Policy, RobustMdp, ValueVector};

/// Cap on evaluation sweeps when `γ = 1`, where no geometric bound exists.
pub const UNDISCOUNTED_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, Copy)]
pub struct DpOptions {
    /// Stop once `‖T v - v‖_∞ <= tol`.
    pub tol: f64,
    /// Defaults to [`default_max_iters`].
    pub max_iters: Option<usize>,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions { tol: 1e-10, max_iters: None }
    }
}

impl DpOptions {
    pub fn with_tol(tol: f64) -> Self {
        DpOptions { tol, max_iters: None }
    }

    fn iters_for(&self, model: &RobustMdp) -> usize {
        self.max_iters.unwrap_or_else(|| default_max_iters(model, self.tol))
    }
}

/// `ceil(log(tol (1-γ)) / log γ)` plus a margin covering the reward scale.
pub fn default_max_iters(model: &RobustMdp, tol: f64) -> usize {
    let g = model.discount();
    if g >= 1.0 {
        return UNDISCOUNTED_MAX_ITERS;
    }
    let r_max = (0..model.n_states())
        .flat_map(|x| (0..model.n_actions()).map(move |u| (x, u)))
        .map(|(x, u)| model.reward(x, u).abs())
        .fold(1.0, f64::max);
    let base = ((tol * (1.0 - g)).ln() / g.ln()).ceil();
    let scale = (r_max.ln() / -g.ln()).ceil();
    (base + scale).max(0.0) as usize + 10
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One robust Bellman backup `r(x,u) + γ σ_{P(x,u)}(v)` for every action.
fn q_row(model: &RobustMdp, x: usize, v_ext: &[f64], out: &mut Vec<f64>) -> Result<()> {
    out.clear();
    for u in 0..model.n_actions() {
        let s = model.sigma(x, u, v_ext)?.value;
        out.push(model.reward(x, u) + model.discount() * s);
    }
    Ok(())
}

/// First index of the maximum; ties go to the lowest index.
pub(crate) fn argmax_first(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &val) in q.iter().enumerate().skip(1) {
        if val > q[best] {
            best = i;
        }
    }
    best
}

/// `(T^π v)(x) = r(x, π(x)) + γ σ_{P(x, π(x))}(v)`, terminal values zero.
pub fn apply_t_pi(model: &RobustMdp, policy: &Policy, v: &[f64]) -> Result<ValueVector> {
    policy.check(model)?;
    if v.len() != model.n_states() {
        return Err(Error::DimensionMismatch { expected: model.n_states(), actual: v.len() });
    }
    let v_ext = model.extend_values(v);
    (0..model.n_states())
        .map(|x| {
            let u = policy.action(x);
            Ok(model.reward(x, u) + model.discount() * model.sigma(x, u, &v_ext)?.value)
        })
        .collect()
}

/// Robust optimality backup: values and the greedy policy it induces.
pub fn apply_optimal(model: &RobustMdp, v: &[f64]) -> Result<(ValueVector, Policy)> {
    if v.len() != model.n_states() {
        return Err(Error::DimensionMismatch { expected: model.n_states(), actual: v.len() });
    }
    let v_ext = model.extend_values(v);
    let mut q = Vec::with_capacity(model.n_actions());
    let mut values = Vec::with_capacity(model.n_states());
    let mut actions = Vec::with_capacity(model.n_states());
    for x in 0..model.n_states() {
        q_row(model, x, &v_ext, &mut q)?;
        let u = argmax_first(&q);
        values.push(q[u]);
        actions.push(u);
    }
    Ok((values, Policy::new(actions)))
}

/// Greedy policy with respect to `v`, lowest action index on ties.
pub fn greedy_policy(model: &RobustMdp, v: &[f64]) -> Result<Policy> {
    apply_optimal(model, v).map(|(_, p)| p)
}

/// Robust value of a fixed policy by iterating `T^π` from zero.
pub fn evaluate_policy_exact(model: &RobustMdp, policy: &Policy, opts: DpOptions) -> Result<ValueVector> {
    let max_iters = opts.iters_for(model);
    let mut v = vec![0.0; model.n_states()];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = apply_t_pi(model, policy, &v)?;
        residual = sup_norm_diff(&next, &v);
        v = next;
        if residual <= opts.tol {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence { iterations: max_iters, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub values: ValueVector,
    pub policy: Policy,
    /// Last sup-norm residual of the optimality operator.
    pub residual: f64,
    pub iterations: usize,
}

/// Robust value iteration until the sup-norm residual drops below `tol`.
/// The returned policy is greedy with respect to the returned values.
pub fn solve_optimal_exact(model: &RobustMdp, opts: DpOptions) -> Result<ExactSolution> {
    let max_iters = opts.iters_for(model);
    let mut v = vec![0.0; model.n_states()];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let (next, _) = apply_optimal(model, &v)?;
        residual = sup_norm_diff(&next, &v);
        v = next;
        if residual <= opts.tol {
            let policy = greedy_policy(model, &v)?;
            return Ok(ExactSolution { values: v, policy, residual, iterations: it });
        }
    }
    Err(Error::NonConvergence { iterations: max_iters, residual })
}

/// Robust policy iteration starting from the all-zero-action policy.
///
/// Improvement switches an action only on a strict gain above `1e-12`
/// (relative), so evaluation round-off cannot make the policy oscillate.
/// `iterations` counts improvement steps.
pub fn robust_policy_iteration(model: &RobustMdp, opts: DpOptions) -> Result<ExactSolution> {
    let n = model.n_states();
    let limit = (model.n_actions() as f64).powi(n as i32).min(10_000.0) as usize;
    let mut policy = Policy::constant(n, 0);
    let mut q = Vec::with_capacity(model.n_actions());
    for it in 1..=limit.max(1) {
        let values = evaluate_policy_exact(model, &policy, opts)?;
        let v_ext = model.extend_values(&values);
        let mut next = Vec::with_capacity(n);
        for x in 0..n {
            q_row(model, x, &v_ext, &mut q)?;
            let cur = policy.action(x);
            let best = argmax_first(&q);
            let gain_tol = 1e-12 * (1.0 + q[cur].abs());
            next.push(if q[best] > q[cur] + gain_tol { best } else { cur });
        }
        let next = Policy::new(next);
        if next == policy {
            let (backed_up, _) = apply_optimal(model, &values)?;
            let residual = sup_norm_diff(&backed_up, &values);
            return Ok(ExactSolution { values, policy, residual, iterations: it });
        }
        policy = next;
    }
    Err(Error::PolicyCycle(limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UncertaintySet;

    fn self_loop(reward: f64, gamma: f64) -> RobustMdp {
        RobustMdp::checked(1, 0, 1, gamma, vec![reward], vec![UncertaintySet::Singleton(vec![1.0])]).unwrap()
    }

    /// Stay with probability in [0.6, 0.9], otherwise terminate.
    fn stay_box() -> RobustMdp {
        let set = UncertaintySet::IntervalBox { lo: vec![0.6, 0.1], hi: vec![0.9, 0.4] };
        RobustMdp::checked(1, 1, 1, 0.9, vec![1.0], vec![set]).unwrap()
    }

    #[test]
    fn t_pi_examples() {
        let m = self_loop(1.0, 0.5);
        let pi = Policy::constant(1, 0);
        assert_eq!(apply_t_pi(&m, &pi, &[0.0]).unwrap(), vec![1.0]);
        assert_eq!(apply_t_pi(&m, &pi, &[2.0]).unwrap(), vec![2.0]);

        let m = stay_box();
        let v = 3.0;
        let out = apply_t_pi(&m, &pi, &[v]).unwrap();
        assert!((out[0] - (1.0 + 0.9 * 0.6 * v)).abs() < 1e-14);
    }

    #[test]
    fn evaluation_examples() {
        let pi = Policy::constant(1, 0);
        let v = evaluate_policy_exact(&self_loop(1.0, 0.5), &pi, DpOptions::default()).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-9);

        let v = evaluate_policy_exact(&stay_box(), &pi, DpOptions::default()).unwrap();
        assert!((v[0] - 1.0 / (1.0 - 0.54)).abs() < 1e-9);
    }

    #[test]
    fn non_convergence_is_reported() {
        let pi = Policy::constant(1, 0);
        let opts = DpOptions { tol: 1e-10, max_iters: Some(3) };
        match evaluate_policy_exact(&self_loop(1.0, 0.5), &pi, opts) {
            Err(Error::NonConvergence { iterations: 3, residual }) => assert!(residual > 0.1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn optimal_two_actions() {
        let sets = vec![UncertaintySet::Singleton(vec![1.0]); 2];
        let m = RobustMdp::checked(1, 0, 2, 0.5, vec![0.0, 1.0], sets).unwrap();
        let sol = solve_optimal_exact(&m, DpOptions::default()).unwrap();
        assert!((sol.values[0] - 2.0).abs() < 1e-9);
        assert_eq!(sol.policy.actions(), &[1]);

        let pi = robust_policy_iteration(&m, DpOptions::default()).unwrap();
        assert_eq!(pi.policy, sol.policy);
        assert!(pi.iterations <= 2);
    }

    #[test]
    fn stopping_toy_exercises_now() {
        // state 0: stop for 5, or continue (reward 0) into state 1 which pays 10
        // with probability in [0.2, 0.6] and otherwise terminates with nothing.
        let sets = vec![
            UncertaintySet::IntervalBox { lo: vec![0.0, 0.2, 0.4], hi: vec![0.0, 0.6, 0.8] },
            UncertaintySet::Singleton(vec![0.0, 0.0, 1.0]),
            UncertaintySet::Singleton(vec![0.0, 0.0, 1.0]),
            UncertaintySet::Singleton(vec![0.0, 0.0, 1.0]),
        ];
        let m = RobustMdp::checked(2, 1, 2, 0.95, vec![0.0, 5.0, 10.0, 10.0], sets).unwrap();
        let sol = solve_optimal_exact(&m, DpOptions::default()).unwrap();
        // enumerate both stationary choices at state 0
        let cont = evaluate_policy_exact(&m, &Policy::new(vec![0, 0]), DpOptions::default()).unwrap();
        let stop = evaluate_policy_exact(&m, &Policy::new(vec![1, 0]), DpOptions::default()).unwrap();
        assert!((cont[0] - 0.95 * 0.2 * 10.0).abs() < 1e-9);
        assert_eq!(sol.policy.action(0), 1);
        assert!((sol.values[0] - cont[0].max(stop[0])).abs() < 1e-9);
    }
}
