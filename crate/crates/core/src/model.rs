//! Robust MDP data model.
//!
//! States, terminals and actions are dense integer indices. Every
//! next-state distribution lives on the outcome space `X ∪ Z`, laid out as the
//! `n_states` non-terminal states followed by the `n_terminals` terminals.
//! Terminals carry no outgoing transitions and have value zero, so value
//! vectors are indexed by `X` only and padded with zeros when a dot product
//! over the outcome space is needed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigma::{self, SigmaResult};

pub mod file;

/// Tolerance for sum-to-one checks when validating model data.
pub const VALIDATION_TOL: f64 = 1e-12;
/// Tolerance for membership checks on distributions produced at runtime.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Values indexed by non-terminal state. Terminal values are implicitly zero.
pub type ValueVector = Vec<f64>;

/// Admissible next-state distributions for one state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UncertaintySet {
    Singleton(Vec<f64>),
    IntervalBox { lo: Vec<f64>, hi: Vec<f64> },
    VertexList(Vec<Vec<f64>>),
}

impl UncertaintySet {
    pub fn variant_name(&self) -> &'static str {
        match self {
            UncertaintySet::Singleton(_) => "Singleton",
            UncertaintySet::IntervalBox { .. } => "IntervalBox",
            UncertaintySet::VertexList(_) => "VertexList",
        }
    }

    /// Length of the outcome vectors, if the set is non-degenerate.
    pub fn support_len(&self) -> Option<usize> {
        match self {
            UncertaintySet::Singleton(p) => Some(p.len()),
            UncertaintySet::IntervalBox { lo, .. } => Some(lo.len()),
            UncertaintySet::VertexList(vs) => vs.first().map(Vec::len),
        }
    }

    /// Worst-case expected value `inf { p·v : p ∈ set }`.
    pub fn sigma(&self, v: &[f64]) -> Result<SigmaResult> {
        match self {
            UncertaintySet::Singleton(p) => sigma::sigma_singleton(v, p),
            UncertaintySet::IntervalBox { lo, hi } => sigma::sigma_interval(v, lo, hi),
            UncertaintySet::VertexList(vs) => sigma::sigma_vertices(v, vs),
        }
    }

    /// Largest probability any member can put on outcome `j`.
    ///
    /// For boxes this is the upper bound `hi[j]`, which may exceed the mass
    /// actually achievable once the sum constraint is taken into account.
    pub fn sup_mass(&self, j: usize) -> f64 {
        match self {
            UncertaintySet::Singleton(p) => p[j],
            UncertaintySet::IntervalBox { hi, .. } => hi[j],
            UncertaintySet::VertexList(vs) => {
                vs.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Membership predicate. For vertex lists only the vertices themselves
    /// are recognised, not interior points of their hull.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        if Some(p.len()) != self.support_len() || !is_distribution(p, tol) {
            return false;
        }
        match self {
            UncertaintySet::Singleton(q) => max_abs_diff(p, q) <= tol,
            UncertaintySet::IntervalBox { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&x, (&l, &h))| x >= l - tol && x <= h + tol),
            UncertaintySet::VertexList(vs) => vs.iter().any(|q| max_abs_diff(p, q) <= tol),
        }
    }

    /// Rule violations of this set in isolation; empty when valid.
    pub fn violations(&self, n_outcomes: usize) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            UncertaintySet::Singleton(p) => {
                check_len(p.len(), n_outcomes, "p", &mut out);
                check_distribution(p, "p", &mut out);
            }
            UncertaintySet::IntervalBox { lo, hi } => {
                check_len(lo.len(), n_outcomes, "lo", &mut out);
                check_len(hi.len(), n_outcomes, "hi", &mut out);
                if lo.len() != hi.len() {
                    return out;
                }
                for (j, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                    if !(l.is_finite() && h.is_finite()) {
                        out.push(format!("non-finite bound at outcome {j}"));
                    } else if l < 0.0 {
                        out.push(format!("lo[{j}] < 0"));
                    } else if h > 1.0 {
                        out.push(format!("hi[{j}] > 1"));
                    } else if l > h {
                        out.push(format!("lo[{j}] > hi[{j}]"));
                    }
                }
                let (sl, sh): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
                if sl > 1.0 + VALIDATION_TOL {
                    out.push("sum(lo) > 1".to_string());
                }
                if sh < 1.0 - VALIDATION_TOL {
                    out.push("sum(hi) < 1".to_string());
                }
            }
            UncertaintySet::VertexList(vs) => {
                if vs.is_empty() {
                    out.push("empty vertex list".to_string());
                }
                for (i, p) in vs.iter().enumerate() {
                    let name = format!("vertex {i}");
                    check_len(p.len(), n_outcomes, &name, &mut out);
                    check_distribution(p, &name, &mut out);
                }
            }
        }
        out
    }
}

fn check_len(len: usize, expected: usize, name: &str, out: &mut Vec<String>) {
    if len != expected {
        out.push(format!("{name} has length {len}, expected {expected}"));
    }
}

fn check_distribution(p: &[f64], name: &str, out: &mut Vec<String>) {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        out.push(format!("{name} has a negative or non-finite entry"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > VALIDATION_TOL {
        out.push(format!("{name} sums to {s}, not 1"));
    }
}

/// Nonnegative entries summing to one within `tol`.
pub fn is_distribution(p: &[f64], tol: f64) -> bool {
    p.iter().all(|x| x.is_finite() && *x >= -tol) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One broken model invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub state: Option<usize>,
    pub action: Option<usize>,
    pub rule: String,
}

impl Violation {
    fn global(rule: impl Into<String>) -> Self {
        Violation { state: None, action: None, rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.state, self.action) {
            (Some(x), Some(u)) => write!(f, "(x={x}, u={u}): {}", self.rule),
            (Some(x), None) => write!(f, "(x={x}): {}", self.rule),
            _ => write!(f, "{}", self.rule),
        }
    }
}

/// Deterministic stationary policy over non-terminal states.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>) -> Self {
        Policy(actions)
    }

    pub fn constant(n_states: usize, action: usize) -> Self {
        Policy(vec![action; n_states])
    }

    #[inline]
    pub fn action(&self, x: usize) -> usize {
        self.0[x]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, model: &RobustMdp) -> Result<()> {
        if self.0.len() != model.n_states() {
            return Err(Error::DimensionMismatch {
                expected: model.n_states(),
                actual: self.0.len(),
            });
        }
        if let Some((x, u)) = self.0.iter().enumerate().find(|(_, &u)| u >= model.n_actions()) {
            return Err(Error::InvalidArgument(format!(
                "policy selects action {u} at state {x}, model has {} actions",
                model.n_actions()
            )));
        }
        Ok(())
    }
}

/// How [`RobustMdp::nominal_of`] collapses an uncertainty set to one member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NominalSelector {
    /// Singleton: `p`. Box: the point `lo + t(hi - lo)` with `t` chosen so the
    /// entries sum to one. Vertex list: the vertex average.
    Center,
    /// The `i`-th vertex of a vertex list (`0` also selects a singleton's `p`).
    Vertex(usize),
}

impl NominalSelector {
    fn name(&self) -> &'static str {
        match self {
            NominalSelector::Center => "center",
            NominalSelector::Vertex(_) => "vertex",
        }
    }

    pub fn select(&self, set: &UncertaintySet) -> Result<Vec<f64>> {
        match (self, set) {
            (NominalSelector::Center, UncertaintySet::Singleton(p))
            | (NominalSelector::Vertex(0), UncertaintySet::Singleton(p)) => Ok(p.clone()),
            (NominalSelector::Center, UncertaintySet::IntervalBox { lo, hi }) => {
                let sl: f64 = lo.iter().sum();
                let sh: f64 = hi.iter().sum();
                let t = if sh > sl { ((1.0 - sl) / (sh - sl)).clamp(0.0, 1.0) } else { 0.0 };
                Ok(lo.iter().zip(hi).map(|(l, h)| l + t * (h - l)).collect())
            }
            (NominalSelector::Center, UncertaintySet::VertexList(vs)) => {
                let first = vs.first().ok_or(Error::EmptyVertexList)?;
                let m = vs.len() as f64;
                let mut p = vec![0.0; first.len()];
                for v in vs {
                    for (a, b) in p.iter_mut().zip(v) {
                        *a += b / m;
                    }
                }
                Ok(p)
            }
            (NominalSelector::Vertex(i), UncertaintySet::VertexList(vs)) => {
                vs.get(*i).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("vertex {i} out of range ({} vertices)", vs.len()))
                })
            }
            _ => Err(Error::SelectorUndefined {
                selector: self.name(),
                variant: set.variant_name(),
            }),
        }
    }
}

/// Next-state distributions for every `(x, u)`, e.g. a nominal model.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    n_actions: usize,
    rows: Vec<Vec<f64>>,
}

impl TransitionTable {
    /// Rows indexed by `x * n_actions + u`.
    pub fn new(n_actions: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if n_actions == 0 || rows.len() % n_actions != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} rows do not form whole states for {n_actions} actions",
                rows.len()
            )));
        }
        if let Some(i) = rows.iter().position(|r| !is_distribution(r, VALIDATION_TOL)) {
            return Err(Error::InvalidArgument(format!("transition row {i} is not a distribution")));
        }
        Ok(TransitionTable { n_actions, rows })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len() / self.n_actions
    }

    pub fn row(&self, x: usize, u: usize) -> &[f64] {
        &self.rows[x * self.n_actions + u]
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// Finite robust MDP `{X, Z, U, P, r, γ}` with rectangular uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustMdp {
    n_states: usize,
    n_terminals: usize,
    n_actions: usize,
    discount: f64,
    reward: Vec<f64>,
    terminal_reward: Vec<f64>,
    sets: Vec<UncertaintySet>,
    pub state_names: Vec<String>,
    pub terminal_names: Vec<String>,
    pub action_names: Vec<String>,
}

impl RobustMdp {
    /// `reward` and `sets` are laid out row-major by state then action.
    /// Only shapes are checked here; see [`RobustMdp::validate`].
    pub fn new(
        n_states: usize,
        n_terminals: usize,
        n_actions: usize,
        discount: f64,
        reward: Vec<f64>,
        sets: Vec<UncertaintySet>,
    ) -> Result<Self> {
        let pairs = n_states * n_actions;
        if reward.len() != pairs {
            return Err(Error::DimensionMismatch { expected: pairs, actual: reward.len() });
        }
        if sets.len() != pairs {
            return Err(Error::DimensionMismatch { expected: pairs, actual: sets.len() });
        }
        Ok(RobustMdp {
            n_states,
            n_terminals,
            n_actions,
            discount,
            reward,
            terminal_reward: vec![0.0; n_terminals],
            sets,
            state_names: (0..n_states).map(|i| format!("x{i}")).collect(),
            terminal_names: (0..n_terminals).map(|i| format!("z{i}")).collect(),
            action_names: (0..n_actions).map(|i| format!("u{i}")).collect(),
        })
    }

    /// Like [`RobustMdp::new`] but rejects models with any violation.
    pub fn checked(
        n_states: usize,
        n_terminals: usize,
        n_actions: usize,
        discount: f64,
        reward: Vec<f64>,
        sets: Vec<UncertaintySet>,
    ) -> Result<Self> {
        let m = Self::new(n_states, n_terminals, n_actions, discount, reward, sets)?;
        m.ensure_valid()?;
        Ok(m)
    }

    pub fn with_terminal_rewards(mut self, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != self.n_terminals {
            return Err(Error::DimensionMismatch { expected: self.n_terminals, actual: rewards.len() });
        }
        self.terminal_reward = rewards;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_terminals(&self) -> usize {
        self.n_terminals
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `|X| + |Z|`, the length of every next-state distribution.
    pub fn n_outcomes(&self) -> usize {
        self.n_states + self.n_terminals
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    #[inline]
    pub fn reward(&self, x: usize, u: usize) -> f64 {
        self.reward[x * self.n_actions + u]
    }

    #[inline]
    pub fn set(&self, x: usize, u: usize) -> &UncertaintySet {
        &self.sets[x * self.n_actions + u]
    }

    /// `r^π`.
    pub fn policy_rewards(&self, policy: &Policy) -> Vec<f64> {
        (0..self.n_states).map(|x| self.reward(x, policy.action(x))).collect()
    }

    /// Pads a state-indexed vector with zeros on the terminal coordinates.
    pub fn extend_values(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_outcomes());
        out.extend_from_slice(v);
        out.resize(self.n_outcomes(), 0.0);
        out
    }

    /// `σ_{P(x,u)} v` with terminal coordinates of `v` treated as zero.
    /// `v_ext` must already be padded (see [`RobustMdp::extend_values`]).
    pub fn sigma(&self, x: usize, u: usize, v_ext: &[f64]) -> Result<SigmaResult> {
        self.set(x, u).sigma(v_ext)
    }

    /// All invariant violations; empty iff the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            out.push(Violation::global(format!("discount {} outside (0, 1]", self.discount)));
        } else if self.discount == 1.0 && self.n_terminals == 0 {
            out.push(Violation::global("discount = 1 requires terminal states"));
        }
        for x in 0..self.n_states {
            for u in 0..self.n_actions {
                if !self.reward(x, u).is_finite() {
                    out.push(Violation { state: Some(x), action: Some(u), rule: "non-finite reward".into() });
                }
                for rule in self.set(x, u).violations(self.n_outcomes()) {
                    out.push(Violation { state: Some(x), action: Some(u), rule });
                }
            }
        }
        for (z, &r) in self.terminal_reward.iter().enumerate() {
            if r != 0.0 {
                out.push(Violation {
                    state: Some(self.n_states + z),
                    action: None,
                    rule: "terminal reward nonzero".into(),
                });
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Collapses every uncertainty set to a single member.
    pub fn nominal_of(&self, selector: NominalSelector) -> Result<TransitionTable> {
        let rows = self.sets.iter().map(|s| selector.select(s)).collect::<Result<Vec<_>>>()?;
        Ok(TransitionTable { n_actions: self.n_actions, rows })
    }

    /// The same model with every set replaced by its nominal member.
    pub fn nominal_model(&self, selector: NominalSelector) -> Result<RobustMdp> {
        let table = self.nominal_of(selector)?;
        let mut m = self.clone();
        m.sets = table.rows.into_iter().map(UncertaintySet::Singleton).collect();
        Ok(m)
    }

    /// Equivalent fixed-policy RMDP on state-action pairs, whose value is
    /// `Q^π`. Pair `(x, u)` becomes state `x * |U| + u` with the single action
    /// 0; its next-state mass on `x'` moves to the pair `(x', π(x'))`.
    pub fn state_action_model(&self, policy: &Policy) -> Result<RobustMdp> {
        policy.check(self)?;
        let na = self.n_actions;
        let n_pairs = self.n_states * na;
        let lift = |p: &[f64]| -> Vec<f64> {
            let mut q = vec![0.0; n_pairs + self.n_terminals];
            for x in 0..self.n_states {
                q[x * na + policy.action(x)] = p[x];
            }
            q[n_pairs..].copy_from_slice(&p[self.n_states..]);
            q
        };
        let sets = self
            .sets
            .iter()
            .map(|s| match s {
                UncertaintySet::Singleton(p) => UncertaintySet::Singleton(lift(p)),
                UncertaintySet::IntervalBox { lo, hi } => {
                    UncertaintySet::IntervalBox { lo: lift(lo), hi: lift(hi) }
                }
                UncertaintySet::VertexList(vs) => {
                    UncertaintySet::VertexList(vs.iter().map(|p| lift(p)).collect())
                }
            })
            .collect();
        let mut m = RobustMdp::new(n_pairs, self.n_terminals, 1, self.discount, self.reward.clone(), sets)?;
        m.terminal_reward = self.terminal_reward.clone();
        m.terminal_names = self.terminal_names.clone();
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_set_model(set: UncertaintySet, n_states: usize, n_terminals: usize) -> RobustMdp {
        let sets = vec![set; n_states];
        RobustMdp::new(n_states, n_terminals, 1, 0.9, vec![0.0; n_states], sets).unwrap()
    }

    #[test]
    fn valid_singleton_has_no_violations() {
        let m = one_set_model(UncertaintySet::Singleton(vec![0.5, 0.5]), 2, 0);
        assert!(m.validate().is_empty());
    }

    #[test]
    fn infeasible_box_is_reported() {
        let set = UncertaintySet::IntervalBox { lo: vec![0.6, 0.6], hi: vec![0.7, 0.7] };
        let m = one_set_model(set, 2, 0);
        let v = m.validate();
        assert!(!v.is_empty());
        assert!(v.iter().all(|v| v.rule == "sum(lo) > 1"));
        assert_eq!(v[0].state, Some(0));
    }

    #[test]
    fn terminal_reward_is_reported() {
        let m = one_set_model(UncertaintySet::Singleton(vec![0.0, 1.0]), 1, 1)
            .with_terminal_rewards(vec![1.0])
            .unwrap();
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "terminal reward nonzero");
    }

    #[test]
    fn undiscounted_without_terminals_is_rejected() {
        let mut m = one_set_model(UncertaintySet::Singleton(vec![1.0]), 1, 0);
        m.discount = 1.0;
        assert_eq!(m.validate().len(), 1);
    }

    #[test]
    fn nominal_selectors() {
        let p = vec![0.25, 0.75];
        assert_eq!(NominalSelector::Center.select(&UncertaintySet::Singleton(p.clone())).unwrap(), p);

        let bx = UncertaintySet::IntervalBox { lo: vec![0.1, 0.2, 0.0], hi: vec![0.6, 0.9, 0.5] };
        let c = NominalSelector::Center.select(&bx).unwrap();
        assert!(bx.contains(&c, 1e-12));

        let vl = UncertaintySet::VertexList(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(NominalSelector::Vertex(0).select(&vl).unwrap(), vec![1.0, 0.0]);
        assert_eq!(NominalSelector::Center.select(&vl).unwrap(), vec![0.5, 0.5]);

        let err = NominalSelector::Vertex(0).select(&bx).unwrap_err();
        assert!(err.to_string().contains("IntervalBox"));
    }

    #[test]
    fn state_action_model_shapes() {
        let sets = vec![
            UncertaintySet::Singleton(vec![0.5, 0.5, 0.0]),
            UncertaintySet::Singleton(vec![0.0, 0.0, 1.0]),
            UncertaintySet::IntervalBox { lo: vec![0.1, 0.1, 0.1], hi: vec![0.8, 0.8, 0.8] },
            UncertaintySet::Singleton(vec![1.0, 0.0, 0.0]),
        ];
        let m = RobustMdp::checked(2, 1, 2, 0.9, vec![1.0, 2.0, 3.0, 4.0], sets).unwrap();
        let sa = m.state_action_model(&Policy::new(vec![1, 0])).unwrap();
        assert_eq!(sa.n_states(), 4);
        assert_eq!(sa.n_actions(), 1);
        assert!(sa.validate().is_empty());
        // mass on x0 moves to (x0, 1) = pair 1, mass on x1 moves to (x1, 0) = pair 2
        assert_eq!(sa.set(0, 0), &UncertaintySet::Singleton(vec![0.0, 0.5, 0.5, 0.0, 0.0]));
        assert_eq!(sa.reward(3, 0), 4.0);
    }
}
