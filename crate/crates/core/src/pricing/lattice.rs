//! Binomial price model, the put payoff and the finite stopping problem on
//! the recombining price lattice.

use rand::Rng;

use super::UncertainUpProbability;
use crate::arpi::check_pair_assumption;
use crate::error::{Error, Result};
use crate::linear::{check_assumption2, DominanceReport, ExplorationKernel};
use crate::model::{Policy, RobustMdp, TransitionTable, UncertaintySet};
use crate::sampling::Behavior;
use crate::sigma::SigmaResult;

pub const CONTINUE: usize = 0;
pub const EXERCISE: usize = 1;

/// `x_{t+1} = f_up x_t` with probability `p`, else `f_down x_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliPriceModel {
    pub f_up: f64,
    pub f_down: f64,
    pub p: f64,
    pub x0: f64,
    pub horizon: usize,
}

impl BernoulliPriceModel {
    pub fn new(f_up: f64, f_down: f64, p: f64, x0: f64, horizon: usize) -> Result<Self> {
        if !(f_down > 0.0 && f_down < f_up && f_up.is_finite()) {
            return Err(Error::InvalidArgument(format!("need 0 < f_down < f_up, got {f_down}, {f_up}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("up probability must lie in (0, 1), got {p}")));
        }
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial price must be positive, got {x0}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least one step".into()));
        }
        Ok(BernoulliPriceModel { f_up, f_down, p, x0, horizon })
    }

    pub fn with_p(&self, p: f64) -> Self {
        BernoulliPriceModel { p, ..*self }
    }

    /// Prices `x_0, …, x_T` starting from `start`.
    pub fn simulate<R: Rng>(&self, start: f64, rng: &mut R) -> Vec<f64> {
        let mut path = Vec::with_capacity(self.horizon + 1);
        path.push(start);
        for t in 0..self.horizon {
            let f = if rng.random::<f64>() < self.p { self.f_up } else { self.f_down };
            path.push(path[t] * f);
        }
        path
    }

    /// Price at lattice node `(t, ups)` from `start`.
    pub fn node_price(&self, start: f64, t: usize, ups: usize) -> f64 {
        start * self.f_up.powi(ups as i32) * self.f_down.powi((t - ups) as i32)
    }
}

/// American put with payoff `max(0, K - x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionSpec {
    pub strike: f64,
}

impl OptionSpec {
    #[inline]
    pub fn payoff(&self, x: f64) -> f64 {
        (self.strike - x).max(0.0)
    }
}

/// Worst case over `{p v_up + (1 - p) v_down : p ∈ [p_minus, p_plus]}`.
/// The minimizer is the up-probability.
#[inline]
pub fn sigma_binary_continuation(v_up: f64, v_down: f64, p_minus: f64, p_plus: f64) -> SigmaResult {
    let p = if v_up >= v_down { p_minus } else { p_plus };
    SigmaResult { value: p * v_up + (1.0 - p) * v_down, minimizer: vec![p, 1.0 - p] }
}

/// Stopping problem on the nodes `(t, ups)`, `0 <= ups <= t <= T`, with one
/// terminal state. Continuing at `t = T` ends the process with no payoff.
#[derive(Debug, Clone)]
pub struct StoppingLattice {
    pub model: RobustMdp,
    pub prices: BernoulliPriceModel,
    pub up: UncertainUpProbability,
    pub option: OptionSpec,
}

impl StoppingLattice {
    pub fn n_nodes(horizon: usize) -> usize {
        (horizon + 1) * (horizon + 2) / 2
    }

    #[inline]
    pub fn index(t: usize, ups: usize) -> usize {
        t * (t + 1) / 2 + ups
    }

    pub fn node(&self, x: usize) -> (usize, usize) {
        let mut t = 0;
        while Self::index(t + 1, 0) <= x {
            t += 1;
        }
        (t, x - Self::index(t, 0))
    }

    pub fn price(&self, x: usize) -> f64 {
        let (t, ups) = self.node(x);
        self.prices.node_price(self.prices.x0, t, ups)
    }

    /// Continuation transitions under `p_hat`, exercise to the terminal.
    pub fn exploration_dynamics(&self) -> TransitionTable {
        let n = self.model.n_states();
        let mut rows = Vec::with_capacity(2 * n);
        for x in 0..n {
            let (t, ups) = self.node(x);
            let mut cont = vec![0.0; n + 1];
            if t == self.prices.horizon {
                cont[n] = 1.0;
            } else {
                cont[Self::index(t + 1, ups + 1)] = self.up.p_hat;
                cont[Self::index(t + 1, ups)] = 1.0 - self.up.p_hat;
            }
            let mut stop = vec![0.0; n + 1];
            stop[n] = 1.0;
            rows.push(cont);
            rows.push(stop);
        }
        TransitionTable::new(2, rows).expect("lattice rows are distributions")
    }

    /// Kernel of the never-exercise policy under `p_hat`.
    pub fn never_stop_kernel(&self) -> ExplorationKernel {
        ExplorationKernel::from_policy(&self.exploration_dynamics(), &never_stop(self.model.n_states()))
            .expect("valid kernel")
    }
}

pub fn never_stop(n_states: usize) -> Policy {
    Policy::constant(n_states, CONTINUE)
}

/// Builds the lattice stopping problem rooted at `prices.x0`.
pub fn build_stopping_rmdp(
    prices: &BernoulliPriceModel,
    up: &UncertainUpProbability,
    option: &OptionSpec,
    discount: f64,
) -> Result<StoppingLattice> {
    let horizon = prices.horizon;
    let n = StoppingLattice::n_nodes(horizon);
    let mut reward = Vec::with_capacity(2 * n);
    let mut sets = Vec::with_capacity(2 * n);
    let to_terminal = {
        let mut p = vec![0.0; n + 1];
        p[n] = 1.0;
        UncertaintySet::Singleton(p)
    };
    for t in 0..=horizon {
        for ups in 0..=t {
            let x = prices.node_price(prices.x0, t, ups);
            if t == horizon {
                sets.push(to_terminal.clone());
            } else {
                let (iu, id) = (StoppingLattice::index(t + 1, ups + 1), StoppingLattice::index(t + 1, ups));
                let mut lo = vec![0.0; n + 1];
                let mut hi = vec![0.0; n + 1];
                lo[iu] = up.p_minus;
                hi[iu] = up.p_plus;
                lo[id] = 1.0 - up.p_plus;
                hi[id] = 1.0 - up.p_minus;
                sets.push(UncertaintySet::IntervalBox { lo, hi });
            }
            reward.push(0.0);
            sets.push(to_terminal.clone());
            reward.push(option.payoff(x));
        }
    }
    let model = RobustMdp::checked(n, 1, 2, discount, reward, sets)?;
    Ok(StoppingLattice { model, prices: *prices, up: *up, option: *option })
}

/// Result of the stopping-problem dominance check.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingAssumption {
    /// Check for the never-exercise policy.
    pub never_stop: DominanceReport,
    /// Stopping policies enumerated, if requested.
    pub policies_checked: usize,
    /// First enumerated policy for which a per-policy check exceeded the
    /// never-exercise `β`.
    pub counterexample: Option<Policy>,
}

impl StoppingAssumption {
    pub fn holds(&self) -> bool {
        self.never_stop.holds && self.counterexample.is_none()
    }
}

/// Runs the dominance check for the never-exercise policy. With `enumerate`,
/// also checks every deterministic stopping policy `π` on both the state
/// model (kernel `P̂(·|x, π(x))`) and the state-action model (pairs explored
/// as `(x', π(x'))`) against the same `β`.
pub fn check_stopping_assumption(lattice: &StoppingLattice, enumerate: bool) -> Result<StoppingAssumption> {
    let n = lattice.model.n_states();
    let never_stop = check_assumption2(&lattice.model, &never_stop(n), &lattice.never_stop_kernel())?;
    let mut out = StoppingAssumption { never_stop, policies_checked: 0, counterexample: None };
    if !enumerate || !out.never_stop.holds {
        return Ok(out);
    }
    if n > 20 {
        return Err(Error::InvalidArgument(format!("{n} states is too many to enumerate stopping policies")));
    }
    let dynamics = lattice.exploration_dynamics();
    let beta = out.never_stop.beta;
    for mask in 0..1u64 << n {
        let policy = Policy::new((0..n).map(|x| ((mask >> x) & 1) as usize).collect());
        let kernel = ExplorationKernel::from_policy(&dynamics, &policy)?;
        let state = check_assumption2(&lattice.model, &policy, &kernel)?;
        let pairs = check_pair_assumption(&lattice.model, &policy, &dynamics, &Behavior::Fixed(policy.clone()))?;
        out.policies_checked += 1;
        if state.beta > beta + 1e-12 || pairs.beta > beta + 1e-12 {
            out.counterexample = Some(policy);
            break;
        }
    }
    Ok(out)
}
