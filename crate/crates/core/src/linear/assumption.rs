//! Checker for the exploration-dominance condition
//! `γ P(x'|x, π(x)) <= β P̂(x'|x)` for all members `P` and `x, x' ∈ X`.

use super::ExplorationKernel;
use crate::error::{Error, Result};
use crate::model::{Policy, RobustMdp};

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    /// `beta < 1`.
    pub holds: bool,
    /// Smallest `β` for which the inequality holds; `inf` if some reachable
    /// next state has zero exploration probability.
    pub beta: f64,
    /// `(x, x')` attaining `beta`, if `beta > 0`.
    pub witness: Option<(usize, usize)>,
}

/// `β = max_{x, x' ∈ X} γ sup_P P(x'|x, π(x)) / P̂(x'|x)` with `0/0 = 0` and
/// `c/0 = inf`. Terminal next states are exempt.
///
/// Box sets use `hi[x']` as the supremum.
pub fn check_assumption2(model: &RobustMdp, policy: &Policy, kernel: &ExplorationKernel) -> Result<DominanceReport> {
    policy.check(model)?;
    if kernel.n_states() != model.n_states() || kernel.n_terminals() != model.n_terminals() {
        return Err(Error::DimensionMismatch { expected: model.n_states(), actual: kernel.n_states() });
    }
    let gamma = model.discount();
    let mut beta = 0.0;
    let mut witness = None;
    for x in 0..model.n_states() {
        let set = model.set(x, policy.action(x));
        for next in 0..model.n_states() {
            let ratio = mass_ratio(gamma * set.sup_mass(next), kernel.prob(x, next));
            if ratio > beta {
                beta = ratio;
                witness = Some((x, next));
            }
        }
    }
    Ok(DominanceReport { holds: beta < 1.0, beta, witness })
}

pub(crate) fn mass_ratio(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        0.0
    } else if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UncertaintySet;

    fn two_state(hi: [f64; 2], kernel_rows: [[f64; 2]; 2]) -> (RobustMdp, ExplorationKernel) {
        let lo = [1.0 - hi[1], 1.0 - hi[0]];
        let set = UncertaintySet::IntervalBox { lo: lo.to_vec(), hi: hi.to_vec() };
        let m = RobustMdp::checked(2, 0, 1, 0.9, vec![0.0; 2], vec![set; 2]).unwrap();
        let k = ExplorationKernel::new(kernel_rows.iter().map(|r| r.to_vec()).collect(), 0).unwrap();
        (m, k)
    }

    #[test]
    fn ratio_arithmetic() {
        let (m, k) = two_state([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]]);
        let r = check_assumption2(&m, &Policy::constant(2, 0), &k).unwrap();
        assert!(r.holds);
        assert!((r.beta - 0.9).abs() < 1e-12);

        let (m, k) = two_state([0.6, 0.5], [[0.5, 0.5], [0.5, 0.5]]);
        let r = check_assumption2(&m, &Policy::constant(2, 0), &k).unwrap();
        assert!(!r.holds);
        assert!((r.beta - 1.08).abs() < 1e-12);
        assert_eq!(r.witness, Some((0, 0)));
    }

    #[test]
    fn terminal_transitions_are_exempt() {
        let set = UncertaintySet::Singleton(vec![0.0, 1.0]);
        let m = RobustMdp::checked(1, 1, 1, 0.9, vec![1.0], vec![set]).unwrap();
        let k = ExplorationKernel::new(vec![vec![0.0, 1.0]], 1).unwrap();
        let r = check_assumption2(&m, &Policy::constant(1, 0), &k).unwrap();
        assert_eq!(r.beta, 0.0);
        assert!(r.holds);
        assert_eq!(r.witness, None);
    }

    #[test]
    fn unexplored_transition_is_infinite() {
        let (m, k) = two_state([0.5, 0.5], [[1.0, 0.0], [0.5, 0.5]]);
        let r = check_assumption2(&m, &Policy::constant(2, 0), &k).unwrap();
        assert!(r.beta.is_infinite());
        assert_eq!(r.witness, Some((0, 1)));
    }
}
