//! Named toy problems and random instance generators used by tests, the
//! acceptance suite and the CLI's demo inputs.

use rand::Rng;

use crate::linear::{ExplorationKernel, FeatureMap, ProjectionWeights};
use crate::model::{NominalSelector, Policy, RobustMdp, UncertaintySet};

/// Everything needed to run policy evaluation with linear features.
#[derive(Debug, Clone)]
pub struct LinearInstance {
    pub model: RobustMdp,
    pub policy: Policy,
    pub features: FeatureMap,
    pub kernel: ExplorationKernel,
    pub weights: ProjectionWeights,
}

/// Two states with scalar features 1 and 2, both moving to state 2 with
/// certainty and paying 1, explored by a uniform kernel (`d = (½, ½)`).
///
/// The dominance condition needs `γ < ½`, and the projected iteration
/// multiplies the weight by `1.2 γ` per step, so it diverges for `γ > 5/6`.
pub fn divergence_instance(gamma: f64) -> LinearInstance {
    let to_second = UncertaintySet::Singleton(vec![0.0, 1.0]);
    let model = RobustMdp::checked(2, 0, 1, gamma, vec![1.0, 1.0], vec![to_second; 2]).expect("valid model");
    let kernel = ExplorationKernel::new(vec![vec![0.5, 0.5]; 2], 0).expect("valid kernel");
    LinearInstance {
        model,
        policy: Policy::constant(2, 0),
        features: FeatureMap::from_rows(&[vec![1.0], vec![2.0]]).expect("features"),
        weights: kernel.stationary_weights().expect("ergodic"),
        kernel,
    }
}

/// Random distribution with every entry at least `floor / n` before
/// normalization, so all outcomes have positive mass.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Terminal-free MDP with dense singleton transitions and rewards in `[-1, 1]`.
pub fn random_singleton_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> RobustMdp {
    let pairs = n_states * n_actions;
    let reward = (0..pairs).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sets = (0..pairs)
        .map(|_| UncertaintySet::Singleton(random_distribution(rng, n_states, 0.1)))
        .collect();
    RobustMdp::checked(n_states, 0, n_actions, gamma, reward, sets).expect("valid random model")
}

/// Replaces each singleton `p` with the box `[p (1 - spread), p (1 + spread)]`
/// clipped to `[0, 1]`; the nominal `p` stays a member.
pub fn widen_to_boxes(model: &RobustMdp, spread: f64) -> RobustMdp {
    let table = model.nominal_of(NominalSelector::Center).expect("nominal");
    let mut reward = Vec::new();
    let mut sets = Vec::new();
    for x in 0..model.n_states() {
        for u in 0..model.n_actions() {
            let p = table.row(x, u);
            sets.push(UncertaintySet::IntervalBox {
                lo: p.iter().map(|q| (q * (1.0 - spread)).max(0.0)).collect(),
                hi: p.iter().map(|q| (q * (1.0 + spread)).min(1.0)).collect(),
            });
            reward.push(model.reward(x, u));
        }
    }
    RobustMdp::checked(
        model.n_states(),
        model.n_terminals(),
        model.n_actions(),
        model.discount(),
        reward,
        sets,
    )
    .expect("valid widened model")
}

/// Random box MDP whose nominal transitions are dense and positive.
pub fn random_box_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64, spread: f64) -> RobustMdp {
    widen_to_boxes(&random_singleton_mdp(rng, n_states, n_actions, gamma), spread)
}

/// Random full-column-rank features with a bias column.
pub fn random_features<R: Rng>(rng: &mut R, n_states: usize, k: usize) -> FeatureMap {
    loop {
        let rows: Vec<Vec<f64>> = (0..n_states)
            .map(|_| {
                let mut r = vec![1.0];
                r.extend((1..k).map(|_| rng.random_range(-1.0..1.0)));
                r
            })
            .collect();
        let f = FeatureMap::from_rows(&rows).expect("features");
        if f.has_full_column_rank() {
            return f;
        }
    }
}

/// Random evaluation problem satisfying the dominance condition: the kernel
/// is the nominal transition law of a random policy and the sets are boxes of
/// relative half-width `spread`, giving `β = γ (1 + spread)` when that is
/// below one.
pub fn random_dominated_instance<R: Rng>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    k: usize,
    gamma: f64,
    spread: f64,
) -> LinearInstance {
    let base = random_singleton_mdp(rng, n_states, n_actions, gamma);
    let policy = Policy::new((0..n_states).map(|_| rng.random_range(0..n_actions)).collect());
    let table = base.nominal_of(NominalSelector::Center).expect("nominal");
    let kernel = ExplorationKernel::from_policy(&table, &policy).expect("kernel");
    let weights = kernel.stationary_weights().expect("dense kernel is ergodic");
    let model = widen_to_boxes(&base, spread);
    LinearInstance { features: random_features(rng, n_states, k), model, policy, kernel, weights }
}
