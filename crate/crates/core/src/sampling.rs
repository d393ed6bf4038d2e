//! Trajectory generation and sample-based RPVI.
//!
//! The sampled estimators replace the `d`-weighted sums by averages over the
//! visited `(x_t, u_t)`. The worst-case expectation `σ_{P(x_t,u_t)}` is still
//! evaluated with the model, so samples are aggregated per state-action pair
//! and only their feature vectors and visit weights are kept.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, GramSolver, MAX_CONDITION};
use crate::linear::{iterate_weights, ExplorationKernel, FeatureMap, RpviOptions, RpviSolution};
use crate::model::{Policy, RobustMdp, TransitionTable};

/// Longest episode generated before giving up on reaching a terminal.
pub const MAX_EPISODE_LEN: usize = 1_000_000;

/// Pair count above which `σ` evaluations are spread over threads.
const PARALLEL_PAIRS: usize = 512;

/// Independent random stream `index` derived from a master seed.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws an index from a discrete distribution.
pub fn sample_index<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &q) in p.iter().enumerate() {
        if q > 0.0 {
            acc += q;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Where a transition lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Next {
    State(usize),
    Terminal(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    /// Time within the episode.
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: Next,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<Transition>,
    /// Number of episodes the records were drawn from.
    pub episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleBudget {
    /// Total number of transitions.
    Steps(usize),
    /// Complete episodes; requires terminal states.
    Episodes(usize),
}

/// How actions are chosen while exploring.
#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    Fixed(Policy),
    UniformRandom,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Columns `t,x,u,r,x_next,terminal`; `x_next` indexes `Z` when
    /// `terminal` is 1 and `X` otherwise.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "u", "r", "x_next", "terminal"])?;
        for r in &self.records {
            let (next, flag) = match r.next {
                Next::State(j) => (j, 0),
                Next::Terminal(z) => (z, 1),
            };
            w.write_record([
                r.t.to_string(),
                r.state.to_string(),
                r.action.to_string(),
                r.reward.to_string(),
                next.to_string(),
                flag.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Trajectory::write_csv`]; `#` lines are skipped and every
    /// `t = 0` row starts a new episode.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 6 {
                return Err(Error::Config(format!("trajectory row has {} columns, expected 6", row.len())));
            }
            let int = |i: usize| -> Result<usize> {
                row[i].parse().map_err(|e| Error::Config(format!("bad integer '{}': {e}", &row[i])))
            };
            let reward: f64 = row[3].parse().map_err(|e| Error::Config(format!("bad reward '{}': {e}", &row[3])))?;
            let next = match int(5)? {
                0 => Next::State(int(4)?),
                1 => Next::Terminal(int(4)?),
                f => return Err(Error::Config(format!("terminal flag must be 0 or 1, got {f}"))),
            };
            records.push(Transition { t: int(0)?, state: int(1)?, action: int(2)?, reward, next });
        }
        let episodes = records.iter().filter(|r| r.t == 0).count();
        Ok(Trajectory { records, episodes })
    }
}

fn outcome(next: usize, n_states: usize) -> Next {
    if next < n_states {
        Next::State(next)
    } else {
        Next::Terminal(next - n_states)
    }
}

/// Runs one episode (or one long terminal-free run) on its own stream.
fn run_episode(
    model: &RobustMdp,
    start: &[f64],
    max_len: usize,
    rng: &mut ChaCha8Rng,
    step: &(impl Fn(usize, &mut ChaCha8Rng) -> (usize, usize) + Sync),
) -> Result<Vec<Transition>> {
    let n = model.n_states();
    let mut out = Vec::new();
    let mut x = sample_index(rng, start);
    for t in 0..max_len {
        let (u, j) = step(x, rng);
        let next = outcome(j, n);
        out.push(Transition { t, state: x, action: u, reward: model.reward(x, u), next });
        match next {
            Next::State(y) => x = y,
            Next::Terminal(_) => return Ok(out),
        }
    }
    if model.n_terminals() > 0 && max_len == MAX_EPISODE_LEN {
        return Err(Error::NonConvergence { iterations: max_len, residual: f64::NAN });
    }
    Ok(out)
}

fn generate(
    model: &RobustMdp,
    start: &[f64],
    budget: SampleBudget,
    seed: u64,
    step: impl Fn(usize, &mut ChaCha8Rng) -> (usize, usize) + Sync,
) -> Result<Trajectory> {
    if start.len() != model.n_states() {
        return Err(Error::DimensionMismatch { expected: model.n_states(), actual: start.len() });
    }
    let episodic = model.n_terminals() > 0;
    match budget {
        SampleBudget::Steps(n) if !episodic => {
            let records = run_episode(model, start, n, &mut stream_rng(seed, 0), &step)?;
            Ok(Trajectory { records, episodes: 1 })
        }
        SampleBudget::Steps(n) => {
            let mut records = Vec::with_capacity(n);
            let mut episodes = 0;
            while records.len() < n {
                let ep = run_episode(model, start, MAX_EPISODE_LEN, &mut stream_rng(seed, episodes as u64), &step)?;
                episodes += 1;
                let take = ep.len().min(n - records.len());
                records.extend_from_slice(&ep[..take]);
            }
            Ok(Trajectory { records, episodes })
        }
        SampleBudget::Episodes(_) if !episodic => {
            Err(Error::InvalidArgument("episode budgets need terminal states".into()))
        }
        SampleBudget::Episodes(m) => {
            let eps = (0..m)
                .into_par_iter()
                .map(|e| run_episode(model, start, MAX_EPISODE_LEN, &mut stream_rng(seed, e as u64), &step))
                .collect::<Result<Vec<_>>>()?;
            Ok(Trajectory { records: eps.concat(), episodes: m })
        }
    }
}

/// Samples transitions from a state kernel `P̂` while recording `u_t = π(x_t)`
/// and `r_t = r(x_t, u_t)`. Episodes restart from `start` on termination.
pub fn generate_trajectories(
    model: &RobustMdp,
    kernel: &ExplorationKernel,
    policy: &Policy,
    start: &[f64],
    budget: SampleBudget,
    seed: u64,
) -> Result<Trajectory> {
    policy.check(model)?;
    if kernel.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch { expected: model.n_states(), actual: kernel.n_states() });
    }
    generate(model, start, budget, seed, |x, rng| (policy.action(x), sample_index(rng, kernel.row(x))))
}

/// Samples with action-dependent dynamics `P̂(·|x, u)` and a behavior policy.
pub fn generate_exploration(
    model: &RobustMdp,
    dynamics: &TransitionTable,
    behavior: &Behavior,
    start: &[f64],
    budget: SampleBudget,
    seed: u64,
) -> Result<Trajectory> {
    if let Behavior::Fixed(p) = behavior {
        p.check(model)?;
    }
    let na = model.n_actions();
    generate(model, start, budget, seed, |x, rng| {
        let u = match behavior {
            Behavior::Fixed(p) => p.action(x),
            Behavior::UniformRandom => rng.random_range(0..na),
        };
        (u, sample_index(rng, dynamics.row(x, u)))
    })
}

/// One record per state-action pair, as if every pair were visited once.
pub fn exhaustive_samples(model: &RobustMdp) -> Trajectory {
    let records = (0..model.n_states())
        .flat_map(|x| (0..model.n_actions()).map(move |u| (x, u)))
        .map(|(x, u)| Transition { t: 0, state: x, action: u, reward: model.reward(x, u), next: Next::Terminal(0) })
        .collect();
    Trajectory { records, episodes: 1 }
}

/// Features indexed by state-action pairs. State features ignore the action.
pub trait PairFeatures {
    fn dim(&self) -> usize;
    fn pair_row(&self, x: usize, u: usize) -> Vec<f64>;
}

impl PairFeatures for FeatureMap {
    fn dim(&self) -> usize {
        FeatureMap::dim(self)
    }

    fn pair_row(&self, x: usize, _u: usize) -> Vec<f64> {
        self.row(x)
    }
}

/// Visit weight and features of one state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub state: usize,
    pub action: usize,
    /// Visit count divided by the normalizer.
    pub weight: f64,
    pub features: Vec<f64>,
}

/// Sampled `Φ⊤DΦ` and `Φ⊤Dr`, plus what is needed for `Φ⊤Dσ(·)` on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMatrices {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub pairs: Vec<PairSample>,
    pub discount: f64,
    /// Condition estimate of `a_hat`.
    pub condition: f64,
}

impl SampledMatrices {
    /// Averages over a trajectory. Terminal-free data divides by the number
    /// of samples, episodic data by the number of episodes.
    pub fn estimate(traj: &Trajectory, features: &impl PairFeatures, model: &RobustMdp) -> Result<Self> {
        if traj.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        let mut counts: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
        for r in &traj.records {
            if r.state >= model.n_states() || r.action >= model.n_actions() {
                return Err(Error::InvalidArgument(format!("record ({}, {}) outside the model", r.state, r.action)));
            }
            let e = counts.entry((r.state, r.action)).or_insert((0.0, 0.0));
            e.0 += 1.0;
            e.1 += r.reward;
        }
        let norm = if model.n_terminals() > 0 { traj.episodes.max(1) } else { traj.len() } as f64;
        let weighted: Vec<_> = counts.into_iter().map(|((x, u), (c, rs))| (x, u, c / norm, rs / norm)).collect();
        Ok(Self::assemble(&weighted, features, model.discount()))
    }

    /// Exact matrices from explicit pair weights, e.g. `(x, π(x), d_x)`.
    pub fn from_weighted_pairs(
        pairs: &[(usize, usize, f64)],
        features: &impl PairFeatures,
        model: &RobustMdp,
    ) -> Self {
        let weighted: Vec<_> = pairs.iter().map(|&(x, u, w)| (x, u, w, w * model.reward(x, u))).collect();
        Self::assemble(&weighted, features, model.discount())
    }

    fn assemble(weighted: &[(usize, usize, f64, f64)], features: &impl PairFeatures, discount: f64) -> Self {
        let k = features.dim();
        let mut a_hat = DMatrix::zeros(k, k);
        let mut b_hat = DVector::zeros(k);
        let mut pairs = Vec::with_capacity(weighted.len());
        for &(x, u, w, wr) in weighted {
            let phi = DVector::from_vec(features.pair_row(x, u));
            a_hat += &phi * phi.transpose() * w;
            b_hat += &phi * wr;
            pairs.push(PairSample { state: x, action: u, weight: w, features: phi.iter().copied().collect() });
        }
        let condition = condition_number(&a_hat);
        SampledMatrices { a_hat, b_hat, pairs, discount, condition }
    }

    pub fn dim(&self) -> usize {
        self.b_hat.len()
    }

    pub fn is_rank_deficient(&self) -> bool {
        !(self.condition <= MAX_CONDITION)
    }

    pub fn solver(&self) -> Result<GramSolver> {
        GramSolver::new(self.a_hat.clone())
    }

    /// `Σ_t φ(x_t, u_t) σ_{P(x_t, u_t)}(v) / normalizer` for state values `v`.
    pub fn c_hat(&self, model: &RobustMdp, next_values: &[f64]) -> Result<DVector<f64>> {
        let v_ext = model.extend_values(next_values);
        let sigma = |p: &PairSample| Ok(model.sigma(p.state, p.action, &v_ext)?.value * p.weight);
        let s: Vec<f64> = if self.pairs.len() >= PARALLEL_PAIRS {
            self.pairs.par_iter().map(sigma).collect::<Result<_>>()?
        } else {
            self.pairs.iter().map(sigma).collect::<Result<_>>()?
        };
        let mut c = DVector::zeros(self.dim());
        for (p, s) in self.pairs.iter().zip(s) {
            for (ci, fi) in c.iter_mut().zip(&p.features) {
                *ci += fi * s;
            }
        }
        Ok(c)
    }
}

/// Sampled RPVI `w_{k+1} = Â⁻¹ (b̂ + γ ĉ(Φ w_k))` from `w_0 = 0`.
pub fn rpvi_sampled(
    matrices: &SampledMatrices,
    model: &RobustMdp,
    features: &FeatureMap,
    opts: RpviOptions,
) -> Result<RpviSolution> {
    let solver = matrices.solver()?;
    iterate_weights(matrices.dim(), None, opts, |w| {
        let c = matrices.c_hat(model, &features.values(w))?;
        Ok(solver.solve(&(&matrices.b_hat + c * matrices.discount)))
    })
}
