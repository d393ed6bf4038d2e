//! Weighted projection onto `span(Φ)` and robust projected value iteration.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{d_norm, FeatureMap, ProjectionWeights};
use crate::error::{Error, Result};
use crate::exact::apply_t_pi;
use crate::linalg::GramSolver;
use crate::model::{Policy, RobustMdp, ValueVector};

/// Weight vectors with `‖w‖_∞` above this are reported as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e9;

pub type WeightVector = Vec<f64>;

/// `Π v = Φ (Φ⊤DΦ)⁻¹ Φ⊤D v` with the Gram matrix factorized once.
#[derive(Debug, Clone)]
pub struct Projector<'a> {
    features: &'a FeatureMap,
    d: &'a ProjectionWeights,
    gram: GramSolver,
}

impl<'a> Projector<'a> {
    pub fn new(features: &'a FeatureMap, d: &'a ProjectionWeights) -> Result<Self> {
        if d.len() != features.n_states() {
            return Err(Error::DimensionMismatch { expected: features.n_states(), actual: d.len() });
        }
        let phi = features.matrix();
        let dphi = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, j| d.as_slice()[i] * phi[(i, j)]);
        let gram = GramSolver::new(phi.transpose() * dphi)?;
        Ok(Projector { features, d, gram })
    }

    /// `Φ⊤D v`.
    pub fn weighted_moments(&self, v: &[f64]) -> DVector<f64> {
        let dv = DVector::from_iterator(v.len(), v.iter().zip(self.d.as_slice()).map(|(x, w)| x * w));
        self.features.matrix().transpose() * dv
    }

    /// Least-squares weights `(Φ⊤DΦ)⁻¹ Φ⊤D v`.
    pub fn weights_of(&self, v: &[f64]) -> DVector<f64> {
        self.gram.solve(&self.weighted_moments(v))
    }

    pub fn project(&self, v: &[f64]) -> ValueVector {
        self.features.values(&self.weights_of(v))
    }

    pub fn features(&self) -> &FeatureMap {
        self.features
    }

    pub fn weights(&self) -> &ProjectionWeights {
        self.d
    }

    pub fn gram(&self) -> &GramSolver {
        &self.gram
    }
}

/// One-shot `Π v`.
pub fn project(v: &[f64], features: &FeatureMap, d: &ProjectionWeights) -> Result<ValueVector> {
    if v.len() != features.n_states() {
        return Err(Error::DimensionMismatch { expected: features.n_states(), actual: v.len() });
    }
    Ok(Projector::new(features, d)?.project(v))
}

/// `Π T^π` for one policy, with `Φ⊤D r^π` cached.
#[derive(Debug, Clone)]
pub struct ProjectedBellman<'a> {
    model: &'a RobustMdp,
    policy: &'a Policy,
    projector: Projector<'a>,
    reward_moments: DVector<f64>,
}

impl<'a> ProjectedBellman<'a> {
    pub fn new(
        model: &'a RobustMdp,
        policy: &'a Policy,
        features: &'a FeatureMap,
        d: &'a ProjectionWeights,
    ) -> Result<Self> {
        policy.check(model)?;
        if features.n_states() != model.n_states() {
            return Err(Error::DimensionMismatch { expected: model.n_states(), actual: features.n_states() });
        }
        let projector = Projector::new(features, d)?;
        let reward_moments = projector.weighted_moments(&model.policy_rewards(policy));
        Ok(ProjectedBellman { model, policy, projector, reward_moments })
    }

    /// `Π T^π v`.
    pub fn apply(&self, v: &[f64]) -> Result<ValueVector> {
        Ok(self.projector.project(&apply_t_pi(self.model, self.policy, v)?))
    }

    /// `σ_π(v)` as a state-indexed vector.
    fn sigma_pi(&self, v: &[f64]) -> Result<Vec<f64>> {
        let v_ext = self.model.extend_values(v);
        (0..self.model.n_states())
            .map(|x| Ok(self.model.sigma(x, self.policy.action(x), &v_ext)?.value))
            .collect()
    }

    /// `w' = (Φ⊤DΦ)⁻¹ (Φ⊤D r + γ Φ⊤D σ_π(Φw))`.
    pub fn step(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.sigma_pi(&self.projector.features().values(w))?;
        let rhs = &self.reward_moments + self.projector.weighted_moments(&s) * self.model.discount();
        Ok(self.projector.gram().solve(&rhs))
    }

    pub fn projector(&self) -> &Projector<'a> {
        &self.projector
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RpviOptions {
    /// Stop once `‖w_{k+1} - w_k‖_∞ <= tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Keep every iterate in [`RpviSolution::trace`].
    pub record_trace: bool,
}

impl Default for RpviOptions {
    fn default() -> Self {
        RpviOptions { tol: 1e-10, max_iters: 100_000, record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpviSolution {
    pub weights: WeightVector,
    pub iterations: usize,
    /// Final `‖w_{k+1} - w_k‖_∞`.
    pub residual: f64,
    /// `w_0, w_1, …` when requested.
    pub trace: Vec<WeightVector>,
}

/// Fixed-point iteration `w_{k+1} = F(w_k)` from `w_0 = 0` shared by the
/// exact and sampled RPVI solvers and the ARPI inner loop.
pub(crate) fn iterate_weights(
    k: usize,
    start: Option<&DVector<f64>>,
    opts: RpviOptions,
    mut step: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
) -> Result<RpviSolution> {
    let mut w = start.cloned().unwrap_or_else(|| DVector::zeros(k));
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(w.iter().copied().collect());
    }
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let next = step(&w)?;
        let norm = next.amax();
        if !(norm <= DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence { iteration: it, norm });
        }
        residual = (&next - &w).amax();
        w = next;
        if opts.record_trace {
            trace.push(w.iter().copied().collect());
        }
        if residual <= opts.tol {
            return Ok(RpviSolution { weights: w.iter().copied().collect(), iterations: it, residual, trace });
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iters, residual })
}

/// Robust projected value iteration with exact `Φ⊤DΦ`, `Φ⊤Dr`, `Φ⊤Dσ_π`.
///
/// Converges when `Π T^π` contracts in `‖·‖_d`; otherwise the iterates may
/// blow up, which is reported as [`Error::Divergence`].
pub fn rpvi_exact(
    model: &RobustMdp,
    policy: &Policy,
    features: &FeatureMap,
    d: &ProjectionWeights,
    opts: RpviOptions,
) -> Result<RpviSolution> {
    let op = ProjectedBellman::new(model, policy, features, d)?;
    iterate_weights(features.dim(), None, opts, |w| op.step(w))
}

/// Largest observed `‖ΠT^π y - ΠT^π z‖_d / ‖y - z‖_d` over random pairs with
/// entries uniform in `[-scale, scale]`.
pub fn contraction_probe<R: Rng>(
    model: &RobustMdp,
    policy: &Policy,
    features: &FeatureMap,
    d: &ProjectionWeights,
    trials: usize,
    scale: f64,
    rng: &mut R,
) -> Result<f64> {
    let op = ProjectedBellman::new(model, policy, features, d)?;
    let n = model.n_states();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        let gap: Vec<f64> = y.iter().zip(&z).map(|(a, b)| a - b).collect();
        let den = d_norm(&gap, d);
        if den == 0.0 {
            continue;
        }
        let (ty, tz) = (op.apply(&y)?, op.apply(&z)?);
        let diff: Vec<f64> = ty.iter().zip(&tz).map(|(a, b)| a - b).collect();
        worst = worst.max(d_norm(&diff, d) / den);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn projection_examples() {
        let ones = FeatureMap::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let d = ProjectionWeights::uniform(2);
        let p = project(&[0.0, 2.0], &ones, &d).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-14 && (p[1] - 1.0).abs() < 1e-14);

        let id = FeatureMap::tabular(3);
        let d3 = ProjectionWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let v = [1.0, -4.0, 2.5];
        let p = project(&v, &id, &d3).unwrap();
        assert!(p.iter().zip(v).all(|(a, b)| (a - b).abs() < 1e-12));

        let f = FeatureMap::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let in_span = [3.0, 1.0, -1.0];
        let p = project(&in_span, &f, &d3).unwrap();
        assert!(p.iter().zip(in_span).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn rank_deficient_features_are_rejected() {
        let f = FeatureMap::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let err = project(&[1.0, 1.0], &f, &ProjectionWeights::uniform(2)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn divergence_instance_blows_up() {
        let inst = instances::divergence_instance(0.99);
        let err = rpvi_exact(&inst.model, &inst.policy, &inst.features, &inst.weights, RpviOptions::default())
            .unwrap_err();
        match err {
            Error::Divergence { iteration, norm } => {
                assert!(iteration < 10_000);
                assert!(norm > 1e9);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
