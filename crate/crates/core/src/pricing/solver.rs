//! ARPI specialized to optimal stopping: only the continuation value
//! `φ({x, t})⊤w` is learned, the exercise value is the known payoff.

use nalgebra::{DMatrix, DVector};

use super::{sigma_binary_continuation, BernoulliPriceModel, OptionSpec, UncertainUpProbability};
use crate::arpi::{ArpiOptions, OuterDiagnostic};
use crate::error::{Error, Result};
use crate::linalg::GramSolver;
use crate::linear::{RpviOptions, DIVERGENCE_THRESHOLD};

/// One of the two successors of every sample.
#[derive(Debug, Clone)]
struct Successors {
    phi: DMatrix<f64>,
    payoff: Vec<f64>,
    at_horizon: Vec<bool>,
}

impl Successors {
    fn with_capacity(n: usize, k: usize) -> Self {
        Successors { phi: DMatrix::zeros(n, k), payoff: Vec::with_capacity(n), at_horizon: Vec::with_capacity(n) }
    }

    /// Successors where the greedy rule of `w` exercises. Expiry always
    /// pays the payoff.
    fn exercise_mask(&self, w: &DVector<f64>) -> Vec<bool> {
        let cont = &self.phi * w;
        self.payoff.iter().zip(&self.at_horizon).zip(cont.iter()).map(|((g, h), c)| *h || g > c).collect()
    }

    fn values(&self, theta: &DVector<f64>, exercise: &[bool]) -> Vec<f64> {
        let cont = &self.phi * theta;
        exercise.iter().zip(&self.payoff).zip(cont.iter()).map(|((e, g), c)| if *e { *g } else { *c }).collect()
    }
}

/// Continuation samples `{x_t, t}` with `t < T` and their up and down
/// successors, features precomputed.
#[derive(Debug, Clone)]
pub struct PricingSamples {
    phi: DMatrix<f64>,
    up: Successors,
    down: Successors,
}

impl PricingSamples {
    /// `points` are `(x, t)` with `t < T`; `features(x, t, out)` fills a row.
    pub fn build(
        points: &[(f64, usize)],
        prices: &BernoulliPriceModel,
        option: &OptionSpec,
        k: usize,
        features: impl Fn(f64, usize, &mut [f64]),
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("no pricing samples".into()));
        }
        let n = points.len();
        let mut phi = DMatrix::zeros(n, k);
        let mut up = Successors::with_capacity(n, k);
        let mut down = Successors::with_capacity(n, k);
        let mut row = vec![0.0; k];
        for (i, &(x, t)) in points.iter().enumerate() {
            if t >= prices.horizon {
                return Err(Error::InvalidArgument(format!("sample at t = {t} is not before the horizon")));
            }
            features(x, t, &mut row);
            phi.row_mut(i).copy_from_slice(&row);
            for (succ, y) in [(&mut up, x * prices.f_up), (&mut down, x * prices.f_down)] {
                let expiry = t + 1 == prices.horizon;
                if !expiry {
                    features(y, t + 1, &mut row);
                    succ.phi.row_mut(i).copy_from_slice(&row);
                }
                succ.payoff.push(option.payoff(y));
                succ.at_horizon.push(expiry);
            }
        }
        Ok(PricingSamples { phi, up, down })
    }

    /// Every `(x_t, t)` with `t < T` along the given paths.
    pub fn from_paths(
        paths: &[Vec<f64>],
        prices: &BernoulliPriceModel,
        option: &OptionSpec,
        k: usize,
        features: impl Fn(f64, usize, &mut [f64]),
    ) -> Result<Self> {
        let points: Vec<(f64, usize)> =
            paths.iter().flat_map(|p| p.iter().take(prices.horizon).enumerate().map(|(t, &x)| (x, t))).collect();
        Self::build(&points, prices, option, k, features)
    }

    pub fn len(&self) -> usize {
        self.phi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// `Φ⊤Φ / N`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.phi.transpose() * &self.phi / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingSolution {
    pub weights: Vec<f64>,
    pub converged: bool,
    pub cycle: Option<usize>,
    pub diagnostics: Vec<OuterDiagnostic>,
}

/// Runs the stopping-specialized ARPI:
/// `θ_{j+1} = (Φ⊤Φ)⁻¹ γ Φ⊤ σ(ν_up, ν_down)` with
/// `ν = g` where the greedy rule of `w_i` exercises and `φ⊤θ_j` otherwise.
#[derive(Debug)]
pub struct PricingArpi<'a> {
    samples: &'a PricingSamples,
    solver: GramSolver,
    up: UncertainUpProbability,
    discount: f64,
    relaxation: f64,
}

impl<'a> PricingArpi<'a> {
    pub fn new(samples: &'a PricingSamples, up: UncertainUpProbability, discount: f64) -> Result<Self> {
        Self::regularized(samples, up, discount, 0.0)
    }

    /// Adds `ridge · I` to the Gram matrix before factorizing.
    pub fn regularized(samples: &'a PricingSamples, up: UncertainUpProbability, discount: f64, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {ridge}")));
        }
        let mut gram = samples.gram();
        for i in 0..gram.nrows() {
            gram[(i, i)] += ridge;
        }
        Ok(PricingArpi { samples, solver: GramSolver::new(gram)?, up, discount, relaxation: 1.0 })
    }

    /// Inner steps move `θ ← (1 - η) θ + η F(θ)`; the fixed point is unchanged.
    pub fn with_relaxation(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidArgument(format!("relaxation must lie in (0, 1], got {eta}")));
        }
        self.relaxation = eta;
        Ok(self)
    }

    /// One `θ` update for fixed exercise decisions on the successors.
    pub fn update(&self, theta: &DVector<f64>, ex_up: &[bool], ex_down: &[bool]) -> DVector<f64> {
        let vu = self.samples.up.values(theta, ex_up);
        let vd = self.samples.down.values(theta, ex_down);
        let n = self.samples.len();
        let s = DVector::from_iterator(
            n,
            vu.iter().zip(&vd).map(|(&a, &b)| sigma_binary_continuation(a, b, self.up.p_minus, self.up.p_plus).value),
        );
        let rhs = self.samples.phi.tr_mul(&s) * (self.discount / n as f64);
        self.solver.solve(&rhs)
    }

    /// Evaluates the greedy policy of `w` by iterating on `θ` from `w`.
    ///
    /// With the exercise decisions fixed, `Φ⊤σ(ν)` is affine in `θ` on each
    /// region where the sign of `ν_up - ν_down` is constant, so the map is
    /// assembled as `k × k` matrices and only rows whose sign flips are
    /// updated between iterations.
    pub fn inner(&self, w: &DVector<f64>, opts: RpviOptions) -> Result<(DVector<f64>, usize, f64)> {
        let smp = self.samples;
        let (n, k) = (smp.len(), smp.dim());
        let ex_up = smp.up.exercise_mask(w);
        let ex_down = smp.down.exercise_mask(w);
        let (lo, gap) = (self.up.p_minus, self.up.p_plus - self.up.p_minus);

        // ν_up - ν_down = d_i⊤θ + e_i and the `p_minus` branch of σ.
        let keep = |ex: &[bool]| DVector::from_iterator(n, ex.iter().map(|&x| if x { 0.0 } else { 1.0 }));
        let (keep_up, keep_down) = (keep(&ex_up), keep(&ex_down));
        let mut d = DMatrix::zeros(n, k);
        let mut b = DMatrix::zeros(n, k);
        for j in 0..k {
            let fu = smp.up.phi.column(j).component_mul(&keep_up);
            let fd = smp.down.phi.column(j).component_mul(&keep_down);
            d.set_column(j, &(&fu - &fd));
            b.set_column(j, &(fu * lo + fd * (1.0 - lo)));
        }
        let cu = DVector::from_iterator(n, (0..n).map(|i| if ex_up[i] { smp.up.payoff[i] } else { 0.0 }));
        let cd = DVector::from_iterator(n, (0..n).map(|i| if ex_down[i] { smp.down.payoff[i] } else { 0.0 }));
        let e = &cu - &cd;
        let c_lo = cu * lo + cd * (1.0 - lo);
        let is_active: Vec<bool> = (0..n).map(|i| !ex_up[i] || !ex_down[i]).collect();
        let active: Vec<usize> = (0..n).filter(|&i| is_active[i]).collect();
        let m_lo = smp.phi.tr_mul(&b);
        let c_lo = smp.phi.tr_mul(&c_lo);
        let scale = self.discount / n as f64;

        // Rows currently on the `p_plus` branch and their accumulated terms.
        let mut on_plus = vec![false; n];
        let mut m_plus = DMatrix::<f64>::zeros(k, k);
        let mut c_plus = DVector::<f64>::zeros(k);
        if gap > 0.0 {
            for i in 0..n {
                if e[i] < 0.0 && !is_active[i] {
                    on_plus[i] = true;
                    c_plus.axpy(e[i], &smp.phi.row(i).transpose(), 1.0);
                }
            }
        }
        let d_active = DMatrix::from_fn(active.len(), k, |r, j| d[(active[r], j)]);

        let mut theta = w.clone();
        let mut residual = f64::INFINITY;
        for it in 1..=opts.max_iters {
            if gap > 0.0 {
                let delta = &d_active * &theta;
                for (r, &i) in active.iter().enumerate() {
                    let plus = delta[r] + e[i] < 0.0;
                    if plus != on_plus[i] {
                        let sign = if plus { 1.0 } else { -1.0 };
                        let phi_i = smp.phi.row(i).transpose();
                        m_plus.ger(sign, &phi_i, &d.row(i).transpose(), 1.0);
                        c_plus.axpy(sign * e[i], &phi_i, 1.0);
                        on_plus[i] = plus;
                    }
                }
            }
            let mut rhs = &c_lo + &m_lo * &theta;
            if gap > 0.0 {
                rhs += (&c_plus + &m_plus * &theta) * gap;
            }
            let mut next = self.solver.solve(&(rhs * scale));
            if self.relaxation < 1.0 {
                next = next * self.relaxation + &theta * (1.0 - self.relaxation);
            }
            let norm = next.amax();
            if !(norm <= DIVERGENCE_THRESHOLD) {
                return Err(Error::Divergence { iteration: it, norm });
            }
            residual = (&next - &theta).amax();
            theta = next;
            if residual <= opts.tol {
                return Ok((theta, it, residual));
            }
        }
        Err(Error::NonConvergence { iterations: opts.max_iters, residual })
    }

    /// Outer loop from `w_0 = 0` until the exercise decisions on all
    /// successors stop changing.
    pub fn run(&self, opts: ArpiOptions) -> Result<PricingSolution> {
        let masks = |w: &DVector<f64>| {
            let mut m = self.samples.up.exercise_mask(w);
            m.extend(self.samples.down.exercise_mask(w));
            m
        };
        let mut w = DVector::zeros(self.samples.dim());
        let mut history = vec![masks(&w)];
        let mut diagnostics = Vec::new();
        for i in 0..opts.max_outer {
            let (theta, iters, residual) =
                self.inner(&w, opts.inner).map_err(|e| Error::InnerFailure { outer: i + 1, source: Box::new(e) })?;
            let key = masks(&theta);
            let changes = key.iter().zip(history.last().unwrap()).filter(|(a, b)| a != b).count();
            diagnostics.push(OuterDiagnostic { outer: i + 1, inner_iterations: iters, residual, policy_changes: changes });
            w = theta;
            let weights = || w.iter().copied().collect();
            if changes == 0 {
                return Ok(PricingSolution { weights: weights(), converged: true, cycle: None, diagnostics });
            }
            if let Some(j) = history.iter().position(|h| *h == key) {
                let cycle = Some(history.len() - j);
                return Ok(PricingSolution { weights: weights(), converged: false, cycle, diagnostics });
            }
            history.push(key);
        }
        Ok(PricingSolution { weights: w.iter().copied().collect(), converged: false, cycle: None, diagnostics })
    }
}

/// Greedy stopping rule of learned continuation weights: exercise when the
/// payoff beats `φ({x, t})⊤w`, and at expiry whenever the payoff is positive.
pub fn should_exercise(payoff: f64, continuation: f64, t: usize, horizon: usize) -> bool {
    if t >= horizon {
        payoff > 0.0
    } else {
        payoff > continuation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{solve_optimal_exact, DpOptions};
    use crate::pricing::{build_stopping_rmdp, RbfFeatures, StoppingLattice};

    fn lattice_run(up: UncertainUpProbability, discount: f64) -> (f64, f64) {
        let prices = BernoulliPriceModel::new(1.05, 0.95, 0.5, 100.0, 4).unwrap();
        let put = OptionSpec { strike: 100.0 };
        let lat = build_stopping_rmdp(&prices, &up, &put, discount).unwrap();
        let exact = solve_optimal_exact(&lat.model, DpOptions::with_tol(1e-13)).unwrap();

        let nodes = StoppingLattice::index(prices.horizon, 0);
        let points: Vec<(f64, usize)> = (0..nodes).map(|x| (lat.price(x), lat.node(x).0)).collect();
        let node_of = |x: f64, t: usize| {
            let ups = ((x / prices.node_price(100.0, t, 0)).ln() / (1.05f64 / 0.95).ln()).round() as usize;
            StoppingLattice::index(t, ups)
        };
        let samples = PricingSamples::build(&points, &prices, &put, nodes, |x, t, out| {
            out.fill(0.0);
            out[node_of(x, t)] = 1.0;
        })
        .unwrap();
        let opts = ArpiOptions { inner: RpviOptions { tol: 1e-13, ..Default::default() }, max_outer: 30 };
        let sol = PricingArpi::new(&samples, up, discount).unwrap().run(opts).unwrap();
        assert!(sol.converged);
        let root = put.payoff(100.0).max(sol.weights[0]);
        (root, exact.values[0])
    }

    #[test]
    fn tabular_lattice_matches_exact() {
        let up = UncertainUpProbability { p_hat: 0.5, p_minus: 0.4, p_plus: 0.6, alpha: 0.05, n: 100 };
        let (approx, exact) = lattice_run(up, 0.99);
        assert!((approx - exact).abs() < 1e-6, "{approx} vs {exact}");
        let (approx, exact) = lattice_run(up.nominal(), 0.99);
        assert!((approx - exact).abs() < 1e-6, "{approx} vs {exact}");
    }

    #[test]
    fn affine_inner_matches_plain_updates() {
        let prices = BernoulliPriceModel::new(1.03, 0.97, 0.5, 100.0, 6).unwrap();
        let put = OptionSpec { strike: 100.0 };
        let rbf = RbfFeatures::grid(3, 3, (0.8, 1.2), (0.0, 1.0), 100.0, 6.0).unwrap();
        let mut rng = crate::sampling::stream_rng(3, 0);
        let paths: Vec<Vec<f64>> = (0..200).map(|i| prices.simulate(97.0 + (i % 7) as f64, &mut rng)).collect();
        let samples = PricingSamples::from_paths(&paths, &prices, &put, rbf.dim(), |x, t, o| rbf.eval_into(x, t, o)).unwrap();
        let up = UncertainUpProbability { p_hat: 0.5, p_minus: 0.42, p_plus: 0.58, alpha: 0.05, n: 100 };
        let arpi = PricingArpi::new(&samples, up, 0.99).unwrap();
        let w = DVector::from_fn(rbf.dim(), |i, _| (i as f64 * 0.7).sin() * 3.0);
        let opts = RpviOptions { tol: 1e-12, ..Default::default() };
        let (fast, _, _) = arpi.inner(&w, opts).unwrap();

        let (ex_up, ex_down) = (samples.up.exercise_mask(&w), samples.down.exercise_mask(&w));
        let mut theta = w.clone();
        for _ in 0..10_000 {
            let next = arpi.update(&theta, &ex_up, &ex_down);
            let done = (&next - &theta).amax() <= 1e-12;
            theta = next;
            if done {
                break;
            }
        }
        assert!((&fast - &theta).amax() < 1e-9, "{}", (&fast - &theta).amax());
    }

    #[test]
    fn expiry_rule() {
        assert!(should_exercise(1.0, 5.0, 3, 3));
        assert!(!should_exercise(0.0, -1.0, 3, 3));
        assert!(!should_exercise(1.0, 5.0, 2, 3));
        assert!(should_exercise(0.0, -1.0, 2, 3));
    }
}
