//! Robust versus nominal exercise policies for an American put, compared
//! across repetitions on percentiles of the realized payoff.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{
    fit_model, should_exercise, BernoulliPriceModel, OptionSpec, PricingArpi, PricingSamples, PricingSolution, RbfFeatures,
    UncertainUpProbability,
};
use crate::arpi::ArpiOptions;
use crate::error::{Error, Result};
use crate::linear::RpviOptions;
use crate::sampling::stream_rng;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub f_up: f64,
    pub f_down: f64,
    /// True up-probability.
    pub p: f64,
    pub horizon: usize,
    pub strike: f64,
    pub x0: f64,
    /// Start prices of simulated and test paths are `strike + U[-jitter, jitter]`.
    pub jitter: f64,
    pub discount: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            f_up: 1.02,
            f_down: 0.98,
            p: 0.36,
            horizon: 20,
            strike: 100.0,
            x0: 100.0,
            jitter: 2.0,
            discount: 0.97,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunsConfig {
    pub n_data: Vec<usize>,
    pub alpha: Vec<f64>,
    pub n_sim: usize,
    pub n_test: usize,
    pub repetitions: usize,
    /// Percentile grid step, in percent.
    pub percentile_step: usize,
}

impl Default for RunsConfig {
    fn default() -> Self {
        RunsConfig {
            n_data: vec![10, 50, 200],
            alpha: vec![0.05, 0.5],
            n_sim: 2000,
            n_test: 5000,
            repetitions: 200,
            percentile_step: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub grid_x: usize,
    pub grid_t: usize,
    pub x_range: (f64, f64),
    pub t_range: (f64, f64),
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { grid_x: 7, grid_t: 7, x_range: (0.7, 1.3), t_range: (0.0, 1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub max_outer: usize,
    pub ridge: f64,
    pub relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { inner_tol: 1e-8, inner_max_iters: 10_000, max_outer: 30, ridge: 1e-6, relaxation: 0.5 }
    }
}

impl SolverConfig {
    pub fn arpi_options(&self) -> ArpiOptions {
        ArpiOptions {
            inner: RpviOptions { tol: self.inner_tol, max_iters: self.inner_max_iters, record_trace: false },
            max_outer: self.max_outer,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketConfig,
    pub runs: RunsConfig,
    pub features: FeatureConfig,
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.market;
        BernoulliPriceModel::new(m.f_up, m.f_down, m.p, m.x0, m.horizon)
            .map_err(|e| Error::Config(format!("market: {e}")))?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(m.strike > 0.0) || !(m.jitter >= 0.0) || m.jitter >= m.strike {
            return bad("market: need strike > jitter >= 0".into());
        }
        if !(m.discount > 0.0 && m.discount <= 1.0) {
            return bad(format!("market: discount {} outside (0, 1]", m.discount));
        }
        let r = &self.runs;
        if r.n_data.is_empty() || r.n_data.contains(&0) {
            return bad("runs: n_data needs positive entries".into());
        }
        if r.alpha.is_empty() || r.alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("runs: alpha entries must lie in (0, 1)".into());
        }
        if r.n_sim == 0 || r.n_test == 0 || r.repetitions == 0 {
            return bad("runs: n_sim, n_test and repetitions must be positive".into());
        }
        if r.percentile_step == 0 || r.percentile_step >= 100 || 100 % r.percentile_step != 0 {
            return bad("runs: percentile_step must divide 100".into());
        }
        let f = &self.features;
        if f.grid_x < 2 || f.grid_t < 2 {
            return bad("features: grid needs at least two centers per axis".into());
        }
        let s = &self.solver;
        if !(s.inner_tol > 0.0) || s.inner_max_iters == 0 || s.max_outer == 0 {
            return bad("solver: inner_tol, inner_max_iters and max_outer must be positive".into());
        }
        if !(s.ridge >= 0.0) || !(s.relaxation > 0.0 && s.relaxation <= 1.0) {
            return bad("solver: need ridge >= 0 and relaxation in (0, 1]".into());
        }
        Ok(())
    }

    pub fn price_model(&self) -> BernoulliPriceModel {
        let m = &self.market;
        BernoulliPriceModel { f_up: m.f_up, f_down: m.f_down, p: m.p, x0: m.x0, horizon: m.horizon }
    }

    pub fn option(&self) -> OptionSpec {
        OptionSpec { strike: self.market.strike }
    }

    pub fn rbf(&self) -> RbfFeatures {
        let f = &self.features;
        RbfFeatures::grid(f.grid_x, f.grid_t, f.x_range, f.t_range, self.market.x0, self.market.horizon as f64)
            .expect("validated grid")
    }

    /// `step, 2 step, …, 100 - step`.
    pub fn percentiles(&self) -> Vec<usize> {
        let s = self.runs.percentile_step;
        (1..100 / s).map(|i| i * s).collect()
    }
}

/// Nearest-rank percentile of ascending `sorted`.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t_statistic: f64,
    pub p_value: f64,
}

/// Two-sided paired t-test of `a - b`. Constant differences give `p = 1`
/// when they are zero and `p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> PairedTest {
    let n = a.len().min(b.len());
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return PairedTest { mean_diff: mean, t_statistic: f64::NAN, p_value: 1.0 };
    }
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        return if mean == 0.0 {
            PairedTest { mean_diff: 0.0, t_statistic: 0.0, p_value: 1.0 }
        } else {
            PairedTest { mean_diff: mean, t_statistic: mean.signum() * f64::INFINITY, p_value: 0.0 }
        };
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    PairedTest { mean_diff: mean, t_statistic: t, p_value: 2.0 * dist.sf(t.abs()) }
}

/// Outcome of one repetition for one `(n_data, alpha)` setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    pub up: UncertainUpProbability,
    pub robust: Vec<f64>,
    pub nominal: Vec<f64>,
    pub robust_mean: f64,
    pub nominal_mean: f64,
    pub robust_outer: usize,
    pub nominal_outer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PercentileRow {
    pub percentile: usize,
    pub robust_mean: f64,
    pub nominal_mean: f64,
    pub test: PairedTest,
}

impl PercentileRow {
    pub fn significant(&self) -> bool {
        self.test.p_value < 0.05
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingResult {
    pub n_data: usize,
    pub alpha: f64,
    pub repetitions: Vec<Repetition>,
    pub summary: Vec<PercentileRow>,
}

impl SettingResult {
    pub fn row(&self, percentile: usize) -> Option<&PercentileRow> {
        self.summary.iter().find(|r| r.percentile == percentile)
    }

    pub fn significant_fraction(&self) -> f64 {
        self.summary.iter().filter(|r| r.significant()).count() as f64 / self.summary.len() as f64
    }
}

/// Discounted payoffs `γ^τ g(x_τ)` of two continuation-weight vectors on
/// the same test paths.
pub fn evaluate_policies(
    paths: &[Vec<f64>],
    weights: [&[f64]; 2],
    features: &RbfFeatures,
    option: &OptionSpec,
    discount: f64,
) -> [Vec<f64>; 2] {
    let w = weights.map(|w| DVector::from_column_slice(w));
    let mut out = [Vec::with_capacity(paths.len()), Vec::with_capacity(paths.len())];
    let mut phi = DVector::zeros(features.dim());
    for path in paths {
        let horizon = path.len() - 1;
        let mut payoff = [None, None];
        let mut df = 1.0;
        for (t, &x) in path.iter().enumerate() {
            let g = option.payoff(x);
            if t < horizon {
                features.eval_into(x, t, phi.as_mut_slice());
            }
            for j in 0..2 {
                if payoff[j].is_none() {
                    let cont = if t < horizon { phi.dot(&w[j]) } else { 0.0 };
                    if should_exercise(g, cont, t, horizon) {
                        payoff[j] = Some(df * g);
                    }
                }
            }
            if payoff.iter().all(Option::is_some) {
                break;
            }
            df *= discount;
        }
        for j in 0..2 {
            out[j].push(payoff[j].unwrap_or(0.0));
        }
    }
    out
}

fn jittered_paths<R: Rng>(model: &BernoulliPriceModel, centre: f64, jitter: f64, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let start = if jitter > 0.0 { centre + rng.random_range(-jitter..=jitter) } else { centre };
            model.simulate(start, rng)
        })
        .collect()
}

/// Fitted interval and the robust and nominal stopping rules of one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicies {
    pub up: UncertainUpProbability,
    pub robust: PricingSolution,
    pub nominal: PricingSolution,
}

/// Fits the up-probability from `n_data` paths of the true model and runs
/// ARPI on paths simulated under the estimate, once with the interval and
/// once with it collapsed.
pub fn learn_policies(cfg: &ExperimentConfig, n_data: usize, alpha: f64, seed: u64, rep: usize) -> Result<LearnedPolicies> {
    let truth = cfg.price_model();
    let option = cfg.option();
    let m = &cfg.market;
    let base = 3 * rep as u64;

    let data = {
        let mut rng = stream_rng(seed, base);
        (0..n_data).map(|_| truth.simulate(m.x0, &mut rng)).collect::<Vec<_>>()
    };
    let up = fit_model(&data, m.f_up, m.f_down, alpha)?;

    let sim_model = truth.with_p(up.p_hat);
    let sim = jittered_paths(&sim_model, m.strike, m.jitter, cfg.runs.n_sim, &mut stream_rng(seed, base + 1));
    let rbf = cfg.rbf();
    let samples = PricingSamples::from_paths(&sim, &sim_model, &option, rbf.dim(), |x, t, out| rbf.eval_into(x, t, out))?;

    let opts = cfg.solver.arpi_options();
    let s = &cfg.solver;
    let solve = |up| PricingArpi::regularized(&samples, up, m.discount, s.ridge)?.with_relaxation(s.relaxation)?.run(opts);
    let robust = solve(up)?;
    let nominal = solve(up.nominal())?;
    Ok(LearnedPolicies { up, robust, nominal })
}

/// One repetition: fit the up-probability from `n_data` paths of the true
/// model, learn robust and nominal policies from paths simulated under the
/// estimate, and score both on fresh paths of the true model.
pub fn run_repetition(cfg: &ExperimentConfig, n_data: usize, alpha: f64, seed: u64, rep: usize) -> Result<Repetition> {
    let truth = cfg.price_model();
    let option = cfg.option();
    let m = &cfg.market;
    let base = 3 * rep as u64;
    let rbf = cfg.rbf();
    let LearnedPolicies { up, robust, nominal } = learn_policies(cfg, n_data, alpha, seed, rep)?;

    let test = jittered_paths(&truth, m.strike, m.jitter, cfg.runs.n_test, &mut stream_rng(seed, base + 2));
    let [mut r, mut n] = evaluate_policies(&test, [&robust.weights, &nominal.weights], &rbf, &option, m.discount);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (robust_mean, nominal_mean) = (mean(&r), mean(&n));
    r.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let pct = cfg.percentiles();
    Ok(Repetition {
        up,
        robust: pct.iter().map(|&p| percentile_nearest_rank(&r, p as f64)).collect(),
        nominal: pct.iter().map(|&p| percentile_nearest_rank(&n, p as f64)).collect(),
        robust_mean,
        nominal_mean,
        robust_outer: robust.diagnostics.len(),
        nominal_outer: nominal.diagnostics.len(),
    })
}

/// All repetitions of one setting, in parallel, with per-repetition streams.
pub fn run_setting(cfg: &ExperimentConfig, n_data: usize, alpha: f64, seed: u64) -> Result<SettingResult> {
    let repetitions = (0..cfg.runs.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(cfg, n_data, alpha, seed, rep))
        .collect::<Result<Vec<_>>>()?;
    let summary = cfg
        .percentiles()
        .into_iter()
        .enumerate()
        .map(|(i, percentile)| {
            let r: Vec<f64> = repetitions.iter().map(|x| x.robust[i]).collect();
            let n: Vec<f64> = repetitions.iter().map(|x| x.nominal[i]).collect();
            let k = r.len() as f64;
            PercentileRow {
                percentile,
                robust_mean: r.iter().sum::<f64>() / k,
                nominal_mean: n.iter().sum::<f64>() / k,
                test: paired_t_test(&r, &n),
            }
        })
        .collect();
    Ok(SettingResult { n_data, alpha, repetitions, summary })
}

/// Every `(n_data, alpha)` combination of the config.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<SettingResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &n_data in &cfg.runs.n_data {
        for &alpha in &cfg.runs.alpha {
            out.push(run_setting(cfg, n_data, alpha, seed)?);
        }
    }
    Ok(out)
}

/// `n_data,alpha,rep,policy,p_hat,p_minus,p_plus,mean,outer,p<q>…`.
pub fn write_payoffs_csv<W: Write>(out: W, cfg: &ExperimentConfig, results: &[SettingResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["n_data", "alpha", "rep", "policy", "p_hat", "p_minus", "p_plus", "mean", "outer"].map(String::from).into();
    header.extend(cfg.percentiles().iter().map(|p| format!("p{p}")));
    w.write_record(&header)?;
    for s in results {
        for (rep, r) in s.repetitions.iter().enumerate() {
            for (name, mean, outer, values) in [
                ("robust", r.robust_mean, r.robust_outer, &r.robust),
                ("nominal", r.nominal_mean, r.nominal_outer, &r.nominal),
            ] {
                let mut row = vec![
                    s.n_data.to_string(),
                    s.alpha.to_string(),
                    rep.to_string(),
                    name.to_string(),
                    r.up.p_hat.to_string(),
                    r.up.p_minus.to_string(),
                    r.up.p_plus.to_string(),
                    mean.to_string(),
                    outer.to_string(),
                ];
                row.extend(values.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `n_data,alpha,percentile,robust_mean,nominal_mean,t_statistic,p_value,significant`.
pub fn write_summary_csv<W: Write>(out: W, results: &[SettingResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n_data",
        "alpha",
        "percentile",
        "robust_mean",
        "nominal_mean",
        "t_statistic",
        "p_value",
        "significant",
    ])?;
    for s in results {
        for r in &s.summary {
            w.write_record([
                s.n_data.to_string(),
                s.alpha.to_string(),
                r.percentile.to_string(),
                r.robust_mean.to_string(),
                r.nominal_mean.to_string(),
                r.test.t_statistic.to_string(),
                r.test.p_value.to_string(),
                u8::from(r.significant()).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Percentile curves, one panel per setting; significant percentiles are
/// marked with an asterisk.
pub fn render_svg(results: &[SettingResult]) -> String {
    const W: f64 = 360.0;
    const H: f64 = 260.0;
    const PAD: f64 = 40.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        W * results.len() as f64,
        H + 20.0
    );
    for (i, s) in results.iter().enumerate() {
        let ox = i as f64 * W;
        let ymax = s.summary.iter().map(|r| r.robust_mean.max(r.nominal_mean)).fold(1e-9, f64::max);
        let px = |p: usize| ox + PAD + (p as f64 / 100.0) * (W - 2.0 * PAD);
        let py = |v: f64| H - PAD - (v / ymax) * (H - 2.0 * PAD);
        svg += &format!(
            "<text x=\"{}\" y=\"16\">N_data = {}, alpha = {}</text>\n",
            ox + PAD,
            s.n_data,
            s.alpha
        );
        svg += &format!(
            "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"black\"/>\n<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{top}\" stroke=\"black\"/>\n",
            x0 = ox + PAD,
            x1 = ox + W - PAD,
            y = H - PAD,
            top = PAD
        );
        svg += &format!("<text x=\"{}\" y=\"{}\">percentile</text>\n", ox + W / 2.0 - 25.0, H - 10.0);
        svg += &format!("<text x=\"{}\" y=\"{}\">{ymax:.2}</text>\n", ox + 4.0, PAD + 4.0);
        for (colour, pick) in [("#1f77b4", 0usize), ("#d62728", 1)] {
            let pts: Vec<String> = s
                .summary
                .iter()
                .map(|r| {
                    let v = if pick == 0 { r.robust_mean } else { r.nominal_mean };
                    format!("{:.2},{:.2}", px(r.percentile), py(v))
                })
                .collect();
            svg += &format!("<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>\n", pts.join(" "));
        }
        for r in s.summary.iter().filter(|r| r.significant()) {
            svg += &format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">*</text>\n",
                px(r.percentile),
                py(r.robust_mean.max(r.nominal_mean)) - 4.0
            );
        }
        svg += &format!(
            "<text x=\"{x}\" y=\"{y}\" fill=\"#1f77b4\">robust</text><text x=\"{x2}\" y=\"{y}\" fill=\"#d62728\">nominal</text>\n",
            x = ox + PAD + 10.0,
            x2 = ox + PAD + 60.0,
            y = PAD + 10.0
        );
    }
    svg += "</svg>\n";
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&v, 5.0), 1.0);
        assert_eq!(percentile_nearest_rank(&v, 10.0), 1.0);
        assert_eq!(percentile_nearest_rank(&v, 15.0), 2.0);
        assert_eq!(percentile_nearest_rank(&v, 95.0), 10.0);
    }

    #[test]
    fn t_test_edge_cases() {
        let t = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!(t.p_value, 1.0);
        let t = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]);
        assert_eq!(t.p_value, 0.0);
        // d = (1, 2, 3): mean 2, sd 1, t = 2 sqrt(3), two-sided p with 2 dof
        let t = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        assert!((t.t_statistic - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert!((t.p_value - 0.0741799).abs() < 1e-6);
    }

    #[test]
    fn config_defaults_and_errors() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.percentiles().len(), 19);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(matches!(ExperimentConfig::from_toml("[runs]\nalpha = [1.5]"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("[market]\nbogus = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn payoffs_are_bounded() {
        let cfg = ExperimentConfig::default();
        let model = cfg.price_model();
        let mut rng = stream_rng(5, 0);
        let paths = jittered_paths(&model, 100.0, 2.0, 200, &mut rng);
        let rbf = cfg.rbf();
        let w = vec![0.5; rbf.dim()];
        let zero = vec![0.0; rbf.dim()];
        let [a, b] = evaluate_policies(&paths, [&w, &zero], &rbf, &cfg.option(), 0.999);
        assert!(a.iter().chain(&b).all(|v| *v >= 0.0 && *v <= 100.0));
    }
}
