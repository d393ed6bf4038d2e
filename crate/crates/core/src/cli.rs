use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use radp::arpi::{arpi, ArpiOptions, OuterDiagnostic, StateActionFeatureMap};
use radp::exact::{solve_optimal_exact, DpOptions};
use radp::linear::{check_assumption2, rpvi_exact, ExplorationKernel, FeatureMap, ProjectionWeights, RpviOptions};
use radp::model::file::parse_model;
use radp::pricing::{
    learn_policies, render_svg, run_experiment, write_payoffs_csv, write_summary_csv, ExperimentConfig,
};
use radp::sampling::{
    exhaustive_samples, generate_exploration, generate_trajectories, rpvi_sampled, Behavior, SampleBudget,
    SampledMatrices,
};
use radp::{Error, NominalSelector, Policy, Result, RobustMdp};

#[derive(Debug, Parser)]
#[command(name = "radp", version, about = "Robust approximate dynamic programming")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    pub overwrite: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Robust value iteration on a model file.
    SolveExact(SolveExactArgs),
    /// Robust projected value iteration for a fixed policy.
    Rpvi(RpviArgs),
    /// Reports the projection-weight and exploration-dominance conditions.
    CheckAssumptions(CheckArgs),
    /// Approximate robust policy iteration on a model or a pricing config.
    Arpi(ArpiArgs),
    /// Robust versus nominal American-put exercise policies.
    PriceOptions(PriceArgs),
}

#[derive(Debug, Args)]
pub struct SolveExactArgs {
    pub model: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// CSV with columns state,value,action.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsKind {
    /// Visit weights from a uniform start when the kernel terminates, else stationary.
    Auto,
    Stationary,
    Visit,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    pub model: PathBuf,
    /// State features, one comma-separated row per state.
    #[arg(long)]
    pub features: PathBuf,
    /// Comma-separated action names or indices per state (default: first action).
    #[arg(long)]
    pub policy: Option<String>,
    /// Exploration kernel, one row per state over states then terminals
    /// (default: center of each set under the policy).
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = WeightsKind::Auto)]
    pub weights: WeightsKind,
}

#[derive(Debug, Args)]
pub struct RpviArgs {
    #[command(flatten)]
    pub setup: PolicyArgs,
    /// Estimate the matrices from this many sampled transitions.
    #[arg(long, requires = "seed")]
    pub sampled: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run even when the dominance condition fails.
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    /// CSV with columns state,value.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub setup: PolicyArgs,
}

#[derive(Debug, Args)]
pub struct ArpiArgs {
    /// Model file.
    #[arg(long, conflicts_with = "pricing", required_unless_present = "pricing")]
    pub model: Option<PathBuf>,
    /// State-action features, one row per pair ordered by state then action.
    #[arg(long, conflicts_with_all = ["state_features", "tabular"])]
    pub features: Option<PathBuf>,
    /// State features copied into one block per action.
    #[arg(long, conflicts_with = "tabular")]
    pub state_features: Option<PathBuf>,
    /// One indicator per state-action pair.
    #[arg(long)]
    pub tabular: bool,
    /// Visit every state-action pair once instead of sampling.
    #[arg(long, conflicts_with = "sampled")]
    pub exhaustive: bool,
    /// Sampled transitions under a uniformly random behavior policy.
    #[arg(long, requires = "seed")]
    pub sampled: Option<usize>,
    /// Pricing experiment config (TOML); runs one repetition.
    #[arg(long)]
    pub pricing: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub n_data: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 30)]
    pub max_outer: usize,
    /// CSV of per-outer-iteration diagnostics.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    /// Experiment config (TOML); defaults apply to missing keys.
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Receives summary.csv, payoffs.csv and percentiles.svg.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Override the repetition count.
    #[arg(long)]
    pub repetitions: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let ow = cli.overwrite;
    match cli.command {
        Command::SolveExact(a) => solve_exact_cmd(a, ow),
        Command::Rpvi(a) => rpvi_cmd(a, ow),
        Command::CheckAssumptions(a) => check_cmd(a),
        Command::Arpi(a) => arpi_cmd(a, ow),
        Command::PriceOptions(a) => price_cmd(a, ow),
    }
}

fn read_model(path: &Path) -> Result<(RobustMdp, String)> {
    let text = fs::read_to_string(path)?;
    Ok((parse_model(&text)?, text))
}

/// `#`-prefixed header: command, seed, options, then the embedded input.
fn header(command: &str, seed: Option<u64>, options: &[(&str, String)], input: &str) -> String {
    let mut h = format!("# radp {command}\n");
    match seed {
        Some(s) => writeln!(h, "# seed = {s}").unwrap(),
        None => writeln!(h, "# seed = none").unwrap(),
    }
    for (k, v) in options {
        writeln!(h, "# {k} = {v}").unwrap();
    }
    if !input.is_empty() {
        h.push_str("# ---\n");
        for line in input.lines() {
            writeln!(h, "# {line}").unwrap();
        }
    }
    h
}

fn write_output(path: &Path, overwrite: bool, contents: &[u8]) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::InvalidArgument(format!("{} exists; pass --overwrite to replace it", path.display())));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents)?;
    Ok(())
}

fn csv_bytes(header: &str, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut out = header.as_bytes().to_vec();
    let mut w = csv::Writer::from_writer(&mut out);
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    drop(w);
    Ok(out)
}

fn fmt_values(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.10}")).collect::<Vec<_>>().join(", ")
}

fn action_name(model: &RobustMdp, u: usize) -> String {
    model.action_names.get(u).cloned().unwrap_or_else(|| u.to_string())
}

fn state_name(model: &RobustMdp, x: usize) -> String {
    model.state_names.get(x).cloned().unwrap_or_else(|| x.to_string())
}

fn solve_exact_cmd(a: SolveExactArgs, overwrite: bool) -> Result<()> {
    let (model, text) = read_model(&a.model)?;
    let sol = solve_optimal_exact(&model, DpOptions { tol: a.tol, max_iters: a.max_iters })?;
    println!("V* = [{}]", fmt_values(&sol.values));
    let names: Vec<String> = sol.policy.actions().iter().map(|&u| action_name(&model, u)).collect();
    println!("pi* = [{}]", names.join(", "));
    println!("residual = {:e} after {} iterations", sol.residual, sol.iterations);
    if let Some(out) = a.out {
        let h = header("solve-exact", None, &[("tol", a.tol.to_string())], &text);
        let mut rows = vec![vec!["state".into(), "value".into(), "action".into()]];
        for x in 0..model.n_states() {
            rows.push(vec![state_name(&model, x), sol.values[x].to_string(), names[x].clone()]);
        }
        write_output(&out, overwrite, &csv_bytes(&h, rows)?)?;
    }
    Ok(())
}

fn parse_policy(model: &RobustMdp, list: Option<&str>) -> Result<Policy> {
    let Some(list) = list else {
        return Ok(Policy::constant(model.n_states(), 0));
    };
    let actions = list
        .split(',')
        .map(str::trim)
        .map(|s| {
            model
                .action_names
                .iter()
                .position(|n| n == s)
                .or_else(|| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown action '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let policy = Policy::new(actions);
    policy.check(model)?;
    Ok(policy)
}

struct Setup {
    model: RobustMdp,
    text: String,
    features: FeatureMap,
    policy: Policy,
    kernel: ExplorationKernel,
}

fn load_setup(a: &PolicyArgs) -> Result<Setup> {
    let (model, text) = read_model(&a.model)?;
    let features = FeatureMap::load_csv(&a.features)?;
    if features.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch { expected: model.n_states(), actual: features.n_states() });
    }
    let policy = parse_policy(&model, a.policy.as_deref())?;
    let kernel = match &a.kernel {
        Some(p) => ExplorationKernel::load_csv(p, model.n_terminals())?,
        None => ExplorationKernel::from_policy(&model.nominal_of(NominalSelector::Center)?, &policy)?,
    };
    if kernel.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch { expected: model.n_states(), actual: kernel.n_states() });
    }
    Ok(Setup { model, text, features, policy, kernel })
}

fn projection_weights(kernel: &ExplorationKernel, kind: WeightsKind) -> Result<ProjectionWeights> {
    let uniform = vec![1.0 / kernel.n_states() as f64; kernel.n_states()];
    match kind {
        WeightsKind::Stationary => kernel.stationary_weights(),
        WeightsKind::Visit => kernel.visit_weights(&uniform),
        WeightsKind::Auto if kernel.n_terminals() > 0 && kernel.is_proper() => kernel.visit_weights(&uniform),
        WeightsKind::Auto => kernel.stationary_weights(),
    }
}

fn print_dominance(s: &Setup) -> Result<bool> {
    let r = check_assumption2(&s.model, &s.policy, &s.kernel)?;
    let witness = match r.witness {
        Some((x, y)) => format!("({}, {})", state_name(&s.model, x), state_name(&s.model, y)),
        None => "none".into(),
    };
    println!("dominance: beta = {} witness = {witness} holds = {}", r.beta, r.holds);
    Ok(r.holds)
}

fn rpvi_cmd(a: RpviArgs, overwrite: bool) -> Result<()> {
    let s = load_setup(&a.setup)?;
    if !print_dominance(&s)? && !a.force {
        return Err(Error::InvalidArgument(
            "dominance condition fails, so the iteration may diverge; pass --force to run anyway".into(),
        ));
    }
    let opts = RpviOptions { tol: a.tol, max_iters: a.max_iters, record_trace: false };
    let sol = match a.sampled {
        None => {
            let d = projection_weights(&s.kernel, a.setup.weights)?;
            rpvi_exact(&s.model, &s.policy, &s.features, &d, opts)?
        }
        Some(n) => {
            let seed = a.seed.expect("clap enforces --seed");
            let start = vec![1.0 / s.model.n_states() as f64; s.model.n_states()];
            let traj = generate_trajectories(&s.model, &s.kernel, &s.policy, &start, SampleBudget::Steps(n), seed)?;
            let m = SampledMatrices::estimate(&traj, &s.features, &s.model)?;
            if m.is_rank_deficient() {
                return Err(Error::RankDeficient { condition: m.condition });
            }
            rpvi_sampled(&m, &s.model, &s.features, opts)?
        }
    };
    let values = s.features.values(&nalgebra::DVector::from_column_slice(&sol.weights));
    println!("w = [{}]", fmt_values(&sol.weights));
    println!("V = [{}]", fmt_values(&values));
    println!("residual = {:e} after {} iterations", sol.residual, sol.iterations);
    if let Some(out) = a.out {
        let mut opts = vec![
            ("features", a.setup.features.display().to_string()),
            ("policy", format!("{:?}", s.policy.actions())),
            ("weights", format!("{:?}", a.setup.weights)),
            ("tol", a.tol.to_string()),
            ("force", a.force.to_string()),
        ];
        if let Some(n) = a.sampled {
            opts.push(("sampled", n.to_string()));
        }
        let h = header("rpvi", a.seed, &opts, &s.text);
        let mut rows = vec![vec!["state".into(), "value".into()]];
        for (x, v) in values.iter().enumerate() {
            rows.push(vec![state_name(&s.model, x), v.to_string()]);
        }
        let mut w_rows = vec![vec!["feature".into(), "weight".into()]];
        w_rows.extend(sol.weights.iter().enumerate().map(|(j, w)| vec![j.to_string(), w.to_string()]));
        let mut bytes = csv_bytes(&h, rows)?;
        bytes.extend(csv_bytes("# weights\n", w_rows)?);
        write_output(&out, overwrite, &bytes)?;
    }
    Ok(())
}

fn check_cmd(a: CheckArgs) -> Result<()> {
    let s = load_setup(&a.setup)?;
    println!("kernel proper = {}", s.kernel.is_proper());
    match projection_weights(&s.kernel, a.setup.weights) {
        Ok(d) => println!("projection weights = [{}] (all positive)", fmt_values(d.as_slice())),
        Err(e) => println!("projection weights unavailable: {e}"),
    }
    println!("full column rank = {}", s.features.has_full_column_rank());
    print_dominance(&s)?;
    Ok(())
}

fn diagnostics_rows(prefix: Option<&str>, d: &[OuterDiagnostic]) -> Vec<Vec<String>> {
    d.iter()
        .map(|o| {
            let mut r: Vec<String> = prefix.map(|p| vec![p.to_string()]).unwrap_or_default();
            r.extend([
                o.outer.to_string(),
                o.inner_iterations.to_string(),
                o.residual.to_string(),
                o.policy_changes.to_string(),
            ]);
            r
        })
        .collect()
}

fn diagnostics_header(with_policy: bool) -> Vec<String> {
    let mut h: Vec<String> = if with_policy { vec!["policy".into()] } else { vec![] };
    h.extend(["outer", "inner_iterations", "residual", "policy_changes"].map(String::from));
    h
}

fn arpi_cmd(a: ArpiArgs, overwrite: bool) -> Result<()> {
    if let Some(cfg_path) = &a.pricing {
        return arpi_pricing(&a, cfg_path, overwrite);
    }
    let (model, text) = read_model(a.model.as_ref().expect("clap enforces --model"))?;
    let na = model.n_actions();
    let features = if let Some(p) = &a.features {
        StateActionFeatureMap::load_csv(p, na)?
    } else if let Some(p) = &a.state_features {
        StateActionFeatureMap::per_action(&FeatureMap::load_csv(p)?, na)
    } else if a.tabular {
        StateActionFeatureMap::tabular(model.n_states(), na)
    } else {
        return Err(Error::InvalidArgument("one of --features, --state-features, --tabular is required".into()));
    };
    let traj = match (a.exhaustive, a.sampled) {
        (true, _) => exhaustive_samples(&model),
        (false, Some(n)) => {
            let dynamics = model.nominal_of(NominalSelector::Center)?;
            let start = vec![1.0 / model.n_states() as f64; model.n_states()];
            let seed = a.seed.expect("clap enforces --seed");
            generate_exploration(&model, &dynamics, &Behavior::UniformRandom, &start, SampleBudget::Steps(n), seed)?
        }
        (false, None) => return Err(Error::InvalidArgument("one of --exhaustive, --sampled is required".into())),
    };
    let m = SampledMatrices::estimate(&traj, &features, &model)?;
    let opts = ArpiOptions {
        inner: RpviOptions { tol: a.tol, max_iters: a.max_iters, record_trace: false },
        max_outer: a.max_outer,
    };
    let res = arpi(&m, &model, &features, opts)?;
    let names: Vec<String> = res.policy.actions().iter().map(|&u| action_name(&model, u)).collect();
    println!("policy = [{}]", names.join(", "));
    println!("w = [{}]", fmt_values(&res.weights));
    match (res.converged, res.cycle) {
        (true, _) => println!("converged after {} outer iterations", res.diagnostics.len()),
        (false, Some(c)) => println!("policy cycle of length {c} after {} outer iterations", res.diagnostics.len()),
        (false, None) => println!("no convergence within {} outer iterations", res.diagnostics.len()),
    }
    if let Some(out) = &a.diagnostics {
        let feat = match (&a.features, &a.state_features) {
            (Some(p), _) | (None, Some(p)) => p.display().to_string(),
            _ => "tabular".into(),
        };
        let sampling = if a.exhaustive { "exhaustive".into() } else { format!("{} uniform", a.sampled.unwrap()) };
        let h = header(
            "arpi",
            a.seed,
            &[
                ("features", feat),
                ("sampling", sampling),
                ("tol", a.tol.to_string()),
                ("max_outer", a.max_outer.to_string()),
                ("policy", format!("{:?}", res.policy.actions())),
            ],
            &text,
        );
        let mut rows = vec![diagnostics_header(false)];
        rows.extend(diagnostics_rows(None, &res.diagnostics));
        write_output(out, overwrite, &csv_bytes(&h, rows)?)?;
    }
    outer_status(res.converged, res.cycle.is_some(), &res.diagnostics)
}

/// Exit status of an outer loop that did not settle on a policy.
fn outer_status(converged: bool, cycled: bool, diagnostics: &[OuterDiagnostic]) -> Result<()> {
    if converged {
        Ok(())
    } else if cycled {
        Err(Error::PolicyCycle(diagnostics.len()))
    } else {
        let residual = diagnostics.last().map_or(f64::NAN, |d| d.residual);
        Err(Error::NonConvergence { iterations: diagnostics.len(), residual })
    }
}

fn load_experiment(path: Option<&Path>) -> Result<(ExperimentConfig, String)> {
    let cfg = match path {
        Some(p) => ExperimentConfig::from_toml(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    let text = cfg.to_toml();
    Ok((cfg, text))
}

fn arpi_pricing(a: &ArpiArgs, path: &Path, overwrite: bool) -> Result<()> {
    let seed = a.seed.ok_or_else(|| Error::InvalidArgument("--seed is required with --pricing".into()))?;
    let (cfg, text) = load_experiment(Some(path))?;
    let learned = learn_policies(&cfg, a.n_data, a.alpha, seed, 0)?;
    let up = &learned.up;
    println!("p_hat = {} interval = [{}, {}] from {} moves", up.p_hat, up.p_minus, up.p_plus, up.n);
    for (name, s) in [("robust", &learned.robust), ("nominal", &learned.nominal)] {
        println!("{name}: converged = {} outer = {} w = [{}]", s.converged, s.diagnostics.len(), fmt_values(&s.weights));
    }
    if let Some(out) = &a.diagnostics {
        let h = header("arpi", Some(seed), &[("n_data", a.n_data.to_string()), ("alpha", a.alpha.to_string())], &text);
        let mut rows = vec![diagnostics_header(true)];
        rows.extend(diagnostics_rows(Some("robust"), &learned.robust.diagnostics));
        rows.extend(diagnostics_rows(Some("nominal"), &learned.nominal.diagnostics));
        write_output(out, overwrite, &csv_bytes(&h, rows)?)?;
    }
    for s in [&learned.robust, &learned.nominal] {
        outer_status(s.converged, s.cycle.is_some(), &s.diagnostics)?;
    }
    Ok(())
}

fn price_cmd(a: PriceArgs, overwrite: bool) -> Result<()> {
    let (mut cfg, _) = load_experiment(a.config.as_deref())?;
    if let Some(r) = a.repetitions {
        cfg.runs.repetitions = r;
        cfg.validate()?;
    }
    let text = cfg.to_toml();
    let paths = ["summary.csv", "payoffs.csv", "percentiles.svg"].map(|f| a.out_dir.join(f));
    if !overwrite {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::InvalidArgument(format!("{} exists; pass --overwrite to replace it", p.display())));
        }
    }
    fs::create_dir_all(&a.out_dir)?;
    let results = run_experiment(&cfg, a.seed)?;
    let h = header("price-options", Some(a.seed), &[], &text);

    let mut summary = h.clone().into_bytes();
    write_summary_csv(&mut summary, &results)?;
    let mut payoffs = h.clone().into_bytes();
    write_payoffs_csv(&mut payoffs, &cfg, &results)?;
    let svg = format!("<!--\n{}-->\n{}", h.replace("--", "- -"), render_svg(&results));
    write_output(&paths[0], overwrite, &summary)?;
    write_output(&paths[1], overwrite, &payoffs)?;
    write_output(&paths[2], overwrite, svg.as_bytes())?;

    for s in &results {
        println!(
            "n_data = {} alpha = {}: {:.0}% of percentiles differ significantly",
            s.n_data,
            s.alpha,
            100.0 * s.significant_fraction()
        );
        for r in &s.summary {
            let mark = if r.significant() { "*" } else { "" };
            println!(
                "  p{:<3} robust {:10.4} nominal {:10.4} p = {:.4}{mark}",
                r.percentile, r.robust_mean, r.nominal_mean, r.test.p_value
            );
        }
    }
    Ok(())
}
