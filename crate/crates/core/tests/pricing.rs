use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radp::exact::{solve_optimal_exact, DpOptions};
use radp::pricing::{
    binomial_cdf, build_stopping_rmdp, check_stopping_assumption, clopper_pearson, run_repetition,
    BernoulliPriceModel, ExperimentConfig, OptionSpec, StoppingLattice, UncertainUpProbability,
};

/// `P(Bin(n, p) <= k)` by summing pmf terms built from log-factorials.
fn cdf_log_factorial(k: u64, n: u64, p: f64) -> f64 {
    let lf = |m: u64| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    (0..=k)
        .map(|i| {
            let log_c = lf(n) - lf(i) - lf(n - i);
            (log_c + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()).exp()
        })
        .sum()
}

/// Same CDF through the pmf recurrence `f(i+1) = f(i) (n-i)/(i+1) p/(1-p)`.
fn cdf_recurrence(k: u64, n: u64, p: f64) -> f64 {
    let mut f = (1.0 - p).powi(n as i32);
    let mut total = f;
    for i in 0..k {
        f *= (n - i) as f64 / (i + 1) as f64 * p / (1.0 - p);
        total += f;
    }
    total
}

#[test]
fn binomial_cdf_matches_both_oracles() {
    for &(n, p) in &[(10u64, 0.3), (25, 0.5), (40, 0.77), (60, 0.05)] {
        for k in 0..n {
            let lib = binomial_cdf(k, n, p);
            assert!((lib - cdf_log_factorial(k, n, p)).abs() < 1e-10, "n={n} k={k}");
            assert!((lib - cdf_recurrence(k, n, p)).abs() < 1e-10, "n={n} k={k}");
        }
    }
}

#[test]
fn clopper_pearson_reference_and_tails() {
    let (lo, hi) = clopper_pearson(5, 10, 0.05).unwrap();
    assert!((lo - 0.1871).abs() < 1e-3 && (hi - 0.8129).abs() < 1e-3);
    for &(k, n, alpha) in &[(5u64, 10u64, 0.05), (3, 40, 0.1), (37, 40, 0.01), (120, 200, 0.05)] {
        let (lo, hi) = clopper_pearson(k, n, alpha).unwrap();
        // P(X >= k | lo) = α/2 and P(X <= k | hi) = α/2
        assert!((1.0 - cdf_recurrence(k - 1, n, lo) - alpha / 2.0).abs() < 1e-8);
        assert!((cdf_log_factorial(k, n, hi) - alpha / 2.0).abs() < 1e-8);
    }
    assert_eq!(clopper_pearson(0, 12, 0.05).unwrap().0, 0.0);
    assert_eq!(clopper_pearson(12, 12, 0.05).unwrap().1, 1.0);
}

#[test]
fn intervals_nest_as_alpha_grows_and_shrink_with_n() {
    let mut prev = (0.0, 1.0);
    for alpha in [0.01, 0.05, 0.1, 0.3, 0.5, 0.9] {
        let (lo, hi) = clopper_pearson(30, 100, alpha).unwrap();
        assert!(lo >= prev.0 && hi <= prev.1);
        assert!(lo <= 0.3 && 0.3 <= hi);
        prev = (lo, hi);
    }
    let width = |n: u64| {
        let (lo, hi) = clopper_pearson(n / 2, n, 0.05).unwrap();
        hi - lo
    };
    let ratio = width(4000) / width(1000);
    assert!((ratio - 0.5).abs() < 0.02, "ratio {ratio}");
}

fn random_lattice(rng: &mut ChaCha8Rng, horizon: usize) -> StoppingLattice {
    let p_hat = rng.random_range(0.3..0.7);
    let half = rng.random_range(0.0..0.05);
    let up = UncertainUpProbability { p_hat, p_minus: p_hat - half, p_plus: p_hat + half, alpha: 0.05, n: 100 };
    let prices = BernoulliPriceModel::new(1.1, 0.9, p_hat, 100.0, horizon).unwrap();
    let option = OptionSpec { strike: rng.random_range(90.0..110.0) };
    build_stopping_rmdp(&prices, &up, &option, rng.random_range(0.5..0.85)).unwrap()
}

#[test]
fn never_stop_dominance_propagates_to_every_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut checked = 0;
    while checked < 20 {
        let lattice = random_lattice(&mut rng, 3);
        let r = check_stopping_assumption(&lattice, true).unwrap();
        if !r.never_stop.holds {
            continue;
        }
        assert_eq!(r.policies_checked, 1 << 10);
        assert!(r.counterexample.is_none());
        checked += 1;
    }
}

#[test]
fn robust_root_value_is_below_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..10 {
        let horizon = rng.random_range(2..8);
        let lattice = random_lattice(&mut rng, horizon);
        let nominal = build_stopping_rmdp(&lattice.prices, &lattice.up.nominal(), &lattice.option, 0.9).unwrap();
        let robust = build_stopping_rmdp(&lattice.prices, &lattice.up, &lattice.option, 0.9).unwrap();
        let vr = solve_optimal_exact(&robust.model, DpOptions::with_tol(1e-12)).unwrap().values;
        let vn = solve_optimal_exact(&nominal.model, DpOptions::with_tol(1e-12)).unwrap().values;
        assert!(vr.iter().zip(&vn).all(|(r, n)| *r <= n + 1e-9));
        // value never drops below the immediate payoff
        for x in 0..robust.model.n_states() {
            assert!(vr[x] >= robust.option.payoff(robust.price(x)) - 1e-9);
        }
    }
}

#[test]
fn robust_root_value_decreases_as_interval_widens() {
    let prices = BernoulliPriceModel::new(1.05, 0.95, 0.5, 100.0, 10).unwrap();
    let option = OptionSpec { strike: 100.0 };
    let mut prev = f64::INFINITY;
    for half in [0.0, 0.02, 0.05, 0.1, 0.2] {
        let up = UncertainUpProbability { p_hat: 0.5, p_minus: 0.5 - half, p_plus: 0.5 + half, alpha: 0.05, n: 1 };
        let lattice = build_stopping_rmdp(&prices, &up, &option, 0.99).unwrap();
        let v = solve_optimal_exact(&lattice.model, DpOptions::with_tol(1e-12)).unwrap().values[0];
        assert!(v <= prev + 1e-12);
        prev = v;
    }
}

#[test]
fn repetition_is_reproducible_and_bounded() {
    let cfg = ExperimentConfig::from_toml("[runs]\nn_sim = 200\nn_test = 300\n").unwrap();
    let a = run_repetition(&cfg, 10, 0.05, 5, 0).unwrap();
    let b = run_repetition(&cfg, 10, 0.05, 5, 0).unwrap();
    assert_eq!(a, b);
    let c = run_repetition(&cfg, 10, 0.05, 5, 1).unwrap();
    assert_ne!(a, c);
    let cap = cfg.market.strike;
    for v in a.robust.iter().chain(&a.nominal) {
        assert!(*v >= 0.0 && *v <= cap);
    }
    assert!(a.robust.windows(2).all(|w| w[0] <= w[1]));
    assert!(a.up.p_minus <= a.up.p_hat && a.up.p_hat <= a.up.p_plus);
}
