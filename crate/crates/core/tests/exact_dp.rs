use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use radp::exact::{evaluate_policy_exact, robust_policy_iteration, solve_optimal_exact, DpOptions};
use radp::instances::{random_box_mdp, random_singleton_mdp};
use radp::model::file::parse_model;
use radp::sigma::sigma_oracle;
use radp::{NominalSelector, Policy, RobustMdp};

fn all_policies(n: usize, na: usize) -> Vec<Policy> {
    (0..na.pow(n as u32))
        .map(|mut code| {
            Policy::new(
                (0..n)
                    .map(|_| {
                        let u = code % na;
                        code /= na;
                        u
                    })
                    .collect(),
            )
        })
        .collect()
}

/// `(I - γ P_π)⁻¹ r_π` by a dense solve.
fn linear_value(model: &RobustMdp, policy: &Policy) -> Vec<f64> {
    let n = model.n_states();
    let table = model.nominal_of(NominalSelector::Center).unwrap();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let p = table.row(i, policy.action(i))[j];
        f64::from(i == j) - model.discount() * p
    });
    let r = DVector::from_vec(model.policy_rewards(policy));
    a.lu().solve(&r).unwrap().iter().copied().collect()
}

/// Robust evaluation by plain iteration with the vertex-enumeration σ.
fn oracle_robust_value(model: &RobustMdp, policy: &Policy) -> Vec<f64> {
    let n = model.n_states();
    let mut v = vec![0.0; n];
    for _ in 0..5000 {
        let ext = model.extend_values(&v);
        v = (0..n)
            .map(|x| {
                let u = policy.action(x);
                model.reward(x, u) + model.discount() * sigma_oracle(&ext, model.set(x, u)).unwrap().value
            })
            .collect();
    }
    v
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn self_loop_value() {
    let m = parse_model(
        r#"
        discount = 0.5
        states = ["s"]
        actions = ["a"]
        [[transition]]
        state = "s"
        action = "a"
        reward = 1.0
        singleton = [1.0]
        "#,
    )
    .unwrap();
    let sol = solve_optimal_exact(&m, DpOptions::default()).unwrap();
    assert!((sol.values[0] - 2.0).abs() < 1e-9);
}

#[test]
fn singleton_models_match_policy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let m = random_singleton_mdp(&mut rng, 4, 2, 0.9);
        let best = all_policies(4, 2).iter().map(|p| linear_value(&m, p)).fold(vec![f64::NEG_INFINITY; 4], |acc, v| {
            acc.iter().zip(&v).map(|(a, b)| a.max(*b)).collect()
        });
        let sol = solve_optimal_exact(&m, DpOptions::with_tol(1e-12)).unwrap();
        assert!(max_diff(&sol.values, &best) < 1e-8);
        assert!(max_diff(&linear_value(&m, &sol.policy), &best) < 1e-8);
    }
}

#[test]
fn robust_evaluation_matches_vertex_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let m = random_box_mdp(&mut rng, 5, 2, 0.8, 0.3);
        let p = Policy::new(vec![0, 1, 0, 1, 1]);
        let v = evaluate_policy_exact(&m, &p, DpOptions::with_tol(1e-13)).unwrap();
        assert!(max_diff(&v, &oracle_robust_value(&m, &p)) < 1e-9);
    }
}

#[test]
fn value_and_policy_iteration_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let m = random_box_mdp(&mut rng, 6, 3, 0.9, 0.2);
        let vi = solve_optimal_exact(&m, DpOptions::with_tol(1e-12)).unwrap();
        let pi = robust_policy_iteration(&m, DpOptions::with_tol(1e-12)).unwrap();
        assert!(max_diff(&vi.values, &pi.values) < 1e-8);
        assert_eq!(vi.policy, pi.policy);
    }
}

#[test]
fn robust_value_is_below_nominal_and_optimal_dominates() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let base = random_singleton_mdp(&mut rng, 5, 2, 0.9);
        let robust = radp::instances::widen_to_boxes(&base, 0.25);
        let opt = solve_optimal_exact(&robust, DpOptions::with_tol(1e-12)).unwrap();
        let nominal = solve_optimal_exact(&base, DpOptions::with_tol(1e-12)).unwrap();
        assert!(opt.values.iter().zip(&nominal.values).all(|(r, n)| *r <= n + 1e-9));
        for p in all_policies(5, 2) {
            let v = evaluate_policy_exact(&robust, &p, DpOptions::with_tol(1e-12)).unwrap();
            assert!(v.iter().zip(&opt.values).all(|(a, b)| *a <= b + 1e-8));
        }
    }
}

#[test]
fn terminal_chain_undiscounted() {
    // a -> b -> done with rewards 1, 2 and no discounting.
    let m = parse_model(
        r#"
        discount = 1.0
        states = ["a", "b"]
        terminals = ["done"]
        actions = ["go"]
        [[transition]]
        state = "a"
        action = "go"
        reward = 1.0
        singleton = { b = 1.0 }
        [[transition]]
        state = "b"
        action = "go"
        reward = 2.0
        singleton = { done = 1.0 }
        "#,
    )
    .unwrap();
    let sol = solve_optimal_exact(&m, DpOptions::default()).unwrap();
    assert!(max_diff(&sol.values, &[3.0, 2.0]) < 1e-12);
}
