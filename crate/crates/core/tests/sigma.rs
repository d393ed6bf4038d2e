use proptest::prelude::*;
use radp::sigma::{sigma_interval, sigma_oracle, sigma_vertices};
use radp::UncertaintySet;

/// Feasible box around a random distribution.
fn feasible_box() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(0.0f64..0.5, n),
            prop::collection::vec(0.0f64..0.5, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
            .prop_map(|(raw, down, up, v)| {
                let s: f64 = raw.iter().sum();
                let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
                let lo = p.iter().zip(&down).map(|(q, d)| (q - d).max(0.0)).collect();
                let hi = p.iter().zip(&up).map(|(q, u)| (q + u).min(1.0)).collect();
                (lo, hi, v)
            })
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn interval_matches_vertex_enumeration((lo, hi, v) in feasible_box()) {
        let fast = sigma_interval(&v, &lo, &hi).unwrap();
        let slow = sigma_oracle(&v, &UncertaintySet::IntervalBox { lo: lo.clone(), hi: hi.clone() }).unwrap();
        prop_assert!((fast.value - slow.value).abs() <= 1e-10);
    }

    #[test]
    fn minimizer_is_feasible_and_attains_value((lo, hi, v) in feasible_box()) {
        let r = sigma_interval(&v, &lo, &hi).unwrap();
        let set = UncertaintySet::IntervalBox { lo, hi };
        prop_assert!(set.contains(&r.minimizer, 1e-9));
        prop_assert!((dot(&r.minimizer, &v) - r.value).abs() <= 1e-12);
    }

    #[test]
    fn bounded_by_extremes((lo, hi, v) in feasible_box()) {
        let r = sigma_interval(&v, &lo, &hi).unwrap();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.value >= min - 1e-9 && r.value <= max + 1e-9);
    }

    #[test]
    fn monotone_in_values((lo, hi, v) in feasible_box(), bump in 0.0f64..5.0, at in 0usize..6) {
        let mut w = v.clone();
        let j = at % w.len();
        w[j] += bump;
        let a = sigma_interval(&v, &lo, &hi).unwrap().value;
        let b = sigma_interval(&w, &lo, &hi).unwrap().value;
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn shift_and_scale((lo, hi, v) in feasible_box(), c in -5.0f64..5.0, k in 0.0f64..4.0) {
        let base = sigma_interval(&v, &lo, &hi).unwrap().value;
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        prop_assert!((sigma_interval(&shifted, &lo, &hi).unwrap().value - (base + c)).abs() <= 1e-9);
        prop_assert!((sigma_interval(&scaled, &lo, &hi).unwrap().value - k * base).abs() <= 1e-9);
    }

    #[test]
    fn concave_in_values((lo, hi, v) in feasible_box(), seed in prop::collection::vec(-10.0f64..10.0, 6)) {
        let w: Vec<f64> = seed.iter().take(v.len()).copied().collect();
        let mid: Vec<f64> = v.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
        let f = |x: &[f64]| sigma_interval(x, &lo, &hi).unwrap().value;
        prop_assert!(f(&mid) >= 0.5 * (f(&v) + f(&w)) - 1e-9);
    }

    #[test]
    fn vertex_list_takes_best_vertex(v in prop::collection::vec(-3.0f64..3.0, 3)) {
        let vs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let r = sigma_vertices(&v, &vs).unwrap();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(r.value, min);
    }
}

#[test]
fn infeasible_boxes_are_rejected() {
    assert!(sigma_interval(&[0.0, 1.0], &[0.6, 0.6], &[0.7, 0.7]).is_err());
    assert!(sigma_interval(&[0.0, 1.0], &[0.1, 0.1], &[0.2, 0.2]).is_err());
    assert!(sigma_interval(&[0.0, 1.0], &[0.5, 0.0], &[0.4, 1.0]).is_err());
    assert!(sigma_vertices(&[1.0], &[]).is_err());
}

#[test]
fn worked_example() {
    let r = sigma_interval(&[3.0, 1.0, 2.0], &[0.2, 0.1, 0.1], &[0.6, 0.5, 0.4]).unwrap();
    for (a, b) in r.minimizer.iter().zip([0.2, 0.5, 0.3]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((r.value - 1.7).abs() < 1e-12);
}
