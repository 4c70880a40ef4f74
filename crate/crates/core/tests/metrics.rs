use ipaths_core::metrics::{neuron_t_values, p_plus, share, signed_shares, t_value_exact, t_value_sampled, Sign};
use proptest::prelude::*;

fn table() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 2usize..6)
        .prop_flat_map(|(rows, cols)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, cols), rows))
}

fn scaled(t: &[Vec<f64>], c: f64) -> Vec<Vec<f64>> {
    t.iter().map(|r| r.iter().map(|v| v * c).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_ignore_positive_scale(t in table(), c in 0.01f64..100.0, target in 0usize..6) {
        let target = target % t[0].len();
        let s = scaled(&t, c);
        prop_assert_eq!(t_value_exact(&t, target).unwrap(), t_value_exact(&s, target).unwrap());
        if let (Ok(a), Ok(b)) = (share(&t, target), share(&s, target)) {
            prop_assert_eq!(a.sign, b.sign);
            prop_assert!((a.value - b.value).abs() <= 1e-12);
        }
    }

    #[test]
    fn t_value_is_a_probability(t in table(), target in 0usize..6) {
        let target = target % t[0].len();
        let v = t_value_exact(&t, target).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn sampled_t_tracks_exact(t in table(), target in 0usize..6, seed in any::<u64>()) {
        let target = target % t[0].len();
        let n = 20_000;
        let exact = t_value_exact(&t, target).unwrap();
        let est = t_value_sampled(&t, target, seed, n).unwrap();
        let sigma = (exact * (1.0 - exact) / n as f64).sqrt().max(1.0 / n as f64);
        prop_assert!((est - exact).abs() <= 4.0 * sigma + 1e-12);
    }

    #[test]
    fn shares_normalise_over_used_sentences(t in table()) {
        for sign in [Sign::Positive, Sign::Negative] {
            if let Ok((s, skipped)) = signed_shares(&t, sign) {
                prop_assert!(skipped < t.len());
                let total: f64 = s.iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn p_plus_complements_under_negation(v in prop::collection::vec(-3.0f64..3.0, 1..40)) {
        prop_assume!(v.iter().all(|&x| x != 0.0));
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        prop_assert!((p_plus(&v).unwrap() + p_plus(&neg).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn neuron_t_without_exclusion_is_the_path_t(t in table()) {
        let all = neuron_t_values(&t, &[]).unwrap();
        for (&n, &v) in &all {
            prop_assert_eq!(v, t_value_exact(&t, n).unwrap());
        }
    }
}
