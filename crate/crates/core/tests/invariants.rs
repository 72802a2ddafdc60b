use nodal_lab::carleman::*;
use nodal_lab::field_core::Grid;
use nodal_lab::pipeline::{smallness_expression, EpsSetting, RunConfig};
use num_complex::Complex64;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn carleman_ratio_ignores_scaling(seed in 0u64..1000, re in -3.0f64..3.0, im in -3.0f64..3.0, s in 1.0f64..40.0) {
        prop_assume!(re.hypot(im) > 1e-3);
        let g = Grid::new(64).unwrap();
        let y = carleman_suite(g, 1, seed).remove(0);
        let c = Complex64::new(re, im);
        let mut z = y.clone();
        z.values.iter_mut().for_each(|v| *v *= c);
        let a = carleman_inequality_check(&y, s).unwrap();
        let b = carleman_inequality_check(&z, s).unwrap();
        prop_assert!((a.ratio - b.ratio).abs() <= 1e-10 * a.ratio);
    }

    #[test]
    fn log_sum_exp_shifts(terms in prop::collection::vec(-50.0f64..50.0, 1..20), a in -500.0f64..500.0) {
        let shifted: Vec<f64> = terms.iter().map(|t| t + a).collect();
        let direct = terms.iter().map(|t| t.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&terms) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&terms) - a).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn weight_decreases_inside_its_critical_radius(s in 0.5f64..40.0, t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        prop_assume!((t1 - t2).abs() > 1e-6);
        let rc = (s / 2.0).sqrt();
        let (lo, hi) = if t1 < t2 { (t1 * rc, t2 * rc) } else { (t2 * rc, t1 * rc) };
        prop_assert!(psi(s, lo) > psi(s, hi));
    }

    #[test]
    fn config_toml_round_trip(half in 32usize..400, seed in 0..=i64::MAX as u64, delta in 0.01f64..2.0, eps in 0.01f64..0.06, quick in any::<bool>()) {
        let mut c = RunConfig::default();
        c.n = 2 * half;
        c.seed = seed;
        c.delta = delta;
        c.quick = quick;
        c.perforation.eps = EpsSetting::Value(eps);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back.n, c.n);
        prop_assert_eq!(back.seed, c.seed);
        prop_assert_eq!(back.delta, c.delta);
        prop_assert_eq!(back.quick, c.quick);
        prop_assert_eq!(back.perforation.eps, c.perforation.eps);
    }

    #[test]
    fn oversized_seed_is_a_config_error(seed in (i64::MAX as u64 + 1)..=u64::MAX) {
        let mut c = RunConfig::default();
        c.seed = seed;
        prop_assert!(c.validate().is_err());
    }

    #[test]
    fn smallness_grows_with_eps(e1 in 0.001f64..0.2, e2 in 0.001f64..0.2, w1 in 0.0f64..3.0, w2 in 0.0f64..3.0, v in 0.0f64..30.0, delta in 0.1f64..2.0) {
        prop_assume!((e1 - e2).abs() > 1e-6);
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(smallness_expression(lo, delta, (w1, w2, v)) < smallness_expression(hi, delta, (w1, w2, v)));
    }

    #[test]
    fn envelope_grows_with_every_norm(w1 in 0.0f64..3.0, w2 in 0.0f64..3.0, v in 0.0f64..30.0, k in 0.0f64..10.0, bump in 0.01f64..1.0) {
        let base = order_envelope(1.0, 0.5, w1, w2, v, k);
        prop_assert!(order_envelope(1.0, 0.5, w1 + bump, w2, v, k) > base);
        prop_assert!(order_envelope(1.0, 0.5, w1, w2 + bump, v, k) > base);
        prop_assert!(order_envelope(1.0, 0.5, w1, w2, v, k + bump) > base);
        prop_assert!(order_envelope(1.0, 0.5, w1, w2, v + 3.0 + bump, k) >= order_envelope(1.0, 0.5, w1, w2, v + 3.0, k));
    }

    #[test]
    fn radius_ladder_is_geometric(lo in 0.01f64..0.1, span in 1.5f64..10.0, count in 3usize..12) {
        let r = radius_ladder(lo, lo * span, count);
        prop_assert_eq!(r.len(), count);
        prop_assert!((r[0] - lo).abs() < 1e-12 && (r[count - 1] - lo * span).abs() < 1e-12 * span);
        let q = r[1] / r[0];
        for w in r.windows(2) {
            prop_assert!((w[1] / w[0] - q).abs() < 1e-9);
        }
    }
}
