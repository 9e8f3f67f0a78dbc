use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use condlgm::diagnostics::{
    chain_ess, ess, integrated_autocorrelation_time, ne_h, pplot_max_deviation, probability_plot, report, running_ess,
};
use condlgm::fitter::FitOptions;
use condlgm::models::{simulate_bivariate, BivariateAdapter, ModelAdapter};
use condlgm::samplers::{run_is, Method, SamplerConfig};

fn weights_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 1e-6f64..1.0, 1.0f64..1e6], 1..200)
        .prop_filter("needs a positive weight", |w| w.iter().any(|v| *v > 0.0))
}

/// Two passes: normalize, then sum squares.
fn ne_h_two_pass(w: &[f64], h: &[f64]) -> f64 {
    let raw: Vec<f64> = w.iter().zip(h).map(|(a, b)| a * b.abs()).collect();
    let total: f64 = raw.iter().sum();
    1.0 / raw.iter().map(|v| (v / total).powi(2)).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rescaling_by_powers_of_two_is_exact(w in weights_strategy(), k in -60i32..60) {
        let c = 2f64.powi(k);
        let ws: Vec<f64> = w.iter().map(|v| v * c).collect();
        let h: Vec<f64> = (0..w.len()).map(|i| (i as f64).cos()).collect();
        prop_assume!(w.iter().zip(&h).any(|(a, b)| a * b.abs() > 0.0));
        prop_assert_eq!(ess(&ws).unwrap(), ess(&w).unwrap());
        prop_assert_eq!(ne_h(&ws, &h).unwrap(), ne_h(&w, &h).unwrap());
        prop_assert_eq!(running_ess(&ws), running_ess(&w));
    }

    #[test]
    fn rescaling_by_any_constant_is_near_exact(w in weights_strategy(), c in 1e-8f64..1e8) {
        let ws: Vec<f64> = w.iter().map(|v| v * c).collect();
        let (a, b) = (ess(&w).unwrap(), ess(&ws).unwrap());
        prop_assert!((a - b).abs() <= 1e-14 * a);
    }

    #[test]
    fn effective_sizes_are_bounded(w in weights_strategy(), seed in any::<u64>()) {
        let n = w.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<f64> = w.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let e = ess(&w).unwrap();
        let positive = w.iter().filter(|v| **v > 0.0).count() as f64;
        prop_assert!(e >= 1.0 - 1e-12 && e <= positive * (1.0 + 1e-12));
        if let Ok(v) = ne_h(&w, &h) {
            prop_assert!(v >= 1.0 - 1e-12 && v <= n * (1.0 + 1e-12));
            prop_assert!((v - ne_h_two_pass(&w, &h)).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn ne_h_equals_n_only_for_flat_products(n in 2usize..100, c in 0.01f64..100.0, bump in 1.001f64..3.0) {
        let w = vec![c; n];
        let h = vec![1.0; n];
        prop_assert!((ne_h(&w, &h).unwrap() - n as f64).abs() < 1e-12 * n as f64);
        let mut hb = h.clone();
        hb[0] = bump;
        prop_assert!(ne_h(&w, &hb).unwrap() < n as f64);
    }

    #[test]
    fn probability_plot_is_monotone(w in weights_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Some ties on purpose.
        let z: Vec<f64> = w.iter().map(|_| (rng.random_range(-3.0..3.0f64) * 4.0).round() / 4.0).collect();
        let pts = probability_plot(&z, &w).unwrap();
        prop_assert_eq!(pts.len(), w.len());
        for pair in pts.windows(2) {
            prop_assert!(pair[1].0 >= pair[0].0 && pair[1].1 > pair[0].1);
        }
        prop_assert!(pts.iter().all(|(a, b)| (0.0..=1.0).contains(a) && (0.0..=1.0).contains(b)));
        prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn running_ess_ends_at_full_ess(w in weights_strategy()) {
        let r = running_ess(&w);
        prop_assert_eq!(r.len(), w.len());
        prop_assert_eq!(*r.last().unwrap(), ess(&w).unwrap());
        for (k, v) in r.iter().enumerate() {
            let prefix = &w[..=k];
            let direct = ess(prefix).unwrap_or(0.0);
            prop_assert!((v - direct).abs() <= 1e-10 * direct.max(1.0));
        }
    }
}

#[test]
fn closed_form_values() {
    // 1/3 is rounded after scaling by the max, so this one is only to an ulp.
    assert!((ess(&[3.0, 1.0]).unwrap() - 1.6).abs() < 1e-15);
    assert_eq!(ess(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 2.0);
    assert_eq!(ne_h(&[0.1, 0.6, 0.3], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
    assert!(ess(&[0.0, 0.0]).is_err());
    assert!(ne_h(&[1.0, 1.0], &[0.0, 0.0]).is_err());
    assert!(ne_h(&[1.0], &[1.0, 2.0]).is_err());
    assert_eq!(running_ess(&[1.0, 0.0, 0.0, 0.0]), vec![1.0; 4]);
    assert_eq!(running_ess(&[2.0; 5]), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn equal_weights_put_plot_on_identity() {
    let z: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64).collect();
    let pts = probability_plot(&z, &[0.02; 50]).unwrap();
    assert!(pplot_max_deviation(&pts) < 1e-12);
}

#[test]
fn weight_on_smallest_value_jumps_immediately() {
    let z = [3.0, -1.0, 2.0, 0.5];
    let pts = probability_plot(&z, &[0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(pts[0], (1.0, 0.25));
    assert_eq!(pplot_max_deviation(&pts), 0.75);
}

#[test]
fn ar1_autocorrelation_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for phi in [0.0, 0.5, 0.9] {
        let mut x = vec![0.0f64; 200_000];
        for i in 1..x.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[i] = phi * x[i - 1] + e;
        }
        let want = (1.0 + phi) / (1.0 - phi);
        let got = integrated_autocorrelation_time(&x);
        assert!((got - want).abs() < 0.1 * want, "phi {phi}: {got} vs {want}");
        assert!((chain_ess(&x) - x.len() as f64 / got).abs() < 1e-6);
    }
}

#[test]
fn well_matched_is_run_has_flat_probability_plot() {
    let data = simulate_bivariate(4, 100).unwrap();
    let adapter = BivariateAdapter::new(&data, FitOptions::default()).unwrap();
    let g0 = adapter.spec().g0.clone();
    let cfg = SamplerConfig { method: Method::Is, n0: 800, n: 2000, seed: 4, workers: 4, ..SamplerConfig::default() };
    let set = run_is(&adapter, &g0, &cfg).unwrap();
    for k in 0..2 {
        let pts = probability_plot(&set.component(k), &set.weights).unwrap();
        let dev = pplot_max_deviation(&pts);
        assert!(dev < 0.05, "component {k}: deviation {dev}");
    }
    let rep = report(&set, 1.5).unwrap();
    assert_eq!(rep.n_samples, 2000);
    assert!(rep.ess >= 1.0 && rep.ess <= 2000.0);
    assert_eq!(rep.running_ess.len(), 2000);
    assert_eq!(*rep.running_ess.last().unwrap(), rep.ess);
    for name in &set.param_names {
        let v = rep.ne_h[name];
        assert!((1.0..=2000.0).contains(&v));
        let series = &rep.pplot[name];
        assert_eq!(*series.last().unwrap(), (1.0, 1.0));
    }
}
