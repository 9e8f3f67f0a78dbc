//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use condlgm::cli::{self, RunConfig};
use condlgm::diagnostics::{ess, ne_h};
use condlgm::fitter::{
    conditional_log_evidence, exact_gaussian_evidence, ConditionalModel, FitOptions, FixedEffects, Likelihood,
    ThetaGrid,
};
use condlgm::marginals::{quantile_curve, ScaleConvention};
use condlgm::models::{
    simulate_bivariate, simulate_dataset, simulate_lasso, simulate_missing, BivariateAdapter, LassoAdapter,
    MissingCovariateAdapter, ModelAdapter, ModelId,
};
use condlgm::samplers::{
    importance_sample, mixture_log_density, run_amis, run_is, Method, ProposalParams, SamplerConfig, WeightedSampleSet,
};

use common::{bivariate_oracle, weighted_ks, weighted_mean_se};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn laplace_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let n = rng.random_range(1..=50);
        let p = rng.random_range(1..=4);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<Option<f64>> = (0..n).map(|_| Some(rng.random_range(-3.0..3.0))).collect();
        let prec: Vec<f64> = (0..p).map(|_| rng.random_range(0.01..10.0)).collect();
        let theta = rng.random_range(-3.0..3.0);
        let names = (0..p).map(|k| format!("b{k}")).collect();
        let fixed = FixedEffects::new(names, x).with_prior_precision(prec);
        let m = ConditionalModel::new(y, Likelihood::Gaussian, fixed).expect("model");
        let laplace = conditional_log_evidence(&m, &ThetaGrid::fixed(theta)).expect("laplace");
        let exact = exact_gaussian_evidence(&m, theta).expect("exact");
        worst = worst.max((laplace - exact).abs() / exact.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-8 && secs < 5.0, format!("max relative error {worst:.2e}, {secs:.2}s"))
}

fn bivariate_reproduction() -> Outcome {
    let start = Instant::now();
    let data = simulate_bivariate(61, 100).expect("data");
    let oracle = bivariate_oracle(&data);
    let adapter = BivariateAdapter::new(&data, FitOptions::default()).expect("adapter");
    let g0 = adapter.spec().g0.clone();
    let base = SamplerConfig { seed: 61, workers: 4, ..SamplerConfig::default() };
    let is_cfg = SamplerConfig { method: Method::Is, n0: 800, n: 2000, ..base.clone() };
    let amis_cfg = SamplerConfig { method: Method::Amis, schedule: vec![250; 8], ..base };
    let runs = [
        ("IS", run_is(&adapter, &g0, &is_cfg).expect("is")),
        ("AMIS", run_amis(&adapter, &g0, &amis_cfg).expect("amis")),
    ];
    let secs = start.elapsed().as_secs_f64();
    let mut pass = secs < 120.0;
    let mut parts = Vec::new();
    for (label, set) in &runs {
        for k in 0..2 {
            let z = set.component(k);
            let (mean, se) = weighted_mean_se(&z, &set.weights);
            let target = oracle.mean(k + 1);
            let ks = weighted_ks(&z, &set.weights, |v| oracle.cdf(k + 1, v));
            let ok = (mean - target).abs() < 3.0 * se && ks < 0.05;
            pass &= ok;
            parts.push(format!("{label} beta{}: |d|/se {:.2}, KS {ks:.3}", k + 1, (mean - target).abs() / se));
        }
    }
    outcome(pass, format!("{}; {secs:.1}s", parts.join("; ")))
}

fn amis_single_round_is_is() -> Outcome {
    let data = simulate_bivariate(7, 100).expect("data");
    let adapter = BivariateAdapter::new(&data, FitOptions::default()).expect("adapter");
    let g0 = adapter.spec().g0.clone();
    let cfg =
        SamplerConfig { method: Method::Amis, schedule: vec![500], seed: 7, workers: 4, ..SamplerConfig::default() };
    let amis = run_amis(&adapter, &g0, &cfg).expect("amis");
    let is = importance_sample(&adapter, &g0, 500, 7, 0, 4).expect("is");
    let same_points = amis.samples.iter().zip(&is.samples).all(|(a, b)| a.z == b.z);
    let diff = amis.weights.iter().zip(&is.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(same_points && diff <= 1e-12, format!("max weight difference {diff:.2e}"))
}

fn recomputed_weights(set: &WeightedSampleSet) -> Vec<f64> {
    let lw: Vec<f64> = set
        .samples
        .iter()
        .map(|s| s.log_evidence + s.log_prior - mixture_log_density(&set.proposals, &set.schedule, &s.z))
        .collect();
    let max = lw.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = lw.iter().map(|v| if v.is_finite() { (v - max).exp() } else { 0.0 }).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn mixture_regression() -> Outcome {
    let data = simulate_bivariate(19, 100).expect("data");
    let adapter = BivariateAdapter::new(&data, FitOptions::default()).expect("adapter");
    let g0 = adapter.spec().g0.clone();
    let cfg = SamplerConfig {
        method: Method::Amis,
        schedule: vec![200; 5],
        seed: 19,
        workers: 4,
        ..SamplerConfig::default()
    };
    let set = run_amis(&adapter, &g0, &cfg).expect("amis");
    let fresh = recomputed_weights(&set);
    let worst =
        set.weights.iter().zip(&fresh).filter(|(_, b)| **b > 0.0).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    outcome(set.proposals.len() == 5 && worst < 1e-10, format!("max relative difference {worst:.2e} over 5 rounds"))
}

fn diagnostics_algebra() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    for n in [1usize, 2, 7, 100, 10_000] {
        checks.push(("equal weights give n", ess(&vec![0.37; n]).unwrap() == n as f64));
        checks.push(("constant h gives n", ne_h(&vec![1.0; n], &vec![-2.5; n]).unwrap() == n as f64));
    }
    checks.push(("two-point support gives 2", ess(&[1.0, 1.0, 0.0, 0.0]).unwrap() == 2.0));
    checks.push(("(3, 1) gives 1.6", (ess(&[3.0, 1.0]).unwrap() - 1.6).abs() < 1e-15));
    checks.push(("single support h gives 1", ne_h(&[0.2, 0.5, 0.3], &[1.0, 0.0, 0.0]).unwrap() == 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_general = 0.0f64;
    let mut binary_exact = true;
    for _ in 0..200 {
        let n = rng.random_range(2..300);
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (e, eh) = (ess(&w).unwrap(), ne_h(&w, &h).unwrap());
        for k in [-40i32, -3, 1, 17, 60] {
            let c = 2f64.powi(k);
            let ws: Vec<f64> = w.iter().map(|v| v * c).collect();
            binary_exact &= ess(&ws).unwrap() == e && ne_h(&ws, &h).unwrap() == eh;
        }
        for c in [1e-9, 0.3, 7.0, 1e12] {
            let ws: Vec<f64> = w.iter().map(|v| v * c).collect();
            worst_general =
                worst_general.max((ess(&ws).unwrap() - e).abs() / e).max((ne_h(&ws, &h).unwrap() - eh).abs() / eh);
        }
    }
    checks.push(("power-of-two rescaling bit-identical", binary_exact));
    // Rescaling by other constants rounds the inputs themselves, so only the
    // last few bits may move.
    checks.push(("general rescaling within 1e-14", worst_general < 1e-14));
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} identities hold; general rescaling drift {worst_general:.1e}", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

fn shrinkage_monotonicity() -> Outcome {
    let data = simulate_lasso(23, 100).expect("data");
    let mut norms = Vec::new();
    let mut ess_values = Vec::new();
    for lambda in [0.1, 1.0, 10.0] {
        let adapter = LassoAdapter::new(&data, lambda, FitOptions::default()).expect("adapter");
        let g0 = adapter.spec().g0.clone();
        // The default g0 sits far from the posterior; the longer schedule lets
        // every lambda finish adapting before the comparison.
        let mut schedule = vec![250; 4];
        schedule.extend(vec![375; 40]);
        let cfg = SamplerConfig { method: Method::Amis, schedule, seed: 23, workers: 4, ..SamplerConfig::default() };
        let set = run_amis(&adapter, &g0, &cfg).expect("amis");
        norms.push((0..set.param_names.len()).map(|k| set.weighted_mean(k).abs()).sum::<f64>());
        ess_values.push(ess(&set.weights).unwrap());
    }
    outcome(
        norms[0] > norms[1] && norms[1] > norms[2],
        format!(
            "|beta|_1 at lambda 0.1/1/10: {:.4} / {:.4} / {:.4}, ESS {:.0} / {:.0} / {:.0}",
            norms[0], norms[1], norms[2], ess_values[0], ess_values[1], ess_values[2]
        ),
    )
}

fn quantile_non_crossing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0usize;
    let mut comparisons = 0usize;
    for i in 0..1000 {
        let m = rng.random_range(2..60);
        let lo = rng.random_range(-5.0..5.0);
        let x: Vec<f64> = (0..m).map(|_| lo + rng.random_range(0.0..4.0)).collect();
        let f: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (alpha, beta) = (rng.random_range(-6.0..6.0), rng.random_range(-3.0..3.0));
        let mu0 = rng.random_range(-10.0..10.0);
        let (a, b) = (rng.random_range(0.001..0.999), rng.random_range(0.001..0.999));
        let (p1, p2) = if a < b { (a, b) } else { (b, a) };
        let conv = if i % 2 == 0 { ScaleConvention::LogPrecision } else { ScaleConvention::LiteralSqrt };
        let y1 = quantile_curve(&x, mu0, &f, alpha, beta, p1, conv).expect("p1");
        let y2 = quantile_curve(&x, mu0, &f, alpha, beta, p2, conv).expect("p2");
        comparisons += m;
        violations += y1.iter().zip(&y2).filter(|(u, v)| !(u < v)).count();
    }
    outcome(violations == 0, format!("{violations} violations in {comparisons} comparisons"))
}

fn run_config(
    model: ModelId,
    data: &std::path::Path,
    out: &std::path::Path,
    method: Method,
    workers: usize,
) -> RunConfig {
    let mut raw = std::collections::BTreeMap::new();
    raw.insert("model".to_string(), model.as_str().to_string());
    raw.insert("data".to_string(), data.display().to_string());
    raw.insert("method".to_string(), method.as_str().to_string());
    raw.insert("seed".to_string(), "31".to_string());
    raw.insert("workers".to_string(), workers.to_string());
    raw.insert("out".to_string(), out.display().to_string());
    raw.insert("sampler.N0".to_string(), "100".to_string());
    raw.insert("sampler.N".to_string(), "200".to_string());
    raw.insert("sampler.schedule".to_string(), "100,100,100".to_string());
    cli::resolve(&raw).expect("config")
}

fn parallel_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut mismatched = Vec::new();
    let mut runs = 0;
    for model in ModelId::ALL {
        let data = dir.path().join(format!("{}.csv", model.as_str()));
        simulate_dataset(model, 31, condlgm::models::default_n(model))
            .expect("simulate")
            .write_csv_path(&data)
            .expect("write");
        let methods: &[Method] =
            if model == ModelId::Bivariate { &[Method::Is, Method::Amis, Method::Mh] } else { &[Method::Amis] };
        for &method in methods {
            let mut reference: Option<Vec<u8>> = None;
            for workers in [1, 2, 8] {
                let out = dir.path().join(format!("{}_{}_{workers}", model.as_str(), method.as_str()));
                cli::fit(&run_config(model, &data, &out, method, workers)).expect("fit");
                let bytes = std::fs::read(out.join("samples.csv")).expect("samples");
                runs += 1;
                match &reference {
                    None => reference = Some(bytes),
                    Some(r) if *r != bytes => {
                        mismatched.push(format!("{}/{} workers={workers}", model.as_str(), method.as_str()))
                    }
                    Some(_) => {}
                }
            }
        }
    }
    outcome(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{runs} runs, samples.csv byte-identical per model and method")
        } else {
            format!("differs: {}", mismatched.join(", "))
        },
    )
}

/// Gaussian `g0` at the least-squares slopes with a tenth of their
/// sampling covariance: far too narrow for the posterior.
fn tight_lasso_proposal(data: &condlgm::data::Dataset) -> ProposalParams {
    let y = DVector::from_vec(data.complete_column("y").unwrap());
    let names: Vec<String> = data.names().iter().filter(|n| *n != "y").cloned().collect();
    let cols: Vec<Vec<f64>> = names.iter().map(|n| data.complete_column(n).unwrap()).collect();
    let n = y.len();
    let p = cols.len();
    let z = DMatrix::from_fn(n, p + 1, |i, k| if k == 0 { 1.0 } else { cols[k - 1][i] });
    let ztz = z.transpose() * &z;
    let coef = ztz.clone().cholesky().unwrap().solve(&(z.transpose() * &y));
    let xc = DMatrix::from_fn(n, p, |i, k| {
        let m = cols[k].iter().sum::<f64>() / n as f64;
        cols[k][i] - m
    });
    let cov = (xc.transpose() * xc).try_inverse().unwrap() * 0.1;
    ProposalParams::gaussian(coef.rows(1, p).iter().copied().collect(), cov).unwrap()
}

fn is_failure_signal() -> Outcome {
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 1..=10u64 {
        let data = simulate_lasso(seed, 100).expect("data");
        let adapter = LassoAdapter::new(&data, 1.0, FitOptions::default()).expect("adapter");
        let g0 = tight_lasso_proposal(&data);
        let base = SamplerConfig { seed, workers: 4, ..SamplerConfig::default() };
        let is =
            run_is(&adapter, &g0, &SamplerConfig { method: Method::Is, n0: 500, n: 2000, ..base.clone() }).expect("is");
        let amis = run_amis(&adapter, &g0, &SamplerConfig { method: Method::Amis, schedule: vec![250; 10], ..base })
            .expect("amis");
        let frac = |set: &WeightedSampleSet| -> Vec<f64> {
            (0..set.param_names.len())
                .map(|k| ne_h(&set.weights, &set.component(k)).unwrap() / set.len() as f64)
                .collect()
        };
        let is_max = frac(&is).into_iter().fold(0.0, f64::max);
        let amis_min = frac(&amis).into_iter().fold(f64::INFINITY, f64::min);
        if is_max < 0.05 && amis_min > 0.20 {
            good += 1;
        }
        lines.push(format!("{seed}:{:.3}/{:.3}", is_max, amis_min));
    }
    outcome(good >= 8, format!("{good}/10 seeds (IS max n_e/N / AMIS min n_e/N: {})", lines.join(" ")))
}

/// Weighted quantile by the left-continuous inverse of the weighted ECDF.
fn weighted_quantile(z: &[f64], w: &[f64], p: f64) -> f64 {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|a, b| z[*a].total_cmp(&z[*b]));
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += w[i] / total;
        if acc >= p {
            return z[i];
        }
    }
    z[idx[idx.len() - 1]]
}

fn imputation_coverage() -> Outcome {
    let mut covered = 0usize;
    let mut total = 0usize;
    for rep in 0..20u64 {
        let seed = 1000 + rep;
        let (data, truth) = simulate_missing(seed, 25).expect("data");
        let adapter = MissingCovariateAdapter::new(&data, FitOptions::default()).expect("adapter");
        let g0 = adapter.spec().g0.clone();
        let mut schedule = vec![250; 4];
        schedule.extend(vec![375; 8]);
        let cfg = SamplerConfig { method: Method::Amis, schedule, seed, workers: 4, ..SamplerConfig::default() };
        let set = run_amis(&adapter, &g0, &cfg).expect("amis");
        for (k, row) in adapter.missing_rows().iter().enumerate() {
            let t = truth.values[truth.rows.iter().position(|r| r == row).expect("truth row")];
            let z = set.component(k);
            let lo = weighted_quantile(&z, &set.weights, 0.025);
            let hi = weighted_quantile(&z, &set.weights, 0.975);
            covered += usize::from(lo <= t && t <= hi);
            total += 1;
        }
    }
    let rate = covered as f64 / total as f64;
    outcome((0.85..=1.0).contains(&rate), format!("{covered}/{total} covered ({rate:.3})"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("laplace evidence exact for Gaussian models", laplace_exactness),
        ("bivariate reproduction against conjugate posterior", bivariate_reproduction),
        ("AMIS with one round equals IS", amis_single_round_is_is),
        ("incremental AMIS weights match mixture recompute", mixture_regression),
        ("ESS and n_e(h) identities", diagnostics_algebra),
        ("lasso shrinkage monotone in lambda", shrinkage_monotonicity),
        ("quantile curves never cross", quantile_non_crossing),
        ("samples.csv independent of worker count", parallel_determinism),
        ("IS fails and AMIS recovers from a tight g0", is_failure_signal),
        ("imputation interval coverage", imputation_coverage),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({}) [{:.1}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
