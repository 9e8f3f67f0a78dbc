use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;

use super::config::{FamilyChoice, RunConfig};
use super::{fmt_f64, CliError, FAILURE_STORM_FRACTION};
use crate::data::{ingest_csv, DataError};
use crate::diagnostics::{report, DiagnosticsReport};
use crate::fitter::FitOptions;
use crate::marginals::{mix_marginals, quantile_curve, weighted_kde_1d, weighted_kde_2d, ScaleConvention};
use crate::models::{build_adapter, ModelAdapter, ModelOptions, ModelSpec};
use crate::samplers::{run_amis, run_is, run_mh, Family, Method, ProposalParams, SamplerConfig, WeightedSampleSet};

/// What a completed run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub n_samples: usize,
    pub ess: f64,
    pub warnings: Vec<String>,
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

fn check_len(name: &str, v: &[f64], want: usize) -> Result<(), CliError> {
    if v.len() != want {
        return Err(field(name, format!("expected {want} values, found {}", v.len())));
    }
    Ok(())
}

/// The model's default proposal with the configured overrides applied.
pub(crate) fn initial_proposal(spec: &ModelSpec, cfg: &RunConfig) -> Result<ProposalParams, CliError> {
    let d = spec.param_names.len();
    let o = &cfg.proposal;
    let mu = match &o.mu0 {
        Some(v) => {
            check_len("proposal.mu0", v, d)?;
            v.clone()
        }
        None => spec.g0.mu().to_vec(),
    };
    let sigma = match (&o.sigma0_diag, &o.sigma0_full) {
        (Some(v), _) => {
            check_len("proposal.sigma0", v, d)?;
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
        }
        (None, Some(v)) => {
            check_len("proposal.sigma0_full", v, d * d)?;
            DMatrix::from_row_slice(d, d, v)
        }
        (None, None) => spec.g0.sigma().clone(),
    };
    let family = match (o.family, o.nu, spec.g0.family()) {
        (Some(FamilyChoice::Gaussian), Some(_), _) => {
            return Err(field("proposal.nu", "only applies to proposal.family = student_t"))
        }
        (Some(FamilyChoice::Gaussian), None, _) => Family::Gaussian,
        (Some(FamilyChoice::StudentT), nu, Family::StudentT { nu: nu0 }) => Family::StudentT { nu: nu.unwrap_or(nu0) },
        (Some(FamilyChoice::StudentT), nu, Family::Gaussian) => Family::StudentT { nu: nu.unwrap_or(3.0) },
        (None, Some(nu), Family::StudentT { .. }) => Family::StudentT { nu },
        (None, Some(_), Family::Gaussian) => {
            return Err(field("proposal.nu", "the default proposal is Gaussian; set proposal.family = student_t"))
        }
        (None, None, f) => f,
    };
    let name = if o.sigma0_full.is_some() { "proposal.sigma0_full" } else { "proposal.sigma0" };
    ProposalParams::new(family, mu, sigma).map_err(|e| field(name, e))
}

fn sampler_config(spec: &ModelSpec, cfg: &RunConfig) -> Result<SamplerConfig, CliError> {
    let d = spec.param_names.len();
    let mh_step_sigma = match &cfg.mh_step {
        Some(v) => {
            check_len("sampler.mh_step", v, d)?;
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
        }
        None => spec.mh_step.clone(),
    };
    Ok(SamplerConfig {
        method: cfg.method,
        n0: cfg.n0,
        n: cfg.n,
        schedule: cfg.schedule.clone(),
        seed: cfg.seed,
        workers: cfg.workers,
        mh_step_sigma: Some(mh_step_sigma),
        burn_in: cfg.burn_in,
    })
}

fn empty_report(cfg: &RunConfig, runtime: f64, failure: String) -> DiagnosticsReport {
    DiagnosticsReport {
        method: cfg.method.as_str().into(),
        n_samples: 0,
        ess: 0.0,
        running_ess: Vec::new(),
        running_ess_at: Vec::new(),
        ne_h: Default::default(),
        pplot: Default::default(),
        n_failed_fits: 0,
        n_out_of_support: 0,
        runtime_seconds: runtime,
        schedule: Vec::new(),
        acceptance_rate: None,
        warnings: Vec::new(),
        failure: Some(failure),
    }
}

fn write_json(path: &Path, rep: &DiagnosticsReport) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(rep).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs a configured fit and writes every output into `cfg.out`.
/// `diagnostics.json` is written on success and on sampler failure.
pub fn fit(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved"), cfg.echo())?;

    let data = ingest_csv(&cfg.data).map_err(|e| match e {
        DataError::Io(io) => CliError::Io(format!("{}: {io}", cfg.data.display())),
        other => CliError::from(other),
    })?;
    let opts = ModelOptions {
        lambda: cfg.lambda,
        bins: cfg.bins,
        fit: FitOptions { theta_nodes: cfg.theta_nodes, ..FitOptions::default() },
    };
    let adapter = build_adapter(cfg.model, &data, &opts)?;
    let spec = adapter.spec().clone();
    let g0 = initial_proposal(&spec, cfg)?;
    let scfg = sampler_config(&spec, cfg)?;

    let start = Instant::now();
    let sampled = match cfg.method {
        Method::Is => run_is(adapter.as_ref(), &g0, &scfg).map(|s| (s, None)),
        Method::Amis => run_amis(adapter.as_ref(), &g0, &scfg).map(|s| (s, None)),
        Method::Mh => run_mh(adapter.as_ref(), &scfg, &spec.z0).map(|c| {
            let rate = c.acceptance_rate();
            (c.set, Some(rate))
        }),
    };
    let runtime = start.elapsed().as_secs_f64();
    let (set, acceptance) = match sampled {
        Ok(v) => v,
        Err(e) => {
            let err = CliError::from(e);
            write_json(&out.join("diagnostics.json"), &empty_report(cfg, runtime, err.to_string()))?;
            return Err(err);
        }
    };

    let mut rep = report(&set, runtime).map_err(|e| CliError::Sampler(e.to_string()))?;
    rep.acceptance_rate = acceptance;
    let storm = set.failure_fraction() > FAILURE_STORM_FRACTION;
    if storm {
        rep.failure = Some(format!(
            "{} of {} conditional fits failed (more than {:.0}%)",
            set.n_failed_fits,
            set.len(),
            FAILURE_STORM_FRACTION * 100.0
        ));
    }
    write_samples(&out.join("samples.csv"), &set)?;
    if storm {
        write_json(&out.join("diagnostics.json"), &rep)?;
        return Err(CliError::Sampler(rep.failure.clone().unwrap_or_default()));
    }

    let mut warnings = rep.warnings.clone();
    write_marginals(out, &set, &spec, &mut warnings)?;
    if cfg.emit_joint {
        write_joint(out, &set, &mut warnings)?;
    }
    if cfg.emit_pplot {
        for (name, pts) in &rep.pplot {
            let mut w = create(&out.join(format!("pplot_{name}.csv")))?;
            writeln!(w, "weighted_cdf,uniform")?;
            for (a, b) in pts {
                writeln!(w, "{},{}", fmt_f64(*a), fmt_f64(*b))?;
            }
            w.flush()?;
        }
    }
    if cfg.emit_running_ess {
        let mut w = create(&out.join("running_ess.csv"))?;
        writeln!(w, "n,ess")?;
        for (n, e) in rep.running_ess_at.iter().zip(&rep.running_ess) {
            writeln!(w, "{n},{}", fmt_f64(*e))?;
        }
        w.flush()?;
    }
    if let Some(x) = adapter.smooth_abscissae() {
        write_smooth(out, &set, &x, cfg, adapter.as_ref(), &mut warnings)?;
    }
    rep.warnings = warnings.clone();
    write_json(&out.join("diagnostics.json"), &rep)?;
    Ok(RunSummary { n_samples: set.len(), ess: rep.ess, warnings })
}

fn write_samples(path: &Path, set: &WeightedSampleSet) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut header = vec!["iteration".to_string(), "index".to_string()];
    header.extend(set.param_names.iter().cloned());
    header.extend(["log_evidence", "log_prior", "weight"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for (s, wt) in set.samples.iter().zip(&set.weights) {
        let mut row = vec![s.iteration.to_string(), s.index.to_string()];
        row.extend(s.z.iter().map(|v| fmt_f64(*v)));
        row.extend([s.log_evidence, s.log_prior, *wt].map(fmt_f64));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_curve(path: &Path, x: &[f64], d: &[f64]) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "abscissa,density")?;
    for (a, b) in x.iter().zip(d) {
        writeln!(w, "{},{}", fmt_f64(*a), fmt_f64(*b))?;
    }
    w.flush()?;
    Ok(())
}

fn write_marginals(
    out: &Path,
    set: &WeightedSampleSet,
    spec: &ModelSpec,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let dir = out.join("marginals");
    fs::create_dir_all(&dir)?;
    for name in &spec.latent_names {
        match mix_marginals(set, name) {
            Ok(m) => write_curve(&dir.join(format!("{name}.csv")), &m.abscissae, &m.densities)?,
            Err(e) => warnings.push(format!("marginal of {name} skipped: {e}")),
        }
    }
    for (k, name) in set.param_names.iter().enumerate() {
        match weighted_kde_1d(&set.component(k), &set.weights, None) {
            Ok(kde) => write_curve(&dir.join(format!("{name}.csv")), &kde.x, &kde.densities)?,
            Err(e) => warnings.push(format!("marginal of {name} skipped: {e}")),
        }
    }
    Ok(())
}

fn write_joint(out: &Path, set: &WeightedSampleSet, warnings: &mut Vec<String>) -> Result<(), CliError> {
    if set.param_names.len() < 2 {
        warnings.push("emit.joint needs at least two conditioning parameters".into());
        return Ok(());
    }
    let pairs: Vec<(f64, f64)> = set.samples.iter().map(|s| (s.z[0], s.z[1])).collect();
    let kde = match weighted_kde_2d(&pairs, &set.weights, None) {
        Ok(k) => k,
        Err(e) => {
            warnings.push(format!("joint density skipped: {e}"));
            return Ok(());
        }
    };
    let y = kde.y.clone().unwrap_or_default();
    let path = out.join(format!("joint_{}_{}.csv", set.param_names[0], set.param_names[1]));
    let mut w = create(&path)?;
    writeln!(w, "{},{},density", set.param_names[0], set.param_names[1])?;
    for (i, xi) in kde.x.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            writeln!(w, "{},{},{}", fmt_f64(*xi), fmt_f64(*yj), fmt_f64(kde.density_at(i, j)))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Weighted summary of the smooth term and, for the two-parameter
/// heteroscedastic model, pointwise quantile curves.
fn write_smooth(
    out: &Path,
    set: &WeightedSampleSet,
    x: &[f64],
    cfg: &RunConfig,
    adapter: &dyn ModelAdapter,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let m = x.len();
    let mut mean = vec![0.0; m];
    let mut second = vec![0.0; m];
    let mut total = 0.0;
    let conv = if cfg.literal_sqrt { ScaleConvention::LiteralSqrt } else { ScaleConvention::LogPrecision };
    let want_q = cfg.emit_quantiles && adapter.dim() == 2;
    let mut q = vec![vec![0.0; m]; cfg.quantile_p.len()];
    for (s, &w) in set.samples.iter().zip(&set.weights) {
        if w <= 0.0 {
            continue;
        }
        let Some(sm) = s.fit.as_ref().and_then(|f| f.smooth.as_ref()) else {
            warnings.push(format!("smooth summary skipped: sample ({}, {}) has no smooth term", s.iteration, s.index));
            return Ok(());
        };
        total += w;
        for i in 0..m {
            mean[i] += w * sm.mean[i];
            second[i] += w * (sm.sd[i] * sm.sd[i] + sm.mean[i] * sm.mean[i]);
        }
        if want_q {
            for (k, p) in cfg.quantile_p.iter().enumerate() {
                let c = quantile_curve(x, 0.0, &sm.mean, s.z[0], s.z[1], *p, conv)
                    .map_err(|e| CliError::Config(format!("quantile.p: {e}")))?;
                q[k].iter_mut().zip(&c).for_each(|(a, b)| *a += w * b);
            }
        }
    }
    if !(total > 0.0) {
        warnings.push("smooth summary skipped: no weighted sample".into());
        return Ok(());
    }
    let mut w = create(&out.join("smooth.csv"))?;
    writeln!(w, "x,mean,sd")?;
    for i in 0..m {
        let mu = mean[i] / total;
        let sd = (second[i] / total - mu * mu).max(0.0).sqrt();
        writeln!(w, "{},{},{}", fmt_f64(x[i]), fmt_f64(mu), fmt_f64(sd))?;
    }
    w.flush()?;
    if want_q {
        let mut w = create(&out.join("quantiles.csv"))?;
        let mut header = vec!["x".to_string(), "mean".to_string()];
        header.extend(cfg.quantile_p.iter().map(|p| format!("q_{p}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..m {
            let mut row = vec![fmt_f64(x[i]), fmt_f64(mean[i] / total)];
            row.extend(q.iter().map(|c| fmt_f64(c[i] / total)));
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
    }
    Ok(())
}
