//! Samplers over the conditioning parameters `z_c`.
//!
//! Every sampler treats the conditional fit as a black box returning
//! `log π̃(y | z_c)`. Draws use one RNG substream per `(round, index)` and
//! fits run on a worker pool, so results do not depend on the worker count.

mod proposal;
mod rng;

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fitter::{fit_conditional, ConditionalModel, FitError, FitOptions, FitResult};
use crate::math::{log_add_exp, log_sum_exp};

pub use proposal::{
    adapt_moments, log_proposal_density, sample_proposal, weighted_moments, Family, ProposalParams, EIGEN_FLOOR,
};
pub use rng::substream;

/// A point in the space of conditioning parameters.
pub type ConditioningPoint = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
    #[error("proposal adaptation failed: {0}")]
    AdaptationFailure(String),
    #[error("no sample has a finite weight")]
    EmptyPosterior,
    #[error("initial point: {0}")]
    InitialPoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Is,
    Amis,
    Mh,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Is => "is",
            Method::Amis => "amis",
            Method::Mh => "mh",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "is" => Ok(Method::Is),
            "amis" => Ok(Method::Amis),
            "mh" => Ok(Method::Mh),
            other => Err(format!("unknown method '{other}' (expected is, amis or mh)")),
        }
    }
}

/// Default AMIS schedule: 28 rounds totalling 10000 draws.
pub fn default_schedule() -> Vec<usize> {
    let mut s = vec![250; 4];
    s.extend(std::iter::repeat_n(375, 24));
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub method: Method,
    pub n0: usize,
    pub n: usize,
    pub schedule: Vec<usize>,
    pub seed: u64,
    pub workers: usize,
    /// Random-walk covariance for MH.
    pub mh_step_sigma: Option<nalgebra::DMatrix<f64>>,
    /// MH burn-in; `None` means `n / 10`.
    pub burn_in: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: Method::Amis,
            n0: 800,
            n: 10_000,
            schedule: default_schedule(),
            seed: 0,
            workers: 1,
            mh_step_sigma: None,
            burn_in: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.into()));
        if self.n0 == 0 {
            return bad("sampler.N0 must be at least 1");
        }
        if self.n == 0 {
            return bad("sampler.N must be at least 1");
        }
        if self.schedule.is_empty() || self.schedule.contains(&0) {
            return bad("sampler.schedule must be nonempty with positive entries");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool, SamplerError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| SamplerError::InvalidConfig(format!("worker pool: {e}")))
    }
}

/// Plug-in describing a conditional model family.
pub trait TargetAdapter: Sync {
    fn param_names(&self) -> Vec<String>;

    fn dim(&self) -> usize {
        self.param_names().len()
    }

    /// `log π(z_c)`; `−∞` outside the support.
    fn log_prior(&self, z: &[f64]) -> f64;

    fn conditional_model(&self, z: &[f64]) -> Result<ConditionalModel, FitError>;

    fn fit_options(&self) -> FitOptions {
        FitOptions::default()
    }

    fn fit(&self, z: &[f64]) -> Result<FitResult, FitError> {
        let model = self.conditional_model(z)?;
        fit_conditional(&model, &self.fit_options())
    }
}

/// One draw of `z_c` with its conditional fit.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub z: ConditioningPoint,
    pub iteration: usize,
    pub index: usize,
    pub log_evidence: f64,
    pub log_prior: f64,
    /// `log γ`, with `γ = Σ_l N_l g_l(z)` over the rounds so far.
    pub log_gamma: f64,
    pub log_weight: f64,
    pub fit: Option<Arc<FitResult>>,
    pub fit_error: Option<FitError>,
}

impl WeightedSample {
    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }
}

#[derive(Debug, Clone)]
pub struct WeightedSampleSet {
    pub method: Method,
    pub param_names: Vec<String>,
    pub samples: Vec<WeightedSample>,
    /// Self-normalized weights aligned with `samples`.
    pub weights: Vec<f64>,
    /// Proposals used per round (one for IS phase 2, `λ_0..λ_T` for AMIS).
    pub proposals: Vec<ProposalParams>,
    /// Draws per round, aligned with `proposals`.
    pub schedule: Vec<usize>,
    pub n_failed_fits: usize,
    pub n_out_of_support: usize,
    pub warnings: Vec<String>,
}

impl WeightedSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Values of component `k` of `z_c`.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.z[k]).collect()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.log_weight).collect()
    }

    /// Weighted mean of component `k`.
    pub fn weighted_mean(&self, k: usize) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(s, w)| w * s.z[k]).sum()
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.n_failed_fits as f64 / self.samples.len() as f64
        }
    }
}

/// Self-normalized weights from log weights, shifting by the maximum.
pub fn normalize_weights(log_weights: &[f64]) -> Result<Vec<f64>, SamplerError> {
    let max = log_weights.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SamplerError::EmptyPosterior);
    }
    let raw: Vec<f64> = log_weights.iter().map(|v| if v.is_finite() { (v - max).exp() } else { 0.0 }).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

struct Evaluation {
    z: ConditioningPoint,
    log_prior: f64,
    log_evidence: f64,
    fit: Option<Arc<FitResult>>,
    fit_error: Option<FitError>,
}

fn evaluate<T: TargetAdapter + ?Sized>(target: &T, z: ConditioningPoint) -> Evaluation {
    let log_prior = target.log_prior(&z);
    if log_prior == f64::NEG_INFINITY || log_prior.is_nan() {
        return Evaluation {
            z,
            log_prior: f64::NEG_INFINITY,
            log_evidence: f64::NEG_INFINITY,
            fit: None,
            fit_error: None,
        };
    }
    match target.fit(&z) {
        Ok(fit) if fit.log_evidence.is_finite() => {
            Evaluation { z, log_prior, log_evidence: fit.log_evidence, fit: Some(Arc::new(fit)), fit_error: None }
        }
        Ok(fit) => Evaluation {
            z,
            log_prior,
            log_evidence: f64::NEG_INFINITY,
            fit: None,
            fit_error: Some(FitError::NonFiniteEvidence { theta: fit.grid.mode }),
        },
        Err(e) => Evaluation { z, log_prior, log_evidence: f64::NEG_INFINITY, fit: None, fit_error: Some(e) },
    }
}

/// Draws and fits one batch; results come back in index order.
fn draw_batch<T: TargetAdapter + ?Sized>(
    target: &T,
    pool: &rayon::ThreadPool,
    proposal: &ProposalParams,
    seed: u64,
    round: usize,
    n: usize,
) -> Vec<Evaluation> {
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(seed, round as u32, j as u32);
                let z = sample_proposal(proposal, &mut rng);
                evaluate(target, z)
            })
            .collect()
    })
}

fn into_samples(batch: Vec<Evaluation>, round: usize, log_gamma: impl Fn(&[f64]) -> f64) -> Vec<WeightedSample> {
    batch
        .into_iter()
        .enumerate()
        .map(|(j, e)| {
            let lg = log_gamma(&e.z);
            WeightedSample {
                log_gamma: lg,
                log_weight: f64::NEG_INFINITY,
                z: e.z,
                iteration: round,
                index: j,
                log_evidence: e.log_evidence,
                log_prior: e.log_prior,
                fit: e.fit,
                fit_error: e.fit_error,
            }
        })
        .collect()
}

fn set_log_weight(s: &mut WeightedSample, log_total: f64) {
    s.log_weight = if s.log_evidence.is_finite() && s.log_prior.is_finite() {
        s.log_evidence + s.log_prior - (s.log_gamma - log_total)
    } else {
        f64::NEG_INFINITY
    };
}

fn check_dim<T: TargetAdapter + ?Sized>(target: &T, p: &ProposalParams) -> Result<(), SamplerError> {
    if target.dim() != p.dim() {
        return Err(SamplerError::InvalidProposal(format!(
            "proposal dimension {} does not match the {} conditioning parameters",
            p.dim(),
            target.dim()
        )));
    }
    Ok(())
}

fn counts(samples: &[WeightedSample]) -> (usize, usize) {
    let failed = samples.iter().filter(|s| s.fit_error.is_some()).count();
    let outside = samples.iter().filter(|s| s.log_prior == f64::NEG_INFINITY).count();
    (failed, outside)
}

/// Plain self-normalized IS: `n` draws from `g` in RNG round `round`.
pub fn importance_sample<T: TargetAdapter + ?Sized>(
    target: &T,
    g: &ProposalParams,
    n: usize,
    seed: u64,
    round: usize,
    workers: usize,
) -> Result<WeightedSampleSet, SamplerError> {
    check_dim(target, g)?;
    let cfg = SamplerConfig { method: Method::Is, n, workers, seed, ..SamplerConfig::default() };
    cfg.validate()?;
    let pool = cfg.pool()?;
    let batch = draw_batch(target, &pool, g, seed, round, n);
    let mut samples = into_samples(batch, round, |z| log_proposal_density(g, z) + (n as f64).ln());
    let log_total = (n as f64).ln();
    samples.iter_mut().for_each(|s| set_log_weight(s, log_total));
    let weights = normalize_weights(&samples.iter().map(|s| s.log_weight).collect::<Vec<_>>())?;
    let (n_failed_fits, n_out_of_support) = counts(&samples);
    Ok(WeightedSampleSet {
        method: Method::Is,
        param_names: target.param_names(),
        samples,
        weights,
        proposals: vec![g.clone()],
        schedule: vec![n],
        n_failed_fits,
        n_out_of_support,
        warnings: Vec::new(),
    })
}

/// IS with a preliminary moment-matching step: `N0` draws from `g0` adapt
/// the proposal and are then discarded; `N` draws from the adapted proposal
/// form the output.
pub fn run_is<T: TargetAdapter + ?Sized>(
    target: &T,
    g0: &ProposalParams,
    cfg: &SamplerConfig,
) -> Result<WeightedSampleSet, SamplerError> {
    cfg.validate()?;
    let pre = importance_sample(target, g0, cfg.n0, cfg.seed, 0, cfg.workers)
        .map_err(|e| SamplerError::AdaptationFailure(format!("preliminary run: {e}")))?;
    let points: Vec<Vec<f64>> = pre.samples.iter().map(|s| s.z.clone()).collect();
    let g1 = adapt_moments(g0, &points, &pre.weights)?;
    let mut out = importance_sample(target, &g1, cfg.n, cfg.seed, 1, cfg.workers)?;
    out.warnings.extend(pre.warnings);
    Ok(out)
}

/// Mixture density `ψ(z) = Σ_l N_l g_l(z) / Σ_l N_l`, on the log scale.
pub fn mixture_log_density(proposals: &[ProposalParams], schedule: &[usize], z: &[f64]) -> f64 {
    let terms: Vec<f64> =
        proposals.iter().zip(schedule).map(|(g, n)| (*n as f64).ln() + log_proposal_density(g, z)).collect();
    let total: f64 = schedule.iter().map(|n| *n as f64).sum();
    log_sum_exp(&terms) - total.ln()
}

/// Adaptive multiple importance sampling.
///
/// Round `t` draws `N_t` points from `λ_t`. New points get `γ` summed over
/// every proposal so far, older points have `N_t g_{λ_t}(z)` added, and all
/// weights are refreshed against the deterministic mixture. `λ_{t+1}` is
/// moment-matched over every sample drawn so far.
pub fn run_amis<T: TargetAdapter + ?Sized>(
    target: &T,
    g0: &ProposalParams,
    cfg: &SamplerConfig,
) -> Result<WeightedSampleSet, SamplerError> {
    run_amis_with(target, g0, cfg, true)
}

/// [`run_amis`] with optional adaptation; with `adapt = false` every round
/// reuses `g0`.
pub fn run_amis_with<T: TargetAdapter + ?Sized>(
    target: &T,
    g0: &ProposalParams,
    cfg: &SamplerConfig,
    adapt: bool,
) -> Result<WeightedSampleSet, SamplerError> {
    cfg.validate()?;
    check_dim(target, g0)?;
    let pool = cfg.pool()?;
    let mut proposals: Vec<ProposalParams> = Vec::with_capacity(cfg.schedule.len());
    let mut schedule: Vec<usize> = Vec::with_capacity(cfg.schedule.len());
    let mut samples: Vec<WeightedSample> = Vec::new();
    let mut warnings = Vec::new();
    let mut lambda = g0.clone();
    let mut total = 0usize;

    for (t, &n_t) in cfg.schedule.iter().enumerate() {
        let batch = draw_batch(target, &pool, &lambda, cfg.seed, t, n_t);
        proposals.push(lambda.clone());
        schedule.push(n_t);
        total += n_t;
        let log_nt = (n_t as f64).ln();

        // Older samples: add this round's component.
        let old = &mut samples[..];
        pool.install(|| {
            old.par_iter_mut().for_each(|s| {
                s.log_gamma = log_add_exp(s.log_gamma, log_nt + log_proposal_density(&lambda, &s.z));
            })
        });

        let fresh = into_samples(batch, t, |z| {
            let terms: Vec<f64> =
                proposals.iter().zip(&schedule).map(|(g, n)| (*n as f64).ln() + log_proposal_density(g, z)).collect();
            log_sum_exp(&terms)
        });
        samples.extend(fresh);

        let log_total = (total as f64).ln();
        samples.iter_mut().for_each(|s| set_log_weight(s, log_total));

        if adapt && t + 1 < cfg.schedule.len() {
            let lw: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();
            let adapted = normalize_weights(&lw).and_then(|w| {
                let points: Vec<Vec<f64>> = samples.iter().map(|s| s.z.clone()).collect();
                adapt_moments(&lambda, &points, &w)
            });
            match adapted {
                Ok(next) => lambda = next,
                Err(e) => warnings.push(format!("round {t}: {e}; keeping previous proposal")),
            }
        }
    }

    let weights = normalize_weights(&samples.iter().map(|s| s.log_weight).collect::<Vec<_>>())?;
    let (n_failed_fits, n_out_of_support) = counts(&samples);
    Ok(WeightedSampleSet {
        method: Method::Amis,
        param_names: target.param_names(),
        samples,
        weights,
        proposals,
        schedule,
        n_failed_fits,
        n_out_of_support,
        warnings,
    })
}

/// Random-walk Metropolis-Hastings output.
#[derive(Debug, Clone)]
pub struct SampleChain {
    /// Post burn-in states with uniform weights.
    pub set: WeightedSampleSet,
    pub burn_in: usize,
    pub accepted: usize,
    pub proposed: usize,
}

impl SampleChain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Gaussian random-walk MH on `log π̃(y|z) + log π(z)`. A failed fit at the
/// proposed point counts as a rejection.
pub fn run_mh<T: TargetAdapter + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    z0: &[f64],
) -> Result<SampleChain, SamplerError> {
    use rand::Rng;

    cfg.validate()?;
    let d = target.dim();
    if z0.len() != d {
        return Err(SamplerError::InitialPoint(format!("expected {d} components, got {}", z0.len())));
    }
    let step_sigma = cfg.mh_step_sigma.clone().unwrap_or_else(|| nalgebra::DMatrix::identity(d, d));
    let step = ProposalParams::gaussian(vec![0.0; d], step_sigma)?;
    let burn_in = cfg.burn_in.unwrap_or(cfg.n / 10);

    let mut current = evaluate(target, z0.to_vec());
    let mut current_lp = current.log_evidence + current.log_prior;
    if !current_lp.is_finite() {
        let cause = current.fit_error.as_ref().map(|e| e.to_string()).unwrap_or_else(|| "outside prior support".into());
        return Err(SamplerError::InitialPoint(cause));
    }

    let mut samples = Vec::with_capacity(cfg.n);
    let mut accepted = 0;
    let mut n_failed_fits = 0;
    let mut n_out_of_support = 0;
    let steps = burn_in + cfg.n;
    for s in 0..steps {
        let mut rng = substream(cfg.seed, (s >> 32) as u32, s as u32);
        let delta = sample_proposal(&step, &mut rng);
        let u: f64 = rng.random();
        let z_new: Vec<f64> = current.z.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let cand = evaluate(target, z_new);
        if cand.fit_error.is_some() {
            n_failed_fits += 1;
        }
        if cand.log_prior == f64::NEG_INFINITY {
            n_out_of_support += 1;
        }
        let cand_lp = cand.log_evidence + cand.log_prior;
        if cand_lp.is_finite() && u.ln() < cand_lp - current_lp {
            current = cand;
            current_lp = cand_lp;
            accepted += 1;
        }
        if s >= burn_in {
            samples.push(WeightedSample {
                z: current.z.clone(),
                iteration: 0,
                index: s - burn_in,
                log_evidence: current.log_evidence,
                log_prior: current.log_prior,
                log_gamma: 0.0,
                log_weight: 0.0,
                fit: current.fit.clone(),
                fit_error: None,
            });
        }
    }
    let n = samples.len();
    let weights = vec![1.0 / n as f64; n];
    Ok(SampleChain {
        set: WeightedSampleSet {
            method: Method::Mh,
            param_names: target.param_names(),
            samples,
            weights,
            proposals: vec![step],
            schedule: vec![n],
            n_failed_fits,
            n_out_of_support,
            warnings: Vec::new(),
        },
        burn_in,
        accepted,
        proposed: steps,
    })
}
