//! Flat `key = value` run configuration with dotted sections.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::models::ModelId;
use crate::samplers::{default_schedule, Method};

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "data",
    "emit.joint",
    "emit.pplot",
    "emit.quantiles",
    "emit.running_ess",
    "fitter.theta_nodes",
    "method",
    "model",
    "model.bins",
    "model.lambda",
    "out",
    "proposal.family",
    "proposal.mu0",
    "proposal.nu",
    "proposal.sigma0",
    "proposal.sigma0_full",
    "quantile.literal_sqrt",
    "quantile.p",
    "sampler.N",
    "sampler.N0",
    "sampler.burn_in",
    "sampler.mh_step",
    "sampler.schedule",
    "seed",
    "workers",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// All problems found in a configuration, one per field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub errors: Vec<FieldError>,
}

impl ConfigError {
    fn single(field: &str, message: impl Into<String>) -> Self {
        Self { errors: vec![FieldError { field: field.into(), message: message.into() }] }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.errors.iter().map(|e| format!("{}: {}", e.field, e.message)).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyChoice {
    Gaussian,
    StudentT,
}

/// User overrides of the model's default proposal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposalOverrides {
    pub family: Option<FamilyChoice>,
    pub nu: Option<f64>,
    pub mu0: Option<Vec<f64>>,
    pub sigma0_diag: Option<Vec<f64>>,
    /// Row-major full matrix.
    pub sigma0_full: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelId,
    pub data: PathBuf,
    pub method: Method,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub n0: usize,
    pub n: usize,
    pub schedule: Vec<usize>,
    pub burn_in: Option<usize>,
    pub mh_step: Option<Vec<f64>>,
    pub proposal: ProposalOverrides,
    pub lambda: f64,
    pub bins: usize,
    pub theta_nodes: usize,
    pub emit_joint: bool,
    pub emit_pplot: bool,
    pub emit_running_ess: bool,
    pub emit_quantiles: bool,
    pub quantile_p: Vec<f64>,
    pub literal_sqrt: bool,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                let k = k.trim().to_string();
                if out.insert(k.clone(), v.trim().to_string()).is_some() {
                    errors.push(FieldError { field: k, message: format!("set twice (line {})", i + 1) });
                }
            }
            None => errors.push(FieldError {
                field: format!("line {}", i + 1),
                message: format!("expected key = value, found '{line}'"),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(ConfigError { errors })
    }
}

/// Parses a `key=value` command-line override.
pub fn parse_assignment(s: &str) -> Result<(String, String), ConfigError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| ConfigError::single(s, "expected key=value"))
}

struct Reader<'a> {
    raw: &'a BTreeMap<String, String>,
    errors: Vec<FieldError>,
}

impl Reader<'_> {
    fn fail(&mut self, key: &str, message: String) {
        self.errors.push(FieldError { field: key.into(), message });
    }

    fn get<T: FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let v = self.raw.get(key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.fail(key, format!("expected {what}, found '{v}'"));
                None
            }
        }
    }

    fn required<T: FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        if !self.raw.contains_key(key) {
            self.fail(key, "required".into());
            return None;
        }
        self.get(key, what)
    }

    fn list<T: FromStr>(&mut self, key: &str, what: &str) -> Option<Vec<T>> {
        let v = self.raw.get(key)?;
        let parsed: Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse::<T>()).collect();
        match parsed {
            Ok(x) if !x.is_empty() => Some(x),
            _ => {
                self.fail(key, format!("expected a comma-separated list of {what}, found '{v}'"));
                None
            }
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> bool {
        self.get(key, "true or false").unwrap_or(default)
    }
}

/// Validates raw key/values and applies defaults.
pub fn resolve(raw: &BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
    let mut r = Reader { raw, errors: Vec::new() };
    for k in raw.keys() {
        if !KEYS.contains(&k.as_str()) {
            r.fail(k, "unknown key".into());
        }
    }
    let model: Option<ModelId> = match raw.get("model") {
        None => {
            r.fail("model", "required".into());
            None
        }
        Some(v) => match v.parse() {
            Ok(m) => Some(m),
            Err(e) => {
                r.fail("model", format!("{e}"));
                None
            }
        },
    };
    let data: Option<PathBuf> = r.required("data", "a path");
    let method: Option<Method> = match raw.get("method") {
        None => {
            r.fail("method", "required".into());
            None
        }
        Some(v) => match v.parse() {
            Ok(m) => Some(m),
            Err(e) => {
                r.fail("method", e);
                None
            }
        },
    };
    let seed: Option<u64> = r.required("seed", "a nonnegative integer");
    let workers: usize = r.get("workers", "a positive integer").unwrap_or_else(default_workers);
    if workers == 0 {
        r.fail("workers", "must be at least 1".into());
    }
    let out: PathBuf = r.get("out", "a path").unwrap_or_else(|| PathBuf::from("out"));
    let n0: usize = r.get("sampler.N0", "a positive integer").unwrap_or(800);
    let n: usize = r.get("sampler.N", "a positive integer").unwrap_or(10_000);
    for (k, v) in [("sampler.N0", n0), ("sampler.N", n)] {
        if v == 0 {
            r.fail(k, "must be at least 1".into());
        }
    }
    let schedule: Vec<usize> = r.list("sampler.schedule", "positive integers").unwrap_or_else(default_schedule);
    if schedule.contains(&0) {
        r.fail("sampler.schedule", "entries must be at least 1".into());
    }
    let burn_in = r.get("sampler.burn_in", "a nonnegative integer");
    let mh_step: Option<Vec<f64>> = r.list("sampler.mh_step", "numbers");
    if mh_step.as_ref().is_some_and(|v| v.iter().any(|x| !(*x > 0.0 && x.is_finite()))) {
        r.fail("sampler.mh_step", "variances must be positive".into());
    }

    let family = match raw.get("proposal.family").map(|s| s.as_str()) {
        None => None,
        Some("gaussian") => Some(FamilyChoice::Gaussian),
        Some("student_t") => Some(FamilyChoice::StudentT),
        Some(other) => {
            r.fail("proposal.family", format!("expected gaussian or student_t, found '{other}'"));
            None
        }
    };
    let nu: Option<f64> = r.get("proposal.nu", "a positive number");
    if nu.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
        r.fail("proposal.nu", "must be positive".into());
    }
    let proposal = ProposalOverrides {
        family,
        nu,
        mu0: r.list("proposal.mu0", "numbers"),
        sigma0_diag: r.list("proposal.sigma0", "numbers"),
        sigma0_full: r.list("proposal.sigma0_full", "numbers"),
    };
    if proposal.sigma0_diag.is_some() && proposal.sigma0_full.is_some() {
        r.fail("proposal.sigma0_full", "give either proposal.sigma0 or proposal.sigma0_full, not both".into());
    }
    let lambda: f64 = r.get("model.lambda", "a positive number").unwrap_or(1.0);
    if !(lambda > 0.0 && lambda.is_finite()) {
        r.fail("model.lambda", "must be positive".into());
    }
    let bins: usize = r.get("model.bins", "an integer >= 3").unwrap_or(50);
    if bins < 3 {
        r.fail("model.bins", "must be at least 3".into());
    }
    let theta_nodes: usize = r.get("fitter.theta_nodes", "an odd positive integer").unwrap_or(9);
    if theta_nodes == 0 || theta_nodes % 2 == 0 {
        r.fail("fitter.theta_nodes", "must be odd and positive".into());
    }
    let emit_joint = r.bool("emit.joint", false);
    let emit_pplot = r.bool("emit.pplot", true);
    let emit_running_ess = r.bool("emit.running_ess", true);
    let emit_quantiles = r.bool("emit.quantiles", true);
    let quantile_p: Vec<f64> = r.list("quantile.p", "probabilities").unwrap_or_else(|| vec![0.1, 0.5, 0.9]);
    if quantile_p.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        r.fail("quantile.p", "probabilities must lie in (0, 1)".into());
    }
    let literal_sqrt = r.bool("quantile.literal_sqrt", false);

    if !r.errors.is_empty() {
        r.errors.sort_by(|a, b| a.field.cmp(&b.field));
        return Err(ConfigError { errors: r.errors });
    }
    Ok(RunConfig {
        model: model.expect("checked"),
        data: data.expect("checked"),
        method: method.expect("checked"),
        seed: seed.expect("checked"),
        workers,
        out,
        n0,
        n,
        schedule,
        burn_in,
        mh_step,
        proposal,
        lambda,
        bins,
        theta_nodes,
        emit_joint,
        emit_pplot,
        emit_running_ess,
        emit_quantiles,
        quantile_p,
        literal_sqrt,
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Resolved configuration as sorted `key = value` lines. `workers` is
    /// left out because it never changes the numeric output.
    pub fn echo(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("model", self.model.as_str().into());
        m.insert("data", self.data.display().to_string());
        m.insert("method", self.method.as_str().into());
        m.insert("seed", self.seed.to_string());
        m.insert("out", self.out.display().to_string());
        m.insert("sampler.N0", self.n0.to_string());
        m.insert("sampler.N", self.n.to_string());
        m.insert("sampler.schedule", join(&self.schedule));
        m.insert("sampler.burn_in", self.burn_in.unwrap_or(self.n / 10).to_string());
        if let Some(s) = &self.mh_step {
            m.insert("sampler.mh_step", join(s));
        }
        if let Some(f) = self.proposal.family {
            m.insert(
                "proposal.family",
                match f {
                    FamilyChoice::Gaussian => "gaussian".into(),
                    FamilyChoice::StudentT => "student_t".into(),
                },
            );
        }
        if let Some(v) = self.proposal.nu {
            m.insert("proposal.nu", v.to_string());
        }
        if let Some(v) = &self.proposal.mu0 {
            m.insert("proposal.mu0", join(v));
        }
        if let Some(v) = &self.proposal.sigma0_diag {
            m.insert("proposal.sigma0", join(v));
        }
        if let Some(v) = &self.proposal.sigma0_full {
            m.insert("proposal.sigma0_full", join(v));
        }
        m.insert("model.lambda", self.lambda.to_string());
        m.insert("model.bins", self.bins.to_string());
        m.insert("fitter.theta_nodes", self.theta_nodes.to_string());
        m.insert("emit.joint", self.emit_joint.to_string());
        m.insert("emit.pplot", self.emit_pplot.to_string());
        m.insert("emit.running_ess", self.emit_running_ess.to_string());
        m.insert("emit.quantiles", self.emit_quantiles.to_string());
        m.insert("quantile.p", join(&self.quantile_p));
        m.insert("quantile.literal_sqrt", self.literal_sqrt.to_string());
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(s: &str) -> BTreeMap<String, String> {
        parse_text(s).unwrap()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = resolve(&raw("model = bivariate\ndata = d.csv\nmethod = amis\nseed = 3\n")).unwrap();
        assert_eq!(c.n0, 800);
        assert_eq!(c.n, 10_000);
        assert_eq!(c.schedule, default_schedule());
        assert_eq!(c.theta_nodes, 9);
        assert_eq!(c.bins, 50);
        assert!(c.emit_pplot && !c.emit_joint);
    }

    #[test]
    fn every_bad_field_is_named() {
        let e = resolve(&raw("model = nope\nmethod = amis\nseed = x\nsampler.N = -1\ncolour = red\n")).unwrap_err();
        let fields: Vec<&str> = e.errors.iter().map(|f| f.field.as_str()).collect();
        assert_eq!(fields, vec!["colour", "data", "model", "sampler.N", "seed"]);
    }

    #[test]
    fn echo_is_stable() {
        let text = "seed = 1\nmodel = lasso\nmethod = is\ndata = a.csv\nmodel.lambda = 10\n";
        let a = resolve(&raw(text)).unwrap().echo();
        let b = resolve(&raw(text)).unwrap().echo();
        assert_eq!(a, b);
        let keys: Vec<&str> = a.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
