use std::fs;
use std::path::Path;

use super::{parse_text, CliError};
use crate::diagnostics::{report, DiagnosticsReport};
use crate::samplers::{Method, WeightedSample, WeightedSampleSet};

const FIXED_COLUMNS: [&str; 2] = ["iteration", "index"];
const TRAILING_COLUMNS: [&str; 3] = ["log_evidence", "log_prior", "weight"];

/// Reads a `samples.csv` back into a sample set without fits.
pub fn read_samples(path: &Path, method: Method) -> Result<WeightedSampleSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| CliError::Data(e.to_string()))?.iter().map(String::from).collect();
    let k = header.len();
    if k < 6 || header[..2] != FIXED_COLUMNS || header[k - 3..] != TRAILING_COLUMNS {
        return Err(CliError::Data(format!("{}: unexpected header '{}'", path.display(), header.join(","))));
    }
    let names = header[2..k - 3].to_vec();
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let bad =
            |c: usize| CliError::Data(format!("row {}, column '{}': cannot parse '{}'", r + 1, header[c], &rec[c]));
        let int = |c: usize| rec[c].parse::<usize>().map_err(|_| bad(c));
        let num = |c: usize| rec[c].parse::<f64>().map_err(|_| bad(c));
        let z = (2..k - 3).map(num).collect::<Result<Vec<f64>, _>>()?;
        let log_evidence = num(k - 3)?;
        let log_prior = num(k - 2)?;
        weights.push(num(k - 1)?);
        samples.push(WeightedSample {
            z,
            iteration: int(0)?,
            index: int(1)?,
            log_evidence,
            log_prior,
            log_gamma: 0.0,
            log_weight: 0.0,
            fit: None,
            fit_error: None,
        });
    }
    if samples.is_empty() {
        return Err(CliError::Data(format!("{}: no samples", path.display())));
    }
    let n_out_of_support = samples.iter().filter(|s| s.log_prior == f64::NEG_INFINITY).count();
    let n_failed_fits = samples.iter().filter(|s| s.log_prior.is_finite() && !s.log_evidence.is_finite()).count();
    let n = samples.len();
    Ok(WeightedSampleSet {
        method,
        param_names: names,
        samples,
        weights,
        proposals: Vec::new(),
        schedule: vec![n],
        n_failed_fits,
        n_out_of_support,
        warnings: Vec::new(),
    })
}

/// Recomputes `diagnostics.json` of a finished run from its `samples.csv`.
/// Runtime, schedule, counts and acceptance rate are kept from the existing
/// report when there is one.
pub fn diagnose_run(dir: &Path) -> Result<DiagnosticsReport, CliError> {
    let cfg_path = dir.join("config.resolved");
    let method = match fs::read_to_string(&cfg_path) {
        Ok(text) => {
            let raw = parse_text(&text)?;
            match raw.get("method") {
                Some(m) => m.parse::<Method>().map_err(|e| CliError::Config(format!("method: {e}")))?,
                None => return Err(CliError::Config(format!("{}: method missing", cfg_path.display()))),
            }
        }
        Err(e) => return Err(CliError::Io(format!("{}: {e}", cfg_path.display()))),
    };
    let mut set = read_samples(&dir.join("samples.csv"), method)?;
    let old: Option<DiagnosticsReport> =
        fs::read_to_string(dir.join("diagnostics.json")).ok().and_then(|t| serde_json::from_str(&t).ok());
    if let Some(o) = &old {
        set.schedule = o.schedule.clone();
        set.n_failed_fits = o.n_failed_fits;
        set.n_out_of_support = o.n_out_of_support;
        set.warnings = o.warnings.clone();
    }
    let mut rep = report(&set, old.as_ref().map_or(0.0, |o| o.runtime_seconds))
        .map_err(|e| CliError::Data(format!("samples.csv: {e}")))?;
    if let Some(o) = old {
        rep.acceptance_rate = o.acceptance_rate;
        rep.failure = o.failure;
    }
    let text = serde_json::to_string_pretty(&rep).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(dir.join("diagnostics.json"), text + "\n")?;
    Ok(rep)
}
