//! Column-oriented numeric datasets with missing values.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("duplicate column header '{0}'")]
    DuplicateHeader(String),
    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("{0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<Option<f64>>>) -> Result<Self, DataError> {
        if names.len() != columns.len() {
            return Err(DataError::Invalid("names and columns differ in length".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DataError::DuplicateHeader(n.clone()));
            }
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(DataError::Invalid("columns differ in length".into()));
            }
        }
        Ok(Self { names, columns })
    }

    pub fn from_complete(names: &[&str], columns: Vec<Vec<f64>>) -> Result<Self, DataError> {
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            columns.into_iter().map(|c| c.into_iter().map(Some).collect()).collect(),
        )
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>], DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    /// Column with no missing entries.
    pub fn complete_column(&self, name: &str) -> Result<Vec<f64>, DataError> {
        self.column(name)?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| DataError::Invalid(format!("column '{name}' is missing a value at row {}", i + 1)))
            })
            .collect()
    }

    pub fn missing_mask(&self, name: &str) -> Result<Vec<bool>, DataError> {
        Ok(self.column(name)?.iter().map(|v| v.is_none()).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        for r in 0..self.n_rows() {
            w.write_record(self.columns.iter().map(|c| match c[r] {
                Some(v) => format!("{v:.16e}"),
                None => "NA".to_string(),
            }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), DataError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Reads a headered CSV; `NA` or an empty cell is missing.
pub fn read_csv<R: Read>(input: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DataError::Empty);
    }
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); headers.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        if rec.len() != headers.len() {
            return Err(DataError::RaggedRow { row, expected: headers.len(), found: rec.len() });
        }
        for (c, cell) in rec.iter().enumerate() {
            let v = if cell.is_empty() || cell == "NA" {
                None
            } else {
                let parsed: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                    row,
                    column: headers[c].clone(),
                    value: cell.to_string(),
                })?;
                if !parsed.is_finite() {
                    return Err(DataError::NonNumeric { row, column: headers[c].clone(), value: cell.to_string() });
                }
                Some(parsed)
            };
            columns[c].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(DataError::Empty);
    }
    Dataset::new(headers, columns)
}

pub fn ingest_csv(path: &Path) -> Result<Dataset, DataError> {
    read_csv(std::fs::File::open(path)?)
}
