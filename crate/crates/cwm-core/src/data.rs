//! Observation container and the CSV interchange format.
//!
//! The file format is a UTF-8, LF-terminated CSV with header
//! `x1,..,xd,y[,label][,trials]`: covariate columns first, the response,
//! an optional 0-based integer group label, and an optional constant trial
//! count for binomial responses.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CwmError, Result};
use crate::exp_family::Family;

/// N observations of a d-dimensional covariate and a scalar response,
/// with optional known labels and an optional binomial trial count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub labels: Option<Vec<usize>>,
    pub trials: Option<u32>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let ds = Self { x, y, labels: None, trials: None };
        ds.check_shape()?;
        Ok(ds)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(CwmError::DimensionMismatch(format!(
                "{} labels for {} observations",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Covariate dimension.
    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    fn check_shape(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(CwmError::DimensionMismatch(format!(
                "{} covariate rows for {} responses",
                self.x.len(),
                self.y.len()
            )));
        }
        let d = self.dim();
        if d == 0 {
            return Err(CwmError::InvalidInput("dataset needs at least one covariate".into()));
        }
        for (i, row) in self.x.iter().enumerate() {
            if row.len() != d {
                return Err(CwmError::DimensionMismatch(format!(
                    "row {i} has {} covariates, expected {d}",
                    row.len()
                )));
            }
        }
        Ok(())
    }

    /// Check every response against the family support, and the trial count
    /// for consistency. Errors name the first offending row.
    pub fn validate_for(&self, family: &Family) -> Result<()> {
        family.validate()?;
        if let (Some(m), Some(ds_m)) = (family.trials(), self.trials) {
            if m != ds_m {
                return Err(CwmError::InvalidInput(format!(
                    "family has {m} trials but the dataset records {ds_m}"
                )));
            }
        }
        for (row, y) in self.y.iter().enumerate() {
            family
                .check_support(*y)
                .map_err(|message| CwmError::SupportViolation { row, message })?;
        }
        for (row, xs) in self.x.iter().enumerate() {
            if let Some(bad) = xs.iter().position(|v| !v.is_finite()) {
                return Err(CwmError::SupportViolation {
                    row,
                    message: format!("covariate x{} is not finite", bad + 1),
                });
            }
        }
        Ok(())
    }

    /// Serialize to the CSV interchange format. Output is byte-deterministic:
    /// shortest round-trip decimal representation, LF line endings.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 1..=d {
            let _ = write!(out, "x{j},");
        }
        out.push('y');
        if self.labels.is_some() {
            out.push_str(",label");
        }
        if self.trials.is_some() {
            out.push_str(",trials");
        }
        out.push('\n');
        for i in 0..self.n() {
            for v in &self.x[i] {
                let _ = write!(out, "{v},");
            }
            let _ = write!(out, "{}", self.y[i]);
            if let Some(labels) = &self.labels {
                let _ = write!(out, ",{}", labels[i]);
            }
            if let Some(m) = self.trials {
                let _ = write!(out, ",{m}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parse the CSV interchange format. Non-finite cells are rejected with
    /// row and column diagnostics; rows are never silently dropped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CwmError::DataError("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();

        let mut x_cols = Vec::new();
        let mut y_col = None;
        let mut label_col = None;
        let mut trials_col = None;
        for (j, name) in cols.iter().enumerate() {
            match *name {
                "y" => y_col = Some(j),
                "label" => label_col = Some(j),
                "trials" => trials_col = Some(j),
                other if other.starts_with('x') && other[1..].parse::<usize>().is_ok() => {
                    x_cols.push((other[1..].parse::<usize>().unwrap(), j));
                }
                other => {
                    return Err(CwmError::DataError(format!(
                        "unrecognized column '{other}' in header"
                    )));
                }
            }
        }
        x_cols.sort_unstable();
        let expected: Vec<usize> = (1..=x_cols.len()).collect();
        if x_cols.is_empty() || x_cols.iter().map(|(k, _)| *k).ne(expected) {
            return Err(CwmError::DataError(
                "covariate columns must be named x1..xd without gaps".into(),
            ));
        }
        let y_col = y_col.ok_or_else(|| CwmError::DataError("missing 'y' column".into()))?;

        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut labels = Vec::new();
        let mut trials: Option<u32> = None;
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<&str> = line.split(',').map(str::trim).collect();
            if row.len() != cols.len() {
                return Err(CwmError::DataError(format!(
                    "row {i}: expected {} cells, found {}",
                    cols.len(),
                    row.len()
                )));
            }
            let cell = |j: usize, what: &str| -> Result<f64> {
                let v: f64 = row[j].parse().map_err(|_| {
                    CwmError::DataError(format!("row {i}, column {what}: cannot parse '{}'", row[j]))
                })?;
                if !v.is_finite() {
                    return Err(CwmError::DataError(format!(
                        "row {i}, column {what}: non-finite value '{}'",
                        row[j]
                    )));
                }
                Ok(v)
            };
            let mut xr = Vec::with_capacity(x_cols.len());
            for (k, j) in &x_cols {
                xr.push(cell(*j, &format!("x{k}"))?);
            }
            x.push(xr);
            y.push(cell(y_col, "y")?);
            if let Some(j) = label_col {
                let v: usize = row[j].parse().map_err(|_| {
                    CwmError::DataError(format!("row {i}, column label: cannot parse '{}'", row[j]))
                })?;
                labels.push(v);
            }
            if let Some(j) = trials_col {
                let v: u32 = row[j].parse().map_err(|_| {
                    CwmError::DataError(format!("row {i}, column trials: cannot parse '{}'", row[j]))
                })?;
                match trials {
                    None => trials = Some(v),
                    Some(prev) if prev == v => {}
                    Some(prev) => {
                        return Err(CwmError::DataError(format!(
                            "row {i}: trials column must be constant ({prev} vs {v})"
                        )));
                    }
                }
            }
        }

        let mut ds = Dataset::new(x, y)?;
        if label_col.is_some() {
            ds = ds.with_labels(labels)?;
        }
        ds.trials = trials;
        Ok(ds)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text)
    }
}
