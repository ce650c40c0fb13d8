//! Observational-data representation, CSV ingestion, and data-quality checks.
//!
//! The central type is [`ObservationalDataset`]: covariates for every unit, a
//! binary treatment flag, and an outcome that is observed only for untreated
//! units (treated outcomes may be present in simulation ground-truth mode).

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in &rows {
            if r.len() != n_cols {
                return Err(Error::InvalidDataset("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n_rows, n_cols, data })
    }

    pub fn from_vec(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::InvalidDataset("matrix shape mismatch".into()));
        }
        Ok(Self { n_rows, n_cols, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1))
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows).map(move |i| self.get(i, j))
    }

    /// New matrix keeping only the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            for &j in cols {
                data.push(self.get(i, j));
            }
        }
        Matrix { n_rows: self.n_rows, n_cols: cols.len(), data }
    }

    /// New matrix keeping the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Matrix { n_rows: rows.len(), n_cols: self.n_cols, data }
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }
}

/// Covariates, treatment, and partially observed outcome for `n` units.
///
/// Immutable after construction; shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    covariates: Matrix,
    treatment: Vec<u8>,
    outcome: Vec<Option<u8>>,
    feature_names: Vec<String>,
}

/// True mean outcome over treated units; only available when all treated
/// outcomes are known (simulation or held-out evaluation mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub true_treated_mean: f64,
}

impl ObservationalDataset {
    pub fn new(
        covariates: Matrix,
        treatment: Vec<u8>,
        outcome: Vec<Option<u8>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.n_rows();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::InvalidDataset(format!(
                "length mismatch: {} covariate rows, {} treatment, {} outcome",
                n,
                treatment.len(),
                outcome.len()
            )));
        }
        if feature_names.len() != covariates.n_cols() {
            return Err(Error::InvalidDataset("feature name count != column count".into()));
        }
        if treatment.iter().any(|&w| w > 1) {
            return Err(Error::InvalidDataset("treatment must be 0 or 1".into()));
        }
        for (i, (&w, y)) in treatment.iter().zip(&outcome).enumerate() {
            if w == 0 && y.is_none() {
                return Err(Error::InvalidDataset(format!(
                    "untreated unit {i} has missing outcome"
                )));
            }
            if let Some(v) = y {
                if *v > 1 {
                    return Err(Error::InvalidDataset("outcome must be 0 or 1".into()));
                }
            }
        }
        if covariates.has_non_finite() {
            return Err(Error::InvalidDataset("covariates contain NaN/Inf".into()));
        }
        Ok(Self { covariates, treatment, outcome, feature_names })
    }

    pub fn n_units(&self) -> usize {
        self.treatment.len()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[Option<u8>] {
        &self.outcome
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n_units()).filter(|&i| self.treatment[i] == 1).collect()
    }

    pub fn untreated_indices(&self) -> Vec<usize> {
        (0..self.n_units()).filter(|&i| self.treatment[i] == 0).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&w| w == 1).count()
    }

    pub fn n_untreated(&self) -> usize {
        self.n_units() - self.n_treated()
    }

    /// Outcomes of untreated units, in index order. Always fully observed.
    pub fn untreated_outcomes(&self) -> Vec<u8> {
        self.untreated_indices().iter().map(|&i| self.outcome[i].unwrap()).collect()
    }

    /// True if some treated unit carries an observed outcome.
    pub fn has_treated_outcomes(&self) -> bool {
        self.treatment
            .iter()
            .zip(&self.outcome)
            .any(|(&w, y)| w == 1 && y.is_some())
    }

    /// Estimator-facing view: treated outcomes hidden.
    pub fn mask_treated(&self) -> ObservationalDataset {
        let outcome = self
            .treatment
            .iter()
            .zip(&self.outcome)
            .map(|(&w, y)| if w == 1 { None } else { *y })
            .collect();
        ObservationalDataset {
            covariates: self.covariates.clone(),
            treatment: self.treatment.clone(),
            outcome,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Row resample (with repeats) preserving all per-unit fields.
    pub fn select_rows(&self, rows: &[usize]) -> ObservationalDataset {
        ObservationalDataset {
            covariates: self.covariates.select_rows(rows),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Mean outcome over treated units; requires every treated outcome known.
    pub fn true_treated_mean(&self) -> Result<GroundTruth> {
        let treated = self.treated_indices();
        if treated.is_empty() {
            return Err(Error::InvalidDataset("no treated units".into()));
        }
        let mut sum = 0.0;
        for &i in &treated {
            match self.outcome[i] {
                Some(y) => sum += y as f64,
                None => {
                    return Err(Error::InvalidDataset(format!(
                        "treated unit {i} has unknown outcome"
                    )))
                }
            }
        }
        Ok(GroundTruth { true_treated_mean: sum / treated.len() as f64 })
    }

    /// Writes the generic CSV schema (feature columns + `__treatment` +
    /// `__outcome`, empty cell where the outcome is missing).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("__treatment".into());
        header.push("__outcome".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n_units() {
            let mut cells: Vec<String> = self.covariates.row(i).iter().map(|v| format!("{v}")).collect();
            cells.push(format!("{}", self.treatment[i]));
            cells.push(self.outcome[i].map_or(String::new(), |y| format!("{y}")));
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Loads the generic dataset CSV (`__treatment` / `__outcome` columns required).
pub fn load_generic_csv(path: &Path) -> Result<ObservationalDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let treat_col = headers
        .iter()
        .position(|h| h == "__treatment")
        .ok_or_else(|| Error::MissingColumn("__treatment".into()))?;
    let out_col = headers
        .iter()
        .position(|h| h == "__outcome")
        .ok_or_else(|| Error::MissingColumn("__outcome".into()))?;
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|&j| j != treat_col && j != out_col).collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&j| headers[j].clone()).collect();

    let mut rows = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(feature_cols.len());
        for &j in &feature_cols {
            row.push(parse_cell(record.get(j).unwrap_or(""), row_idx, &headers[j])?);
        }
        rows.push(row);
        let w = record.get(treat_col).unwrap_or("").trim();
        treatment.push(match w {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    row: row_idx,
                    column: "__treatment".into(),
                    message: format!("expected 0 or 1, got `{other}`"),
                })
            }
        });
        let y = record.get(out_col).unwrap_or("").trim();
        outcome.push(match y {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => {
                return Err(Error::Parse {
                    row: row_idx,
                    column: "__outcome".into(),
                    message: format!("expected 0, 1, or empty, got `{other}`"),
                })
            }
        });
    }
    ObservationalDataset::new(Matrix::from_rows(rows)?, treatment, outcome, feature_names)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|e| Error::Parse {
        row,
        column: column.to_string(),
        message: e.to_string(),
    })
}

/// Credit-card file contents before a treatment policy exists: 30 feature
/// columns (Time, V1..V28, Amount) plus the fraud label.
#[derive(Debug, Clone)]
pub struct CreditCardPrecursor {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
}

/// Expected schema of the Kaggle credit-card file, matched by name.
pub fn creditcard_columns() -> Vec<String> {
    let mut cols = vec!["Time".to_string()];
    cols.extend((1..=28).map(|i| format!("V{i}")));
    cols.push("Amount".to_string());
    cols
}

/// Loads the credit-card CSV: header with Time, V1..V28, Amount, Class in any
/// order; returns features in canonical column order plus the Class labels.
pub fn load_creditcard_csv(path: &Path) -> Result<CreditCardPrecursor> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().trim_matches('"').to_string())
        .collect();
    let feature_names = creditcard_columns();
    let mut feature_cols = Vec::with_capacity(feature_names.len());
    for name in &feature_names {
        let j = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))?;
        feature_cols.push(j);
    }
    let class_col = headers
        .iter()
        .position(|h| h == "Class")
        .ok_or_else(|| Error::MissingColumn("Class".into()))?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(feature_cols.len());
        for (&j, name) in feature_cols.iter().zip(&feature_names) {
            row.push(parse_cell(record.get(j).unwrap_or(""), row_idx, name)?);
        }
        rows.push(row);
        let label = record.get(class_col).unwrap_or("").trim().trim_matches('"');
        labels.push(match label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    row: row_idx,
                    column: "Class".into(),
                    message: format!("expected 0 or 1, got `{other}`"),
                })
            }
        });
    }
    Ok(CreditCardPrecursor { features: Matrix::from_rows(rows)?, labels, feature_names })
}

/// Numeric table that may contain missing cells; the input to null-rate
/// validation before a dataset is constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

/// Per-column null rates plus the validation verdict.
#[derive(Debug, Clone)]
pub struct NullRateReport {
    pub column_names: Vec<String>,
    pub null_rates: Vec<f64>,
    pub failing_columns: Vec<String>,
    pub dropped_rows: usize,
    pub passed: bool,
    /// Present only when the check passes: the table with every
    /// missing-cell row removed.
    pub cleaned: Option<RawTable>,
}

/// Flags columns whose null fraction exceeds `threshold`; on pass, drops rows
/// with any missing cell and reports how many were dropped.
pub fn validate_null_rates(table: &RawTable, threshold: f64) -> Result<NullRateReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} not in [0,1]")));
    }
    let n_rows = table.rows.len();
    let n_cols = table.column_names.len();
    let mut null_counts = vec![0usize; n_cols];
    for row in &table.rows {
        if row.len() != n_cols {
            return Err(Error::InvalidDataset("ragged rows".into()));
        }
        for (j, cell) in row.iter().enumerate() {
            if cell.is_none() {
                null_counts[j] += 1;
            }
        }
    }
    let null_rates: Vec<f64> = null_counts
        .iter()
        .map(|&c| if n_rows == 0 { 0.0 } else { c as f64 / n_rows as f64 })
        .collect();
    let failing_columns: Vec<String> = table
        .column_names
        .iter()
        .zip(&null_rates)
        .filter(|(_, &r)| r > threshold)
        .map(|(name, _)| name.clone())
        .collect();
    if !failing_columns.is_empty() {
        return Ok(NullRateReport {
            column_names: table.column_names.clone(),
            null_rates,
            failing_columns,
            dropped_rows: 0,
            passed: false,
            cleaned: None,
        });
    }
    let kept: Vec<Vec<Option<f64>>> = table
        .rows
        .iter()
        .filter(|row| row.iter().all(|c| c.is_some()))
        .cloned()
        .collect();
    let dropped_rows = n_rows - kept.len();
    Ok(NullRateReport {
        column_names: table.column_names.clone(),
        null_rates,
        failing_columns: Vec::new(),
        dropped_rows,
        passed: true,
        cleaned: Some(RawTable { column_names: table.column_names.clone(), rows: kept }),
    })
}
