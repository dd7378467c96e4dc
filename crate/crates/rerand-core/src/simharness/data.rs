//! Tabular CSV input: header row required, missing values are hard errors.

use std::io::Read;

use crate::balance::CovariateMatrix;
use crate::error::{Error, Result};

/// A parsed CSV table of strings; typed extraction happens per column.
#[derive(Debug, Clone)]
pub struct DataTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl DataTable {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Data {
                line: 1,
                column: "header".into(),
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() {
            return Err(Error::Data {
                line: 1,
                column: "header".into(),
                message: "empty header row".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i as u64 + 2; // data starts on line 2
            let record = record.map_err(|e| Error::Data {
                line,
                column: "-".into(),
                message: e.to_string(),
            })?;
            if record.len() != headers.len() {
                return Err(Error::Data {
                    line,
                    column: "-".into(),
                    message: format!("expected {} fields, got {}", headers.len(), record.len()),
                });
            }
            rows.push(record.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(Error::InsufficientData("CSV has a header but no data rows".into()));
        }
        Ok(Self { headers, rows })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidConfig(format!("no column named '{name}' (have: {})", self.headers.join(", "))))
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| parse_cell(&row[idx], i as u64 + 2, name))
            .collect()
    }

    pub fn string_column(&self, name: &str) -> Result<Vec<String>> {
        let idx = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[idx].clone()).collect())
    }

    /// All columns except `exclude`, parsed as covariates.
    pub fn covariates_excluding(&self, exclude: &[&str]) -> Result<(CovariateMatrix, Vec<String>)> {
        let names: Vec<String> = self
            .headers
            .iter()
            .filter(|h| !exclude.contains(&h.as_str()))
            .cloned()
            .collect();
        if names.is_empty() {
            return Err(Error::InvalidConfig("no covariate columns remain after exclusions".into()));
        }
        let mut columns = Vec::with_capacity(names.len());
        for name in &names {
            columns.push(self.numeric_column(name)?);
        }
        let rows: Vec<Vec<f64>> = (0..self.n_rows())
            .map(|i| columns.iter().map(|c| c[i]).collect())
            .collect();
        Ok((CovariateMatrix::from_rows(&rows)?, names))
    }

    /// Every column parsed as a covariate.
    pub fn covariates(&self) -> Result<(CovariateMatrix, Vec<String>)> {
        self.covariates_excluding(&[])
    }
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64> {
    if cell.is_empty() {
        return Err(Error::Data {
            line,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    let v: f64 = cell.parse().map_err(|_| Error::Data {
        line,
        column: column.to_string(),
        message: format!("cannot parse '{cell}' as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Data {
            line,
            column: column.to_string(),
            message: format!("non-finite value {v}"),
        });
    }
    Ok(v)
}

/// Covariates + outcome + two-arm labels, ready for the semi-synthetic
/// protocol. Arms map to 0/1 by lexicographic label order (smallest label
/// is control).
#[derive(Debug, Clone)]
pub struct SemiSyntheticData {
    pub covariates: CovariateMatrix,
    pub covariate_names: Vec<String>,
    pub outcome: Vec<f64>,
    pub arm: Vec<u8>,
    pub control_label: String,
    pub treated_label: String,
}

impl SemiSyntheticData {
    pub fn from_table(table: &DataTable, outcome_col: &str, arm_col: &str) -> Result<Self> {
        let outcome = table.numeric_column(outcome_col)?;
        let labels = table.string_column(arm_col)?;
        let mut distinct: Vec<String> = labels.to_vec();
        distinct.sort();
        distinct.dedup();
        if distinct.len() != 2 {
            return Err(Error::InvalidConfig(format!(
                "arm column '{arm_col}' must have exactly 2 distinct labels, got {}",
                distinct.len()
            )));
        }
        let arm: Vec<u8> = labels
            .iter()
            .map(|l| u8::from(*l == distinct[1]))
            .collect();
        let (covariates, covariate_names) = table.covariates_excluding(&[outcome_col, arm_col])?;
        Ok(Self {
            covariates,
            covariate_names,
            outcome,
            arm,
            control_label: distinct[0].clone(),
            treated_label: distinct[1].clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }
}
