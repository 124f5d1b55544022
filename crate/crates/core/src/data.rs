//! Process datasets, standardization and lagged regression matrices.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns with a standard deviation below this are treated as flatlined.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Multivariate time series, one row per sample and one column per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessDataset {
    values: DMatrix<f64>,
    variable_names: Vec<String>,
    timestamps: Option<Vec<f64>>,
}

impl ProcessDataset {
    /// Builds a dataset, checking shape, finiteness and name uniqueness.
    pub fn new(values: DMatrix<f64>, variable_names: Vec<String>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: values.nrows(),
            });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset has no variables".into()));
        }
        if variable_names.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} variable names for {} columns",
                variable_names.len(),
                values.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for name in &variable_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate variable name {name:?}")));
            }
        }
        for (j, col) in values.column_iter().enumerate() {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: i + 1,
                    col: Some(j + 1),
                    msg: "non-finite value".into(),
                });
            }
        }
        Ok(Self {
            values,
            variable_names,
            timestamps: None,
        })
    }

    /// Builds a dataset with generated names `V1..VP`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let names = default_names(values.ncols());
        Self::new(values, names)
    }

    pub fn with_timestamps(mut self, timestamps: Vec<f64>) -> Result<Self> {
        if timestamps.len() != self.n_samples() {
            return Err(Error::Dimension(format!(
                "{} timestamps for {} samples",
                timestamps.len(),
                self.n_samples()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("timestamps are not monotone".into()));
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    /// Sample `i` as a column vector.
    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Rows `start..end` as a new dataset (keeps names and timestamps).
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_samples() {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{end} out of bounds for {} samples",
                self.n_samples()
            )));
        }
        let mut out = Self::new(
            self.values.rows(start, end - start).into_owned(),
            self.variable_names.clone(),
        )?;
        out.timestamps = self.timestamps.as_ref().map(|t| t[start..end].to_vec());
        Ok(out)
    }

    /// Same names and timestamps, new values.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::Dimension(format!(
                "replacement values {:?} differ from {:?}",
                values.shape(),
                self.values.shape()
            )));
        }
        let mut out = Self::new(values, self.variable_names.clone())?;
        out.timestamps = self.timestamps.clone();
        Ok(out)
    }
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("V{j}")).collect()
}

/// Options for [`load_csv_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Replace non-finite or empty cells with the previous row's value
    /// instead of rejecting the file.
    pub forward_fill: bool,
}

pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<ProcessDataset> {
    load_csv_with(
        path,
        CsvOptions {
            has_header,
            forward_fill: false,
        },
    )
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: CsvOptions) -> Result<ProcessDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, opts)
}

/// Parses CSV text. Rows are 1-based data rows (the header is not counted).
pub fn read_csv<R: Read>(reader: R, opts: CsvOptions) -> Result<ProcessDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut names: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: line + 1,
            col: None,
            msg: e.to_string(),
        })?;
        if line == 0 && opts.has_header {
            let header: Vec<String> = record.iter().map(str::to_string).collect();
            width = Some(header.len());
            names = Some(header);
            continue;
        }
        let row_idx = rows.len() + 1;
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row: row_idx,
                    col: None,
                    msg: format!("expected {w} columns, found {}", record.len()),
                })
            }
            None => width = Some(record.len()),
            _ => {}
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            let value = match (parsed, opts.forward_fill, rows.last()) {
                (Some(v), _, _) => v,
                (None, true, Some(prev)) => prev[j],
                _ => {
                    return Err(Error::Parse {
                        row: row_idx,
                        col: Some(j + 1),
                        msg: format!("cell {cell:?} is not a finite number"),
                    })
                }
            };
            row.push(value);
        }
        rows.push(row);
    }

    let p = width.unwrap_or(0);
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let values = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    ProcessDataset::new(values, names.unwrap_or_else(|| default_names(p)))
}

/// Writes a dataset with a header row.
pub fn write_csv(path: impl AsRef<Path>, data: &ProcessDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_io)?;
    wtr.write_record(data.variable_names()).map_err(csv_io)?;
    for row in data.values().row_iter() {
        wtr.write_record(row.iter().map(|v| format_float(*v))).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the identical `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Per-column z-scoring fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    /// Columns whose spread was below [`DEGENERATE_STD`]; these are centred
    /// but scaled by 1.
    pub degenerate: Vec<bool>,
}

impl Scaler {
    pub fn n_vars(&self) -> usize {
        self.means.len()
    }

    pub fn has_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }

    pub fn scale_sample(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |j, _| (x[j] - self.means[j]) / self.stddevs[j])
    }

    pub fn unscale_sample(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |j, _| z[j] * self.stddevs[j] + self.means[j])
    }

    pub fn scale_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.stddevs[j]
        })
    }
}

/// Column means and N-1 standard deviations.
pub fn fit_scaler(data: &ProcessDataset) -> Result<Scaler> {
    let x = data.values();
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mut means = Vec::with_capacity(x.ncols());
    let mut stddevs = Vec::with_capacity(x.ncols());
    let mut degenerate = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        means.push(mean);
        if sd < DEGENERATE_STD {
            stddevs.push(1.0);
            degenerate.push(true);
        } else {
            stddevs.push(sd);
            degenerate.push(false);
        }
    }
    if degenerate.iter().any(|&d| d) {
        let flat: Vec<&str> = data
            .variable_names()
            .iter()
            .zip(&degenerate)
            .filter(|(_, &d)| d)
            .map(|(n, _)| n.as_str())
            .collect();
        log::warn!("constant columns scaled by 1: {}", flat.join(", "));
    }
    Ok(Scaler {
        means,
        stddevs,
        degenerate,
    })
}

pub fn apply_scaler(data: &ProcessDataset, scaler: &Scaler) -> Result<ProcessDataset> {
    check_width(data, scaler)?;
    data.with_values(scaler.scale_matrix(data.values()))
}

pub fn unscale(data: &ProcessDataset, scaler: &Scaler) -> Result<ProcessDataset> {
    check_width(data, scaler)?;
    let x = data.values();
    data.with_values(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        x[(i, j)] * scaler.stddevs[j] + scaler.means[j]
    }))
}

fn check_width(data: &ProcessDataset, scaler: &Scaler) -> Result<()> {
    if data.n_vars() != scaler.n_vars() {
        return Err(Error::Dimension(format!(
            "dataset has {} variables, scaler has {}",
            data.n_vars(),
            scaler.n_vars()
        )));
    }
    Ok(())
}

/// Regression matrices of a VAR(d): `z` holds the targets and row `t` of `q`
/// holds the `d` preceding samples, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LagMatrices {
    pub z: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub d: usize,
}

impl LagMatrices {
    pub fn n_vars(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.z.nrows()
    }
}

pub fn build_lag_matrices(series: &DMatrix<f64>, d: usize) -> Result<LagMatrices> {
    if d == 0 {
        return Err(Error::InvalidArgument("lag order must be at least 1".into()));
    }
    let (n, p) = series.shape();
    if n <= d {
        return Err(Error::InsufficientHistory { lag: d, got: n });
    }
    let rows = n - d;
    let z = series.rows(d, rows).into_owned();
    let q = DMatrix::from_fn(rows, p * d, |t, c| {
        let lag = c / p + 1;
        series[(t + d - lag, c % p)]
    });
    Ok(LagMatrices { z, q, d })
}

/// Stacks `[x_t, x_{t-1}, ..., x_{t-lag}]` (newest first) for every `t >= lag`.
pub fn augment_lags(series: &DMatrix<f64>, lag: usize) -> Result<DMatrix<f64>> {
    let (n, p) = series.shape();
    if n <= lag {
        return Err(Error::InsufficientHistory { lag, got: n });
    }
    Ok(DMatrix::from_fn(n - lag, p * (lag + 1), |t, c| {
        series[(t + lag - c / p, c % p)]
    }))
}
