//! File plumbing shared by the subcommands: input loading, result tables
//! and chart rendering from those tables.

use std::fs;
use std::path::{Path, PathBuf};

use rdvdl_core::baselines::StatRecord;
use rdvdl_core::data::{format_float, load_csv_with, CsvOptions, ProcessDataset};
use rdvdl_core::monitor::{DetectionRecord, MonitorModel, Rbc};
use sha2::{Digest, Sha256};

use crate::args::InputArgs;
use crate::error::{with_path, CliError, CliResult};
use crate::svg::{self, Panel};

pub const DETECTION_HEADER: [&str; 7] = ["index", "t2d", "cl_d", "alarm_d", "t2s", "cl_s", "alarm_s"];
pub const BASELINE_HEADER: [&str; 7] = ["index", "t2", "cl_t2", "alarm_t2", "spe", "cl_spe", "alarm_spe"];
pub const RBC_HEADER: [&str; 6] = ["variable", "name", "rbc", "normalized", "rank", "degenerate"];
pub const SUMMARY_HEADER: [&str; 4] = ["method", "detection_rate", "false_alarm_rate", "detection_delay"];

pub fn load_input(args: &InputArgs) -> CliResult<ProcessDataset> {
    load_table(&args.input, args)
}

/// Loads `path` with the header and fill options of `args`.
pub fn load_table(path: &Path, args: &InputArgs) -> CliResult<ProcessDataset> {
    let opts = CsvOptions {
        has_header: !args.no_header,
        forward_fill: args.forward_fill,
    };
    load_csv_with(path, opts).map_err(|e| match e {
        rdvdl_core::Error::Io(io) => CliError::Config(format!("{}: {io}", path.display())),
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}

pub fn load_model(path: &Path) -> CliResult<MonitorModel> {
    MonitorModel::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Checks that a data file matches the model's variables.
pub fn check_variables(model: &MonitorModel, data: &ProcessDataset) -> CliResult<()> {
    if data.n_vars() != model.n_vars() {
        return Err(CliError::Config(format!(
            "input has {} variables, model expects {}",
            data.n_vars(),
            model.n_vars()
        )));
    }
    if data.variable_names() != model.variable_names.as_slice() {
        log::warn!("input column names differ from the training data; matching by position");
    }
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    with_path(fs::create_dir_all(dir), dir)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    with_path(fs::write(path, text), path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Detection table; `index` is the one-based sample number.
pub fn write_detection_csv(path: &Path, records: &[DetectionRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DETECTION_HEADER)?;
    for r in records {
        w.write_record([
            (r.index + 1).to_string(),
            opt(r.t2d),
            format_float(r.cl_d),
            flag(r.alarm_d).into(),
            opt(r.t2s),
            format_float(r.cl_s),
            flag(r.alarm_s).into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_baseline_csv(path: &Path, records: &[StatRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BASELINE_HEADER)?;
    for r in records {
        w.write_record([
            (r.index + 1).to_string(),
            opt(r.t2),
            format_float(r.cl_t2),
            flag(r.alarm_t2).into(),
            opt(r.spe),
            format_float(r.cl_spe),
            flag(r.alarm_spe).into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rbc_csv(path: &Path, names: &[String], rbc: &Rbc) -> CliResult<()> {
    let ranking = rbc.ranking();
    let mut rank = vec![0; names.len()];
    for (r, &i) in ranking.iter().enumerate() {
        rank[i] = r + 1;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RBC_HEADER)?;
    for (i, name) in names.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            name.clone(),
            format_float(rbc.raw[i]),
            format_float(rbc.normalized[i]),
            rank[i].to_string(),
            flag(rbc.degenerate[i]).into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A CSV read back as named string columns.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn has(&self, name: &str) -> bool {
        self.header.iter().any(|h| h == name)
    }

    fn position(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("missing column {name:?}")))
    }

    pub fn text(&self, name: &str) -> CliResult<Vec<String>> {
        let j = self.position(name)?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    /// Numeric column; empty cells become `None`.
    pub fn optional(&self, name: &str) -> CliResult<Vec<Option<f64>>> {
        let j = self.position(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r[j].trim();
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse::<f64>()
                    .map(Some)
                    .map_err(|_| CliError::Config(format!("row {}, column {name}: {cell:?} is not a number", i + 1)))
            })
            .collect()
    }

    pub fn numbers(&self, name: &str) -> CliResult<Vec<f64>> {
        self.optional(name)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| CliError::Config(format!("row {}, column {name} is empty", i + 1))))
            .collect()
    }
}

/// Two-panel chart from a detection or baseline CSV.
pub fn render_detection_chart(csv_path: &Path, title: &str) -> CliResult<String> {
    let table = Table::read(csv_path)?;
    let index = table.numbers("index")?;
    let pairs: [(&str, &str, &str); 2] = if table.has("t2d") {
        [("t2d", "cl_d", "T²_d"), ("t2s", "cl_s", "T²_s")]
    } else {
        [("t2", "cl_t2", "T²"), ("spe", "cl_spe", "SPE")]
    };
    let panels = pairs
        .iter()
        .map(|(stat, cl, label)| {
            Ok(Panel {
                label: label.to_string(),
                index: index.clone(),
                statistic: table.optional(stat)?,
                limit: table.numbers(cl)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(svg::statistic_chart(title, &panels))
}

/// Bar chart of normalized contributions from an RBC CSV.
pub fn render_rbc_chart(csv_path: &Path, title: &str) -> CliResult<String> {
    let table = Table::read(csv_path)?;
    Ok(svg::bar_chart(
        title,
        "Normalized RBC",
        &table.text("name")?,
        &table.numbers("normalized")?,
    ))
}

/// `dir/name` with the extension replaced.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}
