use std::path::Path;
use std::thread;

use rdvdl_core::baselines::{train_baseline, BaselineConfig, Method, StatRecord};
use rdvdl_core::metrics::{summarize, DetectionSummary};
use rdvdl_core::monitor::{detect, train_monitor};

use crate::args::BaselineArgs;
use crate::commands::train::train_config;
use crate::error::{CliError, CliResult};
use crate::io::{
    check_variables, ensure_dir, load_input, load_model, load_table, render_detection_chart, sibling,
    write_baseline_csv, write_detection_csv, write_text, SUMMARY_HEADER,
};

pub const RDVDL: &str = "RDVDL";

pub struct Row {
    pub method: &'static str,
    pub summary: DetectionSummary,
}

fn write_summary(path: &Path, rows: &[Row]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            format!("{:.6}", r.summary.detection_rate),
            format!("{:.6}", r.summary.false_alarm_rate),
            r.summary.detection_delay.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn baseline_alarms(records: &[StatRecord]) -> Vec<Option<bool>> {
    records.iter().map(|r| r.t2.map(|_| r.any_alarm())).collect()
}

pub fn run(args: &BaselineArgs) -> CliResult<()> {
    let train = load_table(&args.train, &args.input)?;
    let test = load_input(&args.input)?;
    if train.n_vars() != test.n_vars() {
        return Err(CliError::Config(
            "--train and --input have different variable counts".into(),
        ));
    }
    let onset = args.onset as usize - 1;
    if onset >= test.n_samples() {
        return Err(CliError::Config(format!(
            "--onset {} lies beyond the {} samples of --input",
            args.onset,
            test.n_samples()
        )));
    }
    let s = &args.settings;
    let base_cfg = BaselineConfig {
        variance_fraction: args.variance_fraction,
        lags: s.lags as usize,
        components: args.components,
        alpha: s.alpha,
    };
    let model = match &args.model {
        Some(path) => load_model(path)?,
        None => train_monitor(&train, &train_config(s, train.n_vars())?)?,
    };
    check_variables(&model, &test)?;

    let results: Vec<CliResult<Vec<StatRecord>>> = thread::scope(|scope| {
        let handles: Vec<_> = Method::ALL
            .iter()
            .map(|&m| {
                let (train, test, cfg) = (&train, &test, &base_cfg);
                scope.spawn(move || -> CliResult<Vec<StatRecord>> {
                    Ok(train_baseline(m, train, cfg)?.detect(test.values())?)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(CliError::Numerical("baseline worker panicked".into())))
            })
            .collect()
    });

    ensure_dir(&args.output_dir)?;
    let mut rows = Vec::new();
    let records = detect(&model, test.values())?;
    let path = args.output_dir.join("detection_rdvdl.csv");
    write_detection_csv(&path, &records)?;
    write_text(&sibling(&path, "svg"), &render_detection_chart(&path, RDVDL)?)?;
    let alarms: Vec<Option<bool>> = records.iter().map(|r| r.t2d.map(|_| r.any_alarm())).collect();
    rows.push(Row {
        method: RDVDL,
        summary: summarize(&alarms, onset, args.settle),
    });
    for (method, result) in Method::ALL.iter().zip(results) {
        let recs = result?;
        let path = args
            .output_dir
            .join(format!("detection_{}.csv", method.name().to_lowercase()));
        write_baseline_csv(&path, &recs)?;
        write_text(&sibling(&path, "svg"), &render_detection_chart(&path, method.name())?)?;
        rows.push(Row {
            method: method.name(),
            summary: summarize(&baseline_alarms(&recs), onset, args.settle),
        });
    }
    let summary_path = args.output_dir.join("summary.csv");
    write_summary(&summary_path, &rows)?;

    println!(
        "{:<8} {:>14} {:>16} {:>15}",
        "method", "detection rate", "false alarm rate", "detection delay"
    );
    for r in &rows {
        let delay = r
            .summary
            .detection_delay
            .map(|d| d.to_string())
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<8} {:>14.4} {:>16.4} {:>15}",
            r.method, r.summary.detection_rate, r.summary.false_alarm_rate, delay
        );
    }
    println!("wrote      {}", summary_path.display());
    Ok(())
}
