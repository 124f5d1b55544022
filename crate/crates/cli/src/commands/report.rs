use std::fmt::Write;
use std::fs;
use std::path::PathBuf;

use crate::args::ReportArgs;
use crate::error::{with_path, CliError, CliResult};
use crate::io::{ensure_dir, render_detection_chart, render_rbc_chart, Table};

fn title_for(stem: &str) -> String {
    match stem.strip_prefix("detection_") {
        Some(method) => method.to_uppercase().replace("DI", "Di"),
        None => "Detection".into(),
    }
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let out_dir = args.output_dir.clone().unwrap_or_else(|| args.input.clone());
    ensure_dir(&out_dir)?;
    let mut csvs: Vec<PathBuf> = with_path(fs::read_dir(&args.input), &args.input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    csvs.sort();

    let mut charts = Vec::new();
    for path in &csvs {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let svg = if stem.starts_with("detection") {
            render_detection_chart(path, &title_for(&stem))?
        } else if stem.starts_with("rbc") {
            render_rbc_chart(path, "Reconstruction-based contribution")?
        } else {
            continue;
        };
        let target = out_dir.join(format!("{stem}.svg"));
        with_path(fs::write(&target, svg), &target)?;
        charts.push(format!("{stem}.svg"));
    }
    if charts.is_empty() && !args.input.join("summary.csv").exists() {
        return Err(CliError::Config(format!(
            "{} holds no detection, contribution or summary CSV",
            args.input.display()
        )));
    }

    let mut md = String::from("# Monitoring report\n\n");
    let summary = args.input.join("summary.csv");
    if summary.exists() {
        let t = Table::read(&summary)?;
        md.push_str("| Method | Detection rate | False alarm rate | Detection delay |\n|---|---|---|---|\n");
        for row in &t.rows {
            let cell = |i: usize| row.get(i).map(String::as_str).filter(|c| !c.is_empty()).unwrap_or("-");
            let _ = writeln!(md, "| {} | {} | {} | {} |", cell(0), cell(1), cell(2), cell(3));
        }
        md.push('\n');
    }
    let rbc = args.input.join("rbc.csv");
    if rbc.exists() {
        let t = Table::read(&rbc)?;
        let names = t.text("name")?;
        let values = t.numbers("normalized")?;
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        md.push_str("Top contributions:\n\n");
        for &i in order.iter().take(5) {
            let _ = writeln!(md, "- {} ({:.4})", names[i], values[i]);
        }
        md.push('\n');
    }
    for c in &charts {
        let _ = writeln!(md, "![{c}]({c})");
    }
    let target = out_dir.join("report.md");
    with_path(fs::write(&target, md), &target)?;
    println!("wrote      {} and {} charts", target.display(), charts.len());
    Ok(())
}
