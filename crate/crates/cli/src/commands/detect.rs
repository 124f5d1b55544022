use rdvdl_core::metrics::SUSTAIN;
use rdvdl_core::monitor::{debounce, detect, DetectionRecord};

use crate::args::DetectArgs;
use crate::error::{CliError, CliResult};
use crate::io::{
    check_variables, ensure_dir, load_input, load_model, render_detection_chart, sibling, write_detection_csv,
    write_text,
};

/// Replaces each alarm flag with its debounced value over the warm records.
pub fn debounce_records(records: &mut [DetectionRecord]) {
    let warm: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_warm()).collect();
    let d = debounce(&warm.iter().map(|&i| records[i].alarm_d).collect::<Vec<_>>(), SUSTAIN);
    let s = debounce(&warm.iter().map(|&i| records[i].alarm_s).collect::<Vec<_>>(), SUSTAIN);
    for (k, &i) in warm.iter().enumerate() {
        records[i].alarm_d = d[k];
        records[i].alarm_s = s[k];
    }
}

pub fn alarm_fraction(records: &[DetectionRecord]) -> f64 {
    let warm: Vec<&DetectionRecord> = records.iter().filter(|r| r.is_warm()).collect();
    if warm.is_empty() {
        return 0.0;
    }
    warm.iter().filter(|r| r.any_alarm()).count() as f64 / warm.len() as f64
}

pub fn run(args: &DetectArgs) -> CliResult<()> {
    if let Some(t) = args.fail_threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Config(format!(
                "--fail-threshold must lie in [0, 1], got {t}"
            )));
        }
    }
    let model = load_model(&args.model)?;
    let data = load_input(&args.input)?;
    check_variables(&model, &data)?;
    let mut records = detect(&model, data.values())?;
    if args.debounce {
        debounce_records(&mut records);
    }

    ensure_dir(&args.output_dir)?;
    let csv_path = args.output_dir.join("detection.csv");
    write_detection_csv(&csv_path, &records)?;
    let title = format!("Detection: {}", args.input.input.display());
    let svg_path = sibling(&csv_path, "svg");
    write_text(&svg_path, &render_detection_chart(&csv_path, &title)?)?;

    let count = |f: fn(&DetectionRecord) -> bool| records.iter().filter(|r| f(r)).count();
    let fraction = alarm_fraction(&records);
    println!(
        "samples    {} ({} warm-up)",
        records.len(),
        model.lags().min(records.len())
    );
    println!(
        "alarms     T2_d {}  T2_s {}  either {}",
        count(|r| r.alarm_d),
        count(|r| r.alarm_s),
        count(|r| r.any_alarm())
    );
    println!("fraction   {fraction:.4}");
    println!("wrote      {} and {}", csv_path.display(), svg_path.display());
    match args.fail_threshold {
        Some(threshold) if fraction > threshold => Err(CliError::Threshold { fraction, threshold }),
        _ => Ok(()),
    }
}
