use crate::args::DiagnoseArgs;
use crate::error::{CliError, CliResult};
use crate::io::{
    check_variables, ensure_dir, load_input, load_model, render_rbc_chart, sibling, write_rbc_csv, write_text,
};

pub fn run(args: &DiagnoseArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let data = load_input(&args.input)?;
    check_variables(&model, &data)?;
    let n = data.n_samples();
    let start = args.onset as usize - 1;
    if start >= n {
        return Err(CliError::Config(format!(
            "--onset {} lies beyond the {n} samples",
            args.onset
        )));
    }
    let len = match args.window {
        Some(0) => return Err(CliError::Config("--window must be at least 1".into())),
        Some(w) => w.min(n - start),
        None => n - start,
    };
    let rbc = model.rbc_window(&data.values().rows(start, len).into_owned())?;

    ensure_dir(&args.output_dir)?;
    let csv_path = args.output_dir.join("rbc.csv");
    write_rbc_csv(&csv_path, &model.variable_names, &rbc)?;
    let title = format!(
        "Reconstruction-based contribution, samples {}..{}",
        start + 1,
        start + len
    );
    let svg_path = sibling(&csv_path, "svg");
    write_text(&svg_path, &render_rbc_chart(&csv_path, &title)?)?;

    println!("window     samples {}..{}", start + 1, start + len);
    for (rank, &i) in rbc.ranking().iter().take(5).enumerate() {
        println!(
            "#{}         {:<6} {:.4}",
            rank + 1,
            model.variable_names[i],
            rbc.normalized[i]
        );
    }
    if rbc.degenerate.iter().any(|&d| d) {
        log::warn!("some variables have no weight under the contribution metric and were reported as zero");
    }
    println!("wrote      {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}
