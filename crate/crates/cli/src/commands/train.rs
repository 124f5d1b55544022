use rdvdl_core::data::ProcessDataset;
use rdvdl_core::monitor::{train_monitor, training_statistics, MonitorModel, TrainConfig, VarFit};
use rdvdl_core::var::VarMode;
use rdvdl_core::vb::{FitOptions, Hyperparams};
use serde::Serialize;

use crate::args::{ModelArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, load_input, sha256_hex, write_text};

/// Validated training settings for data with `p` variables.
pub fn train_config(m: &ModelArgs, p: usize) -> CliResult<TrainConfig> {
    let bad = |msg: String| Err(CliError::Config(msg));
    if !(m.alpha > 0.0 && m.alpha < 1.0) {
        return bad(format!("--alpha must lie in (0, 1), got {}", m.alpha));
    }
    if !(m.tol > 0.0) {
        return bad(format!("--tol must be positive, got {}", m.tol));
    }
    if m.max_iter == 0 || m.restarts == 0 {
        return bad("--max-iter and --restarts must be at least 1".into());
    }
    if m.atoms == Some(0) || m.tmax == Some(0) || m.rank == Some(0) {
        return bad("--atoms, --tmax and --rank must be at least 1".into());
    }
    let var = match (m.rank, m.lambda) {
        (_, Some(l)) if !(l >= 0.0 && l.is_finite()) => return bad(format!("--lambda must be non-negative, got {l}")),
        (_, Some(l)) => VarFit::L1(l),
        (rank, None) => VarFit::Rank(rank),
    };
    let hyperparams = Hyperparams {
        a0: m.a0,
        b0: m.b0,
        c0: m.c0,
        d0: m.d0,
        e0: m.e0,
        f0: m.f0,
        k: m.atoms.unwrap_or(p),
    };
    hyperparams.validate()?;
    Ok(TrainConfig {
        hyperparams: Some(hyperparams),
        atoms: None,
        fit: FitOptions {
            seed: m.seed,
            max_iter: m.max_iter,
            tol: m.tol,
            restarts: m.restarts,
        },
        lags: m.lags as usize,
        var,
        t_max: m.tmax,
        alpha: m.alpha,
        static_weight: m.static_weight.into(),
    })
}

#[derive(Debug, Serialize)]
pub struct TrainingReport {
    pub bundle_sha256: String,
    pub samples: usize,
    pub variables: usize,
    pub atom_budget: usize,
    pub active_atoms: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub elbo_trace: Vec<f64>,
    pub elbo_monotone: bool,
    pub t_max: usize,
    pub lags: usize,
    pub var_mode: String,
    pub var_rank: usize,
    pub alpha: f64,
    pub cl_d: f64,
    pub cl_s: f64,
    pub bandwidth_d: f64,
    pub bandwidth_s: f64,
    pub training_alarm_fraction_d: f64,
    pub training_alarm_fraction_s: f64,
}

fn describe_var(mode: &VarMode) -> String {
    match mode {
        VarMode::Ols => "least squares".into(),
        VarMode::L1 { lambda } => format!("L1 penalty {lambda}"),
        VarMode::RankConstrained { rank } => format!("rank-constrained to {rank}"),
    }
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] - w[0] >= -1e-8 * w[0].abs())
}

pub fn report(model: &MonitorModel, data: &ProcessDataset, bundle: &str) -> CliResult<TrainingReport> {
    let (t2d, t2s) = training_statistics(model, data.values())?;
    let frac = |v: &[f64], cl: f64| v.iter().filter(|&&x| x > cl).count() as f64 / v.len().max(1) as f64;
    let dict = &model.dictionary;
    Ok(TrainingReport {
        bundle_sha256: sha256_hex(bundle.as_bytes()),
        samples: data.n_samples(),
        variables: data.n_vars(),
        atom_budget: dict.hyperparams.k,
        active_atoms: dict.n_active(),
        sweeps: dict.iterations,
        converged: dict.converged,
        elbo_monotone: monotone(&dict.elbo_trace),
        elbo_trace: dict.elbo_trace.clone(),
        t_max: model.t_max,
        lags: model.lags(),
        var_mode: describe_var(&model.var.mode),
        var_rank: model.var.achieved_rank,
        alpha: model.limit_d.alpha,
        cl_d: model.limit_d.cl,
        cl_s: model.limit_s.cl,
        bandwidth_d: model.limit_d.bandwidth,
        bandwidth_s: model.limit_s.bandwidth,
        training_alarm_fraction_d: frac(&t2d, model.limit_d.cl),
        training_alarm_fraction_s: frac(&t2s, model.limit_s.cl),
    })
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let data = load_input(&args.input)?;
    let cfg = train_config(&args.model, data.n_vars())?;
    let model = train_monitor(&data, &cfg)?;
    let bundle = model.to_bundle_string()?;

    ensure_dir(&args.output_dir)?;
    let model_path = args
        .model_path
        .clone()
        .unwrap_or_else(|| args.output_dir.join("model.json"));
    write_text(&model_path, &bundle)?;
    let rep = report(&model, &data, &bundle)?;
    let rep_path = args.output_dir.join("training_report.json");
    write_text(
        &rep_path,
        &serde_json::to_string_pretty(&rep).map_err(|e| CliError::Config(e.to_string()))?,
    )?;

    println!("model      {}", model_path.display());
    println!("sha256     {}", rep.bundle_sha256);
    println!(
        "dictionary {} of {} atoms active, {} sweeps{}",
        rep.active_atoms,
        rep.atom_budget,
        rep.sweeps,
        if rep.converged { "" } else { " (not converged)" }
    );
    println!(
        "VAR        lag {}, {}, achieved rank {}",
        rep.lags, rep.var_mode, rep.var_rank
    );
    println!(
        "limits     T2_d {:.6}  T2_s {:.6}  (alpha {})",
        rep.cl_d, rep.cl_s, rep.alpha
    );
    println!("report     {}", rep_path.display());
    Ok(())
}
