use nalgebra::DMatrix;
use rdvdl_core::sim::{
    inject_fault, pv_column, simulate_fault, simulate_normal, FaultSpec, PlantConfig, Profile, DEFAULT_ONSET, N_VARS,
};

#[test]
fn radius_of_a_scaled_identity() {
    let mut cfg = PlantConfig::awe();
    cfg.a1 = DMatrix::identity(N_VARS, N_VARS) * 0.5;
    cfg.a2 = DMatrix::zeros(N_VARS, N_VARS);
    assert!((cfg.spectral_radius() - 0.5).abs() < 1e-6);
    // x_t = 0.5 x_{t-1} + 0.3 x_{t-2} has roots (0.5 ± √1.45)/2
    cfg.a2 = DMatrix::identity(N_VARS, N_VARS) * 0.3;
    let root = (0.5 + 1.45f64.sqrt()) / 2.0;
    assert!((cfg.spectral_radius() - root).abs() < 1e-6);
}

#[test]
fn unstable_plant_is_rejected() {
    let mut cfg = PlantConfig::awe();
    cfg.a1 = DMatrix::identity(N_VARS, N_VARS) * 0.97;
    cfg.a2 = DMatrix::zeros(N_VARS, N_VARS);
    assert!(cfg.validate().is_err());
    assert!(simulate_normal(&cfg, 10, 0).is_err());
}

#[test]
fn same_seed_same_data() {
    let cfg = PlantConfig::awe();
    let a = simulate_normal(&cfg, 300, 9).unwrap();
    let b = simulate_normal(&cfg, 300, 9).unwrap();
    let c = simulate_normal(&cfg, 300, 10).unwrap();
    assert_eq!(a.values(), b.values());
    assert_ne!(a.values(), c.values());
    assert_eq!(a.n_vars(), 32);
    assert_eq!(a.variable_names()[0], "CV1");
    assert_eq!(a.variable_names()[10], "PV1");
}

fn lag1_autocorrelation(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

#[test]
fn electrolyzer_temperature_is_slow() {
    let data = simulate_normal(&PlantConfig::awe(), 10_000, 4).unwrap();
    let col: Vec<f64> = data.values().column(pv_column(2).unwrap()).iter().copied().collect();
    let r = lag1_autocorrelation(&col);
    assert!(r > 0.5, "{r}");
}

#[test]
fn faults_leave_the_prefix_untouched() {
    let cfg = PlantConfig::awe();
    let normal = simulate_normal(&cfg, 400, 2).unwrap();
    for id in 1..=10 {
        let spec = FaultSpec::preset(id, DEFAULT_ONSET).unwrap();
        let faulty = inject_fault(&cfg, &normal, &spec).unwrap();
        let pre = DEFAULT_ONSET - 1;
        assert_eq!(normal.values().rows(0, pre), faulty.values().rows(0, pre));
        assert_eq!(faulty, simulate_fault(&cfg, 400, 2, &spec).unwrap());
    }
}

#[test]
fn additive_fault_only_moves_its_columns() {
    let cfg = PlantConfig::awe();
    let normal = simulate_normal(&cfg, 400, 3).unwrap();
    let spec = FaultSpec::preset(1, DEFAULT_ONSET).unwrap();
    let cols = spec.columns();
    assert_eq!(
        cols,
        vec![pv_column(6).unwrap(), pv_column(16).unwrap(), pv_column(17).unwrap()]
    );
    let faulty = inject_fault(&cfg, &normal, &spec).unwrap();
    for j in 0..N_VARS {
        let same = normal.values().column(j) == faulty.values().column(j);
        assert_eq!(same, !cols.contains(&j), "column {j}");
    }
}

#[test]
fn propagated_fault_spreads_through_the_dynamics() {
    let cfg = PlantConfig::awe();
    let mut spec = FaultSpec::preset(1, 101).unwrap();
    spec.propagate = true;
    let normal = simulate_normal(&cfg, 200, 3).unwrap();
    let faulty = simulate_fault(&cfg, 200, 3, &spec).unwrap();
    assert_eq!(normal.values().rows(0, 100), faulty.values().rows(0, 100));
    let moved = (0..N_VARS)
        .filter(|&j| normal.values().column(j) != faulty.values().column(j))
        .count();
    assert!(moved > spec.columns().len());
}

#[test]
fn step_shift_matches_its_magnitude() {
    let cfg = PlantConfig::awe();
    let n = 4000;
    let onset = 2001;
    let col = pv_column(3).unwrap();
    let sd = cfg.measured_std()[col];
    let normal = simulate_normal(&cfg, n, 8).unwrap();
    let spec = FaultSpec::single_step(col, 4.0, onset);
    let faulty = inject_fault(&cfg, &normal, &spec).unwrap();
    let post = faulty.values().column(col).rows(onset - 1, n - onset + 1).mean();
    let post_normal = normal.values().column(col).rows(onset - 1, n - onset + 1).mean();
    assert!(((post - post_normal) / sd - 4.0).abs() < 1e-9);

    // the pre-onset mean is noisy and serially correlated; 0.3 sd is about
    // five standard errors of the difference
    let pre = faulty.values().column(col).rows(0, onset - 1).mean();
    assert!(((post - pre) / sd - 4.0).abs() < 0.3, "{}", (post - pre) / sd);
}

#[test]
fn measured_spread_matches_the_theory() {
    let cfg = PlantConfig::awe();
    let data = simulate_normal(&cfg, 20_000, 12).unwrap();
    let sd = cfg.measured_std();
    for j in [0, 5, pv_column(2).unwrap(), pv_column(8).unwrap()] {
        let c = data.values().column(j);
        let m = c.mean();
        let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64).sqrt();
        assert!((s / sd[j] - 1.0).abs() < 0.1, "column {j}: {s} vs {}", sd[j]);
    }
}

#[test]
fn bad_fault_specs_are_errors() {
    let cfg = PlantConfig::awe();
    let data = simulate_normal(&cfg, 100, 1).unwrap();
    assert!(inject_fault(&cfg, &data, &FaultSpec::preset(1, 101).unwrap()).is_err());
    assert!(inject_fault(&cfg, &data, &FaultSpec::preset(1, 0).unwrap()).is_err());
    assert!(inject_fault(&cfg, &data, &FaultSpec::single_step(32, 1.0, 5)).is_err());
    assert!(FaultSpec::preset(0, 201).is_err());
    assert!(FaultSpec::preset(11, 201).is_err());
    assert!(inject_fault(&cfg, &data, &FaultSpec::preset(1, 100).unwrap()).is_ok());
}

#[test]
fn only_three_presets_are_tuned() {
    let tuned: Vec<u8> = (1..=10)
        .filter(|&id| FaultSpec::preset(id, 201).unwrap().tuned)
        .collect();
    assert_eq!(tuned, vec![1, 5, 9]);
    let f5 = FaultSpec::preset(5, 201).unwrap();
    let slopes: Vec<f64> = f5
        .effects
        .iter()
        .map(|e| match e.profile {
            Profile::Ramp { slope } => slope,
            _ => f64::NAN,
        })
        .collect();
    assert!(slopes[0] > 0.0 && slopes[1] < 0.0);
}
