use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rdvdl_core::baselines::{
    fit_dicca, fit_dipca, fit_dpca, fit_pca, train_baseline, BaselineConfig, DynamicLatentModel, Method,
};
use rdvdl_core::data::{apply_scaler, fit_scaler, ProcessDataset};
use rdvdl_core::sim::{inject_fault, pv_column, simulate_normal, FaultSpec, PlantConfig};

fn white(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
}

fn standardized(x: &DMatrix<f64>) -> DMatrix<f64> {
    let data = ProcessDataset::from_matrix(x.clone()).unwrap();
    apply_scaler(&data, &fit_scaler(&data).unwrap())
        .unwrap()
        .values()
        .clone()
}

/// Three channels mixing one sinusoid with faint noise.
fn sinusoid(n: usize) -> DMatrix<f64> {
    let noise = white(n, 3, 17);
    let mix = [1.0, -0.6, 0.3];
    standardized(&DMatrix::from_fn(n, 3, |t, j| {
        mix[j] * (0.3 * t as f64).sin() + 1e-3 * noise[(t, j)]
    }))
}

/// `‖t̂ − t‖ / ‖t‖` of the first latent score.
fn prediction_error(m: &DynamicLatentModel, x: &DMatrix<f64>) -> f64 {
    let scores = m.scores(x);
    let t = scores.column(0).rows(m.lag, x.nrows() - m.lag).into_owned();
    let pred = m.predicted_scores(x).unwrap().column(0).into_owned();
    (&pred - &t).norm() / t.norm()
}

#[test]
fn projectors_complete_the_identity() {
    let x = standardized(&white(300, 6, 1));
    for frac in [0.3, 0.7, 0.9, 1.0] {
        let m = fit_pca(&x, frac).unwrap();
        let sum = m.principal_projector() + m.residual_projector();
        assert!((sum - DMatrix::identity(6, 6)).amax() < 1e-8);
        let all = DMatrix::from_fn(6, 6, |i, j| {
            if j < m.n_components() {
                m.loadings_principal[(i, j)]
            } else {
                m.loadings_residual[(i, j - m.n_components())]
            }
        });
        assert!((all.tr_mul(&all) - DMatrix::identity(6, 6)).amax() < 1e-8);
        let vals: Vec<f64> = m
            .eigvals_principal
            .iter()
            .chain(m.eigvals_residual.iter())
            .copied()
            .collect();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]) && vals.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn isotropic_noise_has_flat_spectrum() {
    let x = standardized(&white(20_000, 4, 2));
    let m = fit_pca(&x, 1.0).unwrap();
    assert!(m.eigvals_principal.iter().all(|v| (v - 1.0).abs() < 0.05));
}

#[test]
fn scores_split_the_squared_norm() {
    let x = standardized(&white(200, 5, 3));
    let m = fit_pca(&x, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let v = DVector::from_fn(5, |_, _| StandardNormal.sample(&mut rng));
        let (spe, _) = m.score(&v).unwrap();
        let inside = m.loadings_principal.tr_mul(&v).norm_squared();
        assert!((spe + inside - v.norm_squared()).abs() < 1e-10);
    }
}

#[test]
fn zero_lag_dpca_is_pca() {
    let x = standardized(&white(150, 4, 5));
    let pca = fit_pca(&x, 0.8).unwrap();
    let dpca = fit_dpca(&x, 0, 0.8).unwrap();
    for i in 0..x.nrows() {
        let v = x.row(i).transpose();
        let (a, b) = (pca.score(&v).unwrap(), dpca.score(std::slice::from_ref(&v)).unwrap());
        assert!((a.0 - b.0).abs() < 1e-10 && (a.1 - b.1).abs() < 1e-10);
    }
    let dpca2 = fit_dpca(&x, 2, 0.8).unwrap();
    assert_eq!(dpca2.pca.n_vars(), 12);
}

#[test]
fn autoregressive_lags_load_together() {
    let n = 20_000;
    let e = white(n, 1, 6);
    let mut x = DMatrix::zeros(n, 1);
    for t in 1..n {
        x[(t, 0)] = 0.9 * x[(t - 1, 0)] + e[(t, 0)];
    }
    let m = fit_dpca(&standardized(&x), 2, 0.5).unwrap();
    // Toeplitz autocorrelation [[1, ρ, ρ²], …] at ρ = 0.9
    let rho = 0.9f64;
    let toeplitz = DMatrix::from_fn(3, 3, |i, j| rho.powi((i as i32 - j as i32).abs()));
    let eig = toeplitz.symmetric_eigen();
    let top = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let lead = m.pca.loadings_principal.column(0).into_owned();
    assert!(lead.dot(&top).abs() > 0.999);
    assert!(lead.iter().all(|v| v * lead[0] > 0.0));
}

#[test]
fn dipca_constraints_hold() {
    let x = sinusoid(500);
    let m = fit_dipca(&x, 2, 2).unwrap();
    for k in 0..2 {
        assert!((m.weights.column(k).norm() - 1.0).abs() < 1e-8);
        assert!((m.ar_coeffs.row(k).norm() - 1.0).abs() < 1e-8);
    }
}

#[test]
fn dicca_score_has_unit_energy() {
    let x = sinusoid(500);
    let m = fit_dicca(&x, 1, 2).unwrap();
    let t = &x * m.weights.column(0);
    let aligned = t.rows(2, t.len() - 2);
    assert!((aligned.norm_squared() - 1.0).abs() < 1e-8);
}

#[test]
fn sinusoid_is_predictable() {
    let x = sinusoid(600);
    for m in [fit_dipca(&x, 1, 2).unwrap(), fit_dicca(&x, 1, 2).unwrap()] {
        let err = prediction_error(&m, &x);
        assert!(err < 0.05, "{:?}: {err}", m.method);
    }
}

#[test]
fn white_noise_is_not_predictable() {
    let x = standardized(&white(2000, 4, 7));
    let dipca = fit_dipca(&x, 1, 2).unwrap();
    let r2 = 1.0 - prediction_error(&dipca, &x).powi(2);
    assert!(r2 < 0.1, "{r2}");

    let dicca = fit_dicca(&x, 1, 2).unwrap();
    let t = &x * dicca.weights.column(0);
    let beta = dicca.ar_coeffs.row(0);
    let mut j = 0.0;
    for k in 2..t.len() {
        let pred = beta[0] * t[k - 1] + beta[1] * t[k - 2];
        j += (t[k] - pred).powi(2);
    }
    assert!((j - 1.0).abs() < 0.05, "{j}");
}

#[test]
fn zero_window_scores_zero() {
    let x = sinusoid(300);
    for m in [fit_dipca(&x, 2, 2).unwrap(), fit_dicca(&x, 2, 2).unwrap()] {
        let w = vec![DVector::zeros(3); 3];
        assert_eq!(m.score(&w).unwrap(), (0.0, 0.0));
        assert!(m.score(&w[..2]).is_err());
    }
}

fn alarm_fraction<'a>(recs: impl Iterator<Item = &'a rdvdl_core::baselines::StatRecord>) -> (f64, f64, f64) {
    let recs: Vec<_> = recs.filter(|r| r.t2.is_some()).collect();
    let n = recs.len() as f64;
    (
        recs.iter().filter(|r| r.alarm_t2).count() as f64 / n,
        recs.iter().filter(|r| r.alarm_spe).count() as f64 / n,
        recs.iter().filter(|r| r.any_alarm()).count() as f64 / n,
    )
}

#[test]
fn training_replay_is_calibrated() {
    let train = simulate_normal(&PlantConfig::awe(), 1000, 31).unwrap();
    for method in Method::ALL {
        let mon = train_baseline(method, &train, &BaselineConfig::default()).unwrap();
        let recs = mon.detect(train.values()).unwrap();
        assert_eq!(recs.iter().filter(|r| r.t2.is_none()).count(), mon.model.lag());
        let (t2, spe, _) = alarm_fraction(recs.iter());
        assert!((0.02..=0.08).contains(&t2), "{method:?} T2 {t2}");
        assert!((0.02..=0.08).contains(&spe), "{method:?} SPE {spe}");
    }
}

#[test]
fn large_shift_is_detected() {
    let cfg = PlantConfig::awe();
    let train = simulate_normal(&cfg, 1000, 31).unwrap();
    let normal = simulate_normal(&cfg, 400, 32).unwrap();
    let spec = FaultSpec::single_step(pv_column(3).unwrap(), 5.0, 201);
    let faulty = inject_fault(&cfg, &normal, &spec).unwrap();
    for method in Method::ALL {
        let mon = train_baseline(method, &train, &BaselineConfig::default()).unwrap();
        let recs = mon.detect(faulty.values()).unwrap();
        let (_, _, any) = alarm_fraction(recs[200..].iter());
        assert!(any > 0.9, "{method:?} {any}");
    }
}
