//! Vector autoregression on reconstructed samples, fitted by least squares,
//! by L1-penalized least squares, or under a hard rank constraint.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LagMatrices;
use crate::error::{Error, Result};

/// Singular values below `RANK_TOL · σ_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarMode {
    Ols,
    L1 { lambda: f64 },
    RankConstrained { rank: usize },
}

/// Stacked VAR coefficients: `ψ_t ≈ Aᵀ [ψ_{t-1}; …; ψ_{t-d}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    /// (n·d)×n coefficient matrix.
    pub a: DMatrix<f64>,
    pub d: usize,
    pub mode: VarMode,
    pub achieved_rank: usize,
}

impl VarModel {
    pub fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    /// One-step prediction from the stacked lag vector (newest first).
    pub fn predict(&self, lagged: &DVector<f64>) -> Result<DVector<f64>> {
        if lagged.len() != self.a.nrows() {
            return Err(Error::Dimension(format!(
                "lag vector has {} entries, model expects {}",
                lagged.len(),
                self.a.nrows()
            )));
        }
        Ok(self.a.tr_mul(lagged))
    }
}

/// Number of singular values above `RANK_TOL · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

fn check_lags(lags: &LagMatrices) -> Result<()> {
    if lags.n_rows() == 0 {
        return Err(Error::InsufficientHistory {
            lag: lags.d,
            got: lags.d,
        });
    }
    if lags.q.ncols() != lags.z.ncols() * lags.d || lags.q.nrows() != lags.z.nrows() {
        return Err(Error::Dimension(format!(
            "lag matrices are inconsistent: Z is {}x{}, Q is {}x{} at d = {}",
            lags.z.nrows(),
            lags.z.ncols(),
            lags.q.nrows(),
            lags.q.ncols(),
            lags.d
        )));
    }
    if lags.n_rows() < lags.q.ncols() {
        log::warn!(
            "only {} regression rows for {} lagged regressors",
            lags.n_rows(),
            lags.q.ncols()
        );
    }
    Ok(())
}

fn ols_coefficients(lags: &LagMatrices) -> Result<DMatrix<f64>> {
    let svd = lags.q.clone().svd(true, true);
    let top = svd.singular_values.max();
    let tol = RANK_TOL * top.max(f64::MIN_POSITIVE);
    let deficient = svd.singular_values.iter().filter(|&&s| s <= tol).count();
    if deficient > 0 {
        log::info!("lag matrix is rank deficient; minimum-norm solution drops {deficient} directions");
    }
    svd.solve(&lags.z, tol)
        .map_err(|e| Error::Numerical(format!("least squares VAR fit failed: {e}")))
}

/// Ordinary least squares through the pseudo-inverse of `Q`.
pub fn fit_var_ols(lags: &LagMatrices) -> Result<VarModel> {
    check_lags(lags)?;
    let a = ols_coefficients(lags)?;
    Ok(VarModel {
        achieved_rank: numerical_rank(&a),
        a,
        d: lags.d,
        mode: VarMode::Ols,
    })
}

/// `½‖Z − QA‖²_F + λ‖A‖₁` with the elementwise L1 norm.
pub fn l1_objective(lags: &LagMatrices, a: &DMatrix<f64>, lambda: f64) -> f64 {
    0.5 * (&lags.z - &lags.q * a).norm_squared() + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
}

const ISTA_MAX_ITER: usize = 10_000;
const ISTA_TOL: f64 = 1e-8;

/// Largest eigenvalue of `QᵀQ` by power iteration.
fn gram_spectral_norm(q: &DMatrix<f64>) -> f64 {
    let n = q.ncols();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut value = 0.0;
    for _ in 0..100 {
        let w = q.tr_mul(&(q * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        let done = (next - value).abs() <= 1e-10 * next.abs();
        value = next;
        if done {
            break;
        }
    }
    value
}

fn soft_threshold(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    m.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

/// L1-penalized least squares by proximal gradient (ISTA) with
/// backtracking on the step size. `λ = 0` is solved directly as OLS.
pub fn fit_var_l1(lags: &LagMatrices, lambda: f64) -> Result<VarModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        let mut model = fit_var_ols(lags)?;
        model.mode = VarMode::L1 { lambda };
        return Ok(model);
    }
    check_lags(lags)?;
    let (q, z) = (&lags.q, &lags.z);
    let qtq = q.tr_mul(q);
    let qtz = q.tr_mul(z);
    let smooth = |a: &DMatrix<f64>| 0.5 * (z - q * a).norm_squared();

    let mut lip = gram_spectral_norm(q).max(f64::MIN_POSITIVE);
    let mut a = DMatrix::zeros(q.ncols(), z.ncols());
    let mut obj = l1_objective(lags, &a, lambda);
    for _ in 0..ISTA_MAX_ITER {
        let grad = &qtq * &a - &qtz;
        let f_a = smooth(&a);
        let next = loop {
            let cand = soft_threshold(&(&a - &grad / lip), lambda / lip);
            let step = &cand - &a;
            let bound = f_a + grad.dot(&step) + 0.5 * lip * step.norm_squared();
            if smooth(&cand) <= bound * (1.0 + 1e-14) + 1e-300 {
                break cand;
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::Numerical("ISTA step size underflowed".into()));
            }
        };
        let next_obj = l1_objective(lags, &next, lambda);
        if next_obj > obj * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::Numerical(format!(
                "ISTA objective increased: {obj} -> {next_obj}"
            )));
        }
        let rel = (obj - next_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        a = next;
        obj = next_obj;
        if rel < ISTA_TOL {
            break;
        }
    }
    Ok(VarModel {
        achieved_rank: numerical_rank(&a),
        a,
        d: lags.d,
        mode: VarMode::L1 { lambda },
    })
}

/// Reduced-rank regression: the OLS coefficients projected onto the top
/// `rank` right singular vectors of the fitted values `Q Â_ols`.
pub fn fit_var_rank(lags: &LagMatrices, rank: usize) -> Result<VarModel> {
    check_lags(lags)?;
    let max_rank = lags.q.ncols().min(lags.z.ncols());
    if rank == 0 || rank > max_rank {
        return Err(Error::InvalidArgument(format!(
            "rank must lie in 1..={max_rank}, got {rank}"
        )));
    }
    let ols = ols_coefficients(lags)?;
    let fitted = &lags.q * &ols;
    let svd = fitted.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let keep: Vec<usize> = order.into_iter().take(rank).collect();
    let v_s = v_t.select_rows(&keep).transpose();
    let a = &ols * &v_s * v_s.transpose();
    Ok(VarModel {
        achieved_rank: numerical_rank(&a),
        a,
        d: lags.d,
        mode: VarMode::RankConstrained { rank },
    })
}

/// Rank at the largest ratio between consecutive singular values of the
/// OLS coefficients.
pub fn elbow_rank(lags: &LagMatrices) -> Result<usize> {
    check_lags(lags)?;
    let ols = ols_coefficients(lags)?;
    let mut sv: Vec<f64> = ols.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv.len() < 2 || sv[0] == 0.0 {
        return Ok(1);
    }
    let floor = RANK_TOL * sv[0];
    let mut best = (1, 0.0);
    for i in 0..sv.len() - 1 {
        let ratio = sv[i] / sv[i + 1].max(floor);
        if ratio > best.1 {
            best = (i + 1, ratio);
        }
    }
    Ok(best.0)
}

/// Innovation rows `z_t − Aᵀ v_t`.
pub fn var_residual(model: &VarModel, lags: &LagMatrices) -> Result<DMatrix<f64>> {
    if lags.q.ncols() != model.a.nrows() || lags.z.ncols() != model.a.ncols() {
        return Err(Error::Dimension(format!(
            "model is {}x{}, lag matrices have {} regressors and {} targets",
            model.a.nrows(),
            model.a.ncols(),
            lags.q.ncols(),
            lags.z.ncols()
        )));
    }
    Ok(&lags.z - &lags.q * &model.a)
}
