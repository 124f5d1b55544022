//! Reference monitors: PCA, dynamic PCA on lag-augmented samples, and the
//! dynamic-inner latent models DiPCA and DiCCA.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{apply_scaler, augment_lags, build_lag_matrices, fit_scaler, ProcessDataset, Scaler};
use crate::error::{Error, Result};
use crate::monitor::{fit_limit, KdeLimit};
use crate::var::{fit_var_ols, VarModel};

/// Eigenvalues at or below this stay out of the principal block.
pub const EIGEN_FLOOR: f64 = 1e-8;
const ALS_TOL: f64 = 1e-8;
const ALS_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Pca,
    Dpca,
    Dipca,
    Dicca,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pca, Method::Dpca, Method::Dipca, Method::Dicca];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "PCA",
            Method::Dpca => "DPCA",
            Method::Dipca => "DiPCA",
            Method::Dicca => "DiCCA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub loadings_principal: DMatrix<f64>,
    pub loadings_residual: DMatrix<f64>,
    pub eigvals_principal: DVector<f64>,
    pub eigvals_residual: DVector<f64>,
}

/// Eigenpairs of a symmetric matrix, largest eigenvalue first.
fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = eig.eigenvectors.select_columns(&order);
    (vals, vecs)
}

/// Flips `v` so its largest-magnitude entry is positive.
fn orient(v: &mut DVector<f64>) {
    if v.is_empty() {
        return;
    }
    if v[v.iamax()] < 0.0 {
        v.neg_mut();
    }
}

fn direction_change(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm().min((a + b).norm())
}

/// PCA of standardized data. Keeps the fewest components whose cumulative
/// share of variance reaches `variance_fraction`.
pub fn fit_pca(x: &DMatrix<f64>, variance_fraction: f64) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance fraction must lie in (0, 1], got {variance_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if n <= p {
        log::warn!("PCA on {n} samples of {p} variables; covariance is rank deficient");
    }
    let cov = x.tr_mul(x) / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    let (mut vals, vecs) = sorted_eigen(cov);
    let top = vals.max().max(0.0);
    if vals.iter().any(|&v| v < -1e-8 * top.max(1.0)) {
        return Err(Error::Numerical(
            "sample covariance is not positive semidefinite".into(),
        ));
    }
    vals.apply(|v| *v = v.max(0.0));
    let total = vals.sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("data have zero variance".into()));
    }
    let mut l = p;
    let mut acc = 0.0;
    for (i, v) in vals.iter().enumerate() {
        acc += v;
        if acc / total >= variance_fraction - 1e-12 {
            l = i + 1;
            break;
        }
    }
    let l = l.min(vals.iter().filter(|&&v| v > EIGEN_FLOOR).count());
    Ok(PcaModel {
        loadings_principal: vecs.columns(0, l).into_owned(),
        loadings_residual: vecs.columns(l, p - l).into_owned(),
        eigvals_principal: vals.rows(0, l).into_owned(),
        eigvals_residual: vals.rows(l, p - l).into_owned(),
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.eigvals_principal.len()
    }

    pub fn n_vars(&self) -> usize {
        self.loadings_principal.nrows()
    }

    /// `C = P Pᵀ`.
    pub fn principal_projector(&self) -> DMatrix<f64> {
        &self.loadings_principal * self.loadings_principal.transpose()
    }

    /// `C̃ = P̃ P̃ᵀ`.
    pub fn residual_projector(&self) -> DMatrix<f64> {
        &self.loadings_residual * self.loadings_residual.transpose()
    }

    /// `(SPE, T²)` of a standardized sample.
    pub fn score(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        if x.len() != self.n_vars() {
            return Err(Error::Dimension(format!(
                "sample has {} entries, PCA model has {}",
                x.len(),
                self.n_vars()
            )));
        }
        let t = self.loadings_principal.tr_mul(x);
        let t2 = t
            .iter()
            .zip(self.eigvals_principal.iter())
            .map(|(t, l)| t * t / l)
            .sum::<f64>();
        let spe = (x - &self.loadings_principal * t).norm_squared();
        Ok((spe, t2))
    }
}

/// PCA on `[x_t, …, x_{t-d}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpcaModel {
    pub pca: PcaModel,
    pub lag: usize,
}

pub fn fit_dpca(x: &DMatrix<f64>, lag: usize, variance_fraction: f64) -> Result<DpcaModel> {
    let augmented = augment_lags(x, lag)?;
    Ok(DpcaModel {
        pca: fit_pca(&augmented, variance_fraction)?,
        lag,
    })
}

impl DpcaModel {
    /// `(SPE, T²)` of the last sample of `window` (oldest first, `lag + 1`
    /// samples).
    pub fn score(&self, window: &[DVector<f64>]) -> Result<(f64, f64)> {
        check_window(window, self.lag)?;
        let p = window[0].len();
        let mut stacked = DVector::zeros(p * (self.lag + 1));
        for (i, x) in window.iter().rev().enumerate() {
            stacked.rows_mut(i * p, p).copy_from(x);
        }
        self.pca.score(&stacked)
    }
}

fn check_window(window: &[DVector<f64>], lag: usize) -> Result<()> {
    if window.len() != lag + 1 {
        return Err(Error::InsufficientHistory {
            lag,
            got: window.len().saturating_sub(1),
        });
    }
    Ok(())
}

/// Latent variables with an autoregressive inner model, extracted one at a
/// time and deflated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicLatentModel {
    pub method: Method,
    /// Weight vectors on the deflated data, one column per component.
    pub weights: DMatrix<f64>,
    /// Deflation loadings `q = Xᵀt / tᵀt`.
    pub loadings: DMatrix<f64>,
    /// Maps a raw standardized sample to its scores: `t = Rᵀx`.
    pub rotation: DMatrix<f64>,
    /// Inner coefficients `β`, one row per component.
    pub ar_coeffs: DMatrix<f64>,
    pub lag: usize,
    /// Joint VAR of the scores used for prediction.
    pub latent_var: VarModel,
    /// Pseudo-inverse covariance of the training predictions.
    pub predicted_precision: DMatrix<f64>,
}

/// Time-aligned blocks `X_0 = rows s..N` and `X_i = rows s−i..N−i`.
fn shifted_blocks(x: &DMatrix<f64>, s: usize) -> Vec<DMatrix<f64>> {
    let rows = x.nrows() - s;
    (0..=s).map(|i| x.rows(s - i, rows).into_owned()).collect()
}

fn shifted(t: &DVector<f64>, s: usize, i: usize) -> DVector<f64> {
    t.rows(s - i, t.len() - s).into_owned()
}

/// One DiPCA component: maximizes `Σ β_i pᵀ X_0ᵀ X_i p` over unit `p` and
/// unit `β` by exact alternating maximization.
fn dipca_component(x: &DMatrix<f64>, s: usize) -> (DVector<f64>, DVector<f64>) {
    let blocks = shifted_blocks(x, s);
    let cross: Vec<DMatrix<f64>> = (1..=s)
        .map(|i| {
            let c = blocks[0].tr_mul(&blocks[i]);
            (&c + c.transpose()) * 0.5
        })
        .collect();
    let (_, vecs) = sorted_eigen(x.tr_mul(x));
    let mut p = vecs.column(0).into_owned();
    orient(&mut p);
    let mut beta = DVector::zeros(s);
    for iter in 0..ALS_MAX_ITER {
        beta = DVector::from_iterator(s, cross.iter().map(|c| p.dot(&(c * &p))));
        let norm = beta.norm();
        if norm == 0.0 {
            break;
        }
        beta /= norm;
        let mut m = DMatrix::zeros(p.len(), p.len());
        for (b, c) in beta.iter().zip(&cross) {
            m += c * *b;
        }
        let (_, vecs) = sorted_eigen(m);
        let mut next = vecs.column(0).into_owned();
        orient(&mut next);
        let change = direction_change(&next, &p);
        p = next;
        if change < ALS_TOL {
            break;
        }
        if iter + 1 == ALS_MAX_ITER {
            log::warn!("DiPCA component did not converge in {ALS_MAX_ITER} iterations");
        }
    }
    (p, beta)
}

/// One DiCCA component: minimizes `‖t_0 − Σ β_i t_i‖²` subject to
/// `t_0ᵀt_0 = 1`, alternating least squares for `β` with a generalized
/// eigenproblem for `p`.
fn dicca_component(x: &DMatrix<f64>, s: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let blocks = shifted_blocks(x, s);
    let gram: Vec<Vec<DMatrix<f64>>> = blocks
        .iter()
        .map(|a| blocks.iter().map(|b| a.tr_mul(b)).collect())
        .collect();
    // whitening restricted to the numerical range of X_0
    let (vals, vecs) = sorted_eigen(gram[0][0].clone());
    let top = vals.max();
    if !(top > 0.0) {
        return Err(Error::Degenerate("no variance left to extract".into()));
    }
    let keep = vals.iter().filter(|&&v| v > 1e-10 * top).count();
    let whiten = DMatrix::from_fn(vecs.nrows(), keep, |r, c| vecs[(r, c)] / vals[c].sqrt());

    let mut p = whiten.column(0).into_owned();
    for iter in 0..ALS_MAX_ITER {
        let beta = inner_regression(&(x * &p), s)?;
        let coef: Vec<f64> = std::iter::once(1.0).chain(beta.iter().map(|b| -b)).collect();
        let mut err = DMatrix::zeros(p.len(), p.len());
        for (i, ci) in coef.iter().enumerate() {
            for (j, cj) in coef.iter().enumerate() {
                err += &gram[i][j] * (ci * cj);
            }
        }
        let reduced = whiten.tr_mul(&(&err * &whiten));
        let (_, rvecs) = sorted_eigen((&reduced + reduced.transpose()) * 0.5);
        let mut next = &whiten * rvecs.column(keep - 1);
        orient(&mut next);
        let change = direction_change(&next, &p);
        p = next;
        if change < ALS_TOL {
            break;
        }
        if iter + 1 == ALS_MAX_ITER {
            log::warn!("DiCCA component did not converge in {ALS_MAX_ITER} iterations");
        }
    }
    let beta = inner_regression(&(x * &p), s)?;
    Ok((p, beta))
}

/// Least-squares `β` regressing `t_k` on `t_{k-1}, …, t_{k-s}`.
fn inner_regression(t: &DVector<f64>, s: usize) -> Result<DVector<f64>> {
    let lagged = DMatrix::from_columns(&(1..=s).map(|i| shifted(t, s, i)).collect::<Vec<_>>());
    let pinv = lagged
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(pinv * shifted(t, s, 0))
}

fn fit_latent(x: &DMatrix<f64>, components: usize, lag: usize, method: Method) -> Result<DynamicLatentModel> {
    let (n, p) = x.shape();
    if lag == 0 {
        return Err(Error::InvalidArgument("inner lag order must be at least 1".into()));
    }
    if n <= lag + 1 {
        return Err(Error::InsufficientData {
            needed: lag + 2,
            got: n,
        });
    }
    if components == 0 || components > p {
        return Err(Error::InvalidArgument(format!(
            "component count must lie in 1..={p}, got {components}"
        )));
    }
    let mut resid = x.clone();
    let mut weights = DMatrix::zeros(p, components);
    let mut loadings = DMatrix::zeros(p, components);
    let mut ar_coeffs = DMatrix::zeros(components, lag);
    for k in 0..components {
        let (w, beta) = match method {
            Method::Dipca => dipca_component(&resid, lag),
            Method::Dicca => dicca_component(&resid, lag)?,
            _ => unreachable!("not a latent method"),
        };
        let t = &resid * &w;
        let tt = t.norm_squared();
        if !(tt > 0.0) {
            return Err(Error::Degenerate(format!("component {k} has zero score variance")));
        }
        let q = resid.tr_mul(&t) / tt;
        resid -= &t * q.transpose();
        weights.set_column(k, &w);
        loadings.set_column(k, &q);
        ar_coeffs.set_row(k, &beta.transpose());
    }
    let core = loadings.tr_mul(&weights);
    let rotation = &weights
        * core
            .try_inverse()
            .ok_or_else(|| Error::Numerical("latent weights are linearly dependent".into()))?;

    let scores = x * &rotation;
    let lags = build_lag_matrices(&scores, lag)?;
    let latent_var = fit_var_ols(&lags)?;
    let predicted = &lags.q * &latent_var.a;
    let cov = predicted.tr_mul(&predicted) / (predicted.nrows().max(2) - 1) as f64;
    let top = cov.max().abs().max(f64::MIN_POSITIVE);
    let predicted_precision = cov
        .pseudo_inverse(1e-10 * top)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(DynamicLatentModel {
        method,
        weights,
        loadings,
        rotation,
        ar_coeffs,
        lag,
        latent_var,
        predicted_precision,
    })
}

pub fn fit_dipca(x: &DMatrix<f64>, components: usize, lag: usize) -> Result<DynamicLatentModel> {
    fit_latent(x, components, lag, Method::Dipca)
}

pub fn fit_dicca(x: &DMatrix<f64>, components: usize, lag: usize) -> Result<DynamicLatentModel> {
    fit_latent(x, components, lag, Method::Dicca)
}

impl DynamicLatentModel {
    pub fn n_components(&self) -> usize {
        self.rotation.ncols()
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * &self.rotation
    }

    /// One-step predictions of the scores for rows `lag..N` of `x`.
    pub fn predicted_scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let lags = build_lag_matrices(&self.scores(x), self.lag)?;
        Ok(&lags.q * &self.latent_var.a)
    }

    /// `(SPE, T²)` for the last sample of `window` (oldest first, `lag + 1`
    /// samples): `T²` of the predicted scores and the squared norm of the
    /// sample minus its prediction.
    pub fn score(&self, window: &[DVector<f64>]) -> Result<(f64, f64)> {
        check_window(window, self.lag)?;
        let l = self.n_components();
        let mut stacked = DVector::zeros(l * self.lag);
        for (i, x) in window[..self.lag].iter().rev().enumerate() {
            stacked.rows_mut(i * l, l).copy_from(&self.rotation.tr_mul(x));
        }
        let predicted = self.latent_var.predict(&stacked)?;
        let t2 = predicted.dot(&(&self.predicted_precision * &predicted)).max(0.0);
        let spe = (&window[self.lag] - &self.loadings * &predicted).norm_squared();
        Ok((spe, t2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineModel {
    Pca(PcaModel),
    Dpca(DpcaModel),
    Latent(DynamicLatentModel),
}

impl BaselineModel {
    pub fn lag(&self) -> usize {
        match self {
            BaselineModel::Pca(_) => 0,
            BaselineModel::Dpca(m) => m.lag,
            BaselineModel::Latent(m) => m.lag,
        }
    }

    /// `(SPE, T²)` of the newest sample in a `lag + 1` window.
    pub fn score(&self, window: &[DVector<f64>]) -> Result<(f64, f64)> {
        match self {
            BaselineModel::Pca(m) => {
                check_window(window, 0)?;
                m.score(&window[0])
            }
            BaselineModel::Dpca(m) => m.score(window),
            BaselineModel::Latent(m) => m.score(window),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub variance_fraction: f64,
    /// DPCA lag and DiPCA/DiCCA inner order.
    pub lags: usize,
    /// Latent components; `None` uses the PCA count at `variance_fraction`.
    pub components: Option<usize>,
    pub alpha: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            variance_fraction: 0.9,
            lags: 2,
            components: None,
            alpha: 0.95,
        }
    }
}

/// A fitted baseline with its scaler and control limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMonitor {
    pub method: Method,
    pub scaler: Scaler,
    pub model: BaselineModel,
    pub limit_t2: KdeLimit,
    pub limit_spe: KdeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    pub index: usize,
    pub t2: Option<f64>,
    pub spe: Option<f64>,
    pub cl_t2: f64,
    pub cl_spe: f64,
    pub alarm_t2: bool,
    pub alarm_spe: bool,
}

impl StatRecord {
    pub fn any_alarm(&self) -> bool {
        self.alarm_t2 || self.alarm_spe
    }
}

pub fn train_baseline(method: Method, train: &ProcessDataset, cfg: &BaselineConfig) -> Result<BaselineMonitor> {
    let scaler = fit_scaler(train)?;
    let x = apply_scaler(train, &scaler)?.values().clone();
    let model = match method {
        Method::Pca => BaselineModel::Pca(fit_pca(&x, cfg.variance_fraction)?),
        Method::Dpca => BaselineModel::Dpca(fit_dpca(&x, cfg.lags, cfg.variance_fraction)?),
        Method::Dipca | Method::Dicca => {
            let l = match cfg.components {
                Some(l) => l,
                None => fit_pca(&x, cfg.variance_fraction)?.n_components().max(1),
            };
            BaselineModel::Latent(fit_latent(&x, l, cfg.lags, method)?)
        }
    };
    let mut t2 = Vec::new();
    let mut spe = Vec::new();
    let mut window = VecDeque::new();
    for row in x.row_iter() {
        window.push_back(row.transpose());
        if window.len() > model.lag() + 1 {
            window.pop_front();
        }
        if window.len() == model.lag() + 1 {
            let (s, t) = model.score(window.make_contiguous())?;
            spe.push(s);
            t2.push(t);
        }
    }
    Ok(BaselineMonitor {
        method,
        scaler,
        limit_t2: fit_limit(&t2, cfg.alpha)?,
        limit_spe: fit_limit(&spe, cfg.alpha)?,
        model,
    })
}

impl BaselineMonitor {
    /// Scores every row of a raw stream; the first `lag` records are warm-up.
    pub fn detect(&self, stream: &DMatrix<f64>) -> Result<Vec<StatRecord>> {
        if stream.ncols() != self.scaler.n_vars() {
            return Err(Error::Dimension(format!(
                "stream has {} variables, model expects {}",
                stream.ncols(),
                self.scaler.n_vars()
            )));
        }
        let lag = self.model.lag();
        let mut window = VecDeque::with_capacity(lag + 1);
        let mut out = Vec::with_capacity(stream.nrows());
        for (index, row) in stream.row_iter().enumerate() {
            window.push_back(self.scaler.scale_sample(&row.transpose()));
            if window.len() > lag + 1 {
                window.pop_front();
            }
            let mut rec = StatRecord {
                index,
                t2: None,
                spe: None,
                cl_t2: self.limit_t2.cl,
                cl_spe: self.limit_spe.cl,
                alarm_t2: false,
                alarm_spe: false,
            };
            if window.len() == lag + 1 {
                let (spe, t2) = self.model.score(window.make_contiguous())?;
                rec.t2 = Some(t2);
                rec.spe = Some(spe);
                rec.alarm_t2 = t2 > rec.cl_t2;
                rec.alarm_spe = spe > rec.cl_spe;
            }
            out.push(rec);
        }
        Ok(out)
    }
}
