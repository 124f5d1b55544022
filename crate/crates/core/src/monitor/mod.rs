//! Trained monitoring model, detection statistics, the streaming detection
//! loop and reconstruction-based contribution (RBC) diagnosis.
//!
//! Every standardized sample `y` is sparse-coded against the active atoms
//! and reconstructed as `ψ = D ŵ`. Two statistics are tracked:
//!
//! * `T²_d = ‖ψ_t − Âᵀ[ψ_{t-1}; …; ψ_{t-d}]‖²`, the one-step VAR innovation
//!   of the reconstructed signal;
//! * `T²_s = (y − ψ)ᵀ Λ (y − ψ)`, where `Λ` is by default the lag-1 diagonal
//!   block of the Gram `QᵀQ` of the standardized training lag matrix, i.e.
//!   `Σ_t y_t y_tᵀ` over the training lags (see [`StaticWeight`]).
//!
//! RBC uses `M = ΦᵀΦ` with `Φ = I − Σ_k Â_kᵀ`, the innovation produced by a
//! deviation that persists over the current sample and every lag.

mod kde;

pub use kde::{fit_limit, kde_cdf, kde_pdf, silverman_bandwidth, KdeLimit, MIN_STABLE_VALUES};

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{apply_scaler, build_lag_matrices, fit_scaler, LagMatrices, ProcessDataset, Scaler};
use crate::error::{Error, Result};
use crate::omp::{check_dictionary, default_residual_tol, default_t_max, encode_rows, omp_encode, reconstruct};
use crate::var::{elbow_rank, fit_var_l1, fit_var_rank, VarModel};
use crate::vb::{self, DictionaryModel, FitOptions, Hyperparams};

/// Format tag written at the top of every persisted bundle.
pub const BUNDLE_FORMAT: &str = "RDVDL-1";

/// How the VAR on reconstructed samples is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VarFit {
    /// Rank-constrained fit; `None` picks the rank at the largest singular
    /// value gap of the least-squares coefficients.
    Rank(Option<usize>),
    /// Elementwise L1 penalty.
    L1(f64),
}

/// Weight matrix of the static statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaticWeight {
    /// Lag-1 block of `QᵀQ` for the lag matrix of the standardized
    /// training samples.
    Measurement,
    /// Lag-1 block of `QᵀQ` for the lag matrix of the reconstructions.
    /// When OMP spans every active atom the residual is orthogonal to this
    /// block, so the statistic collapses to rounding noise.
    Reconstruction,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Prior constants; `None` uses [`Hyperparams::for_dimension`].
    pub hyperparams: Option<Hyperparams>,
    /// Atom budget; `None` keeps the budget of `hyperparams`, or uses one
    /// atom per variable when those are defaulted too.
    pub atoms: Option<usize>,
    pub fit: FitOptions,
    pub lags: usize,
    pub var: VarFit,
    /// OMP sparsity cap; `None` rounds up the mean atoms per training sample.
    pub t_max: Option<usize>,
    pub alpha: f64,
    pub static_weight: StaticWeight,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyperparams: None,
            atoms: None,
            fit: FitOptions::default(),
            lags: 2,
            var: VarFit::Rank(None),
            t_max: None,
            alpha: 0.95,
            static_weight: StaticWeight::Measurement,
        }
    }
}

/// Everything needed to monitor new raw samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorModel {
    pub variable_names: Vec<String>,
    pub scaler: Scaler,
    pub dictionary: DictionaryModel,
    /// Active atoms only (P×K_active); what OMP codes against.
    pub coder: DMatrix<f64>,
    pub t_max: usize,
    pub var: VarModel,
    /// P×P weight of the static statistic.
    pub static_weight: DMatrix<f64>,
    /// P×P PSD matrix used by RBC.
    pub rbc_metric: DMatrix<f64>,
    pub limit_d: KdeLimit,
    pub limit_s: KdeLimit,
}

/// Statistics for one streamed sample. Both statistics are `None` while the
/// lag buffer warms up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub index: usize,
    pub t2d: Option<f64>,
    pub t2s: Option<f64>,
    pub cl_d: f64,
    pub cl_s: f64,
    pub alarm_d: bool,
    pub alarm_s: bool,
    pub rbc: Option<Vec<f64>>,
}

impl DetectionRecord {
    pub fn any_alarm(&self) -> bool {
        self.alarm_d || self.alarm_s
    }

    pub fn is_warm(&self) -> bool {
        self.t2d.is_some()
    }
}

/// Per-variable contributions of one sample or an averaged window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rbc {
    pub raw: Vec<f64>,
    /// `raw` scaled to sum to one (all zeros when `raw` does).
    pub normalized: Vec<f64>,
    /// Variables whose direction has (numerically) zero weight under `M`.
    pub degenerate: Vec<bool>,
}

impl Rbc {
    /// Variable indices sorted by decreasing contribution, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.raw.len()).collect();
        idx.sort_by(|&a, &b| self.raw[b].total_cmp(&self.raw[a]).then(a.cmp(&b)));
        idx
    }
}

/// `RBC_i = (ξᵢᵀ M y)² / (ξᵢᵀ M ξᵢ)`; directions with `ξᵢᵀ M ξᵢ < 1e-12`
/// contribute zero and are flagged.
pub fn rbc_contributions(m: &DMatrix<f64>, y: &DVector<f64>) -> Result<Rbc> {
    let p = y.len();
    if m.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "RBC matrix is {}x{}, sample has {p} entries",
            m.nrows(),
            m.ncols()
        )));
    }
    let my = m * y;
    let mut raw = vec![0.0; p];
    let mut degenerate = vec![false; p];
    for i in 0..p {
        let denom = m[(i, i)];
        if denom < 1e-12 {
            degenerate[i] = true;
        } else {
            raw[i] = my[i] * my[i] / denom;
        }
    }
    Ok(with_normalized(raw, degenerate))
}

fn with_normalized(raw: Vec<f64>, degenerate: Vec<bool>) -> Rbc {
    let total: f64 = raw.iter().sum();
    let normalized = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Rbc {
        raw,
        normalized,
        degenerate,
    }
}

/// `(y − ψ)ᵀ W (y − ψ)`, clamped at zero against rounding.
pub fn quadratic_residual(weight: &DMatrix<f64>, y: &DVector<f64>, psi: &DVector<f64>) -> f64 {
    let r = y - psi;
    r.dot(&(weight * &r)).max(0.0)
}

/// Innovation `ψ_t − Âᵀ[ψ_{t-1}; …; ψ_{t-d}]`; `history` is oldest first
/// and must hold exactly `d` samples.
pub fn innovation(var: &VarModel, history: &[DVector<f64>], psi: &DVector<f64>) -> Result<DVector<f64>> {
    if history.len() != var.d {
        return Err(Error::InsufficientHistory {
            lag: var.d,
            got: history.len(),
        });
    }
    let p = psi.len();
    let mut stacked = DVector::zeros(p * var.d);
    for (lag, past) in history.iter().rev().enumerate() {
        stacked.rows_mut(lag * p, p).copy_from(past);
    }
    Ok(psi - var.predict(&stacked)?)
}

/// `Φ = I − Σ_k Â_kᵀ` and `M = ΦᵀΦ`.
fn rbc_metric(var: &VarModel) -> DMatrix<f64> {
    let p = var.n_vars();
    let mut phi = DMatrix::identity(p, p);
    for lag in 0..var.d {
        phi -= var.a.rows(lag * p, p).transpose();
    }
    phi.tr_mul(&phi)
}

fn lag1_gram(lags: &LagMatrices) -> DMatrix<f64> {
    let block = lags.q.columns(0, lags.n_vars());
    block.tr_mul(&block)
}

/// Fits scaler, dictionary, VAR and control limits on normal training data.
pub fn train_monitor(train: &ProcessDataset, cfg: &TrainConfig) -> Result<MonitorModel> {
    let scaler = fit_scaler(train)?;
    if scaler.has_degenerate() {
        log::warn!("training data has flatlined columns; they are centred but not scaled");
    }
    let x = apply_scaler(train, &scaler)?.values().clone();
    let p = x.ncols();
    let mut hp = cfg.hyperparams.unwrap_or_else(|| Hyperparams::for_dimension(p));
    match (cfg.atoms, cfg.hyperparams) {
        (Some(k), _) => hp.k = k,
        (None, None) => hp.k = p,
        (None, Some(_)) => {}
    }
    let dictionary = vb::fit(&x, &hp, cfg.fit)?;
    log::info!(
        "dictionary: {} active atoms of {}, {} sweeps",
        dictionary.n_active(),
        hp.k,
        dictionary.iterations
    );
    if dictionary.n_active() == 0 {
        return Err(Error::Degenerate("no dictionary atom survived training".into()));
    }
    let coder = dictionary.active_dictionary();
    check_dictionary(&coder)?;
    let t_max = cfg
        .t_max
        .unwrap_or_else(|| default_t_max(dictionary.mean_atoms_per_sample));

    let psi = reconstruct(&coder, &encode_rows(&coder, &x, t_max)?)?;
    let lags = build_lag_matrices(&psi, cfg.lags)?;
    let var = match cfg.var {
        VarFit::Rank(rank) => {
            let rank = match rank {
                Some(r) => r,
                None => elbow_rank(&lags)?,
            };
            fit_var_rank(&lags, rank)?
        }
        VarFit::L1(lambda) => fit_var_l1(&lags, lambda)?,
    };
    let static_weight = match cfg.static_weight {
        StaticWeight::Measurement => lag1_gram(&build_lag_matrices(&x, cfg.lags)?),
        StaticWeight::Reconstruction => lag1_gram(&lags),
        StaticWeight::Identity => DMatrix::identity(p, p),
    };
    let rbc_metric = rbc_metric(&var);

    let placeholder = KdeLimit {
        training_values: Vec::new(),
        bandwidth: 1.0,
        alpha: cfg.alpha,
        cl: f64::INFINITY,
    };
    let mut model = MonitorModel {
        variable_names: train.variable_names().to_vec(),
        scaler,
        dictionary,
        coder,
        t_max,
        var,
        static_weight,
        rbc_metric,
        limit_d: placeholder.clone(),
        limit_s: placeholder,
    };
    let (t2d, t2s) = training_statistics(&model, train.values())?;
    model.limit_d = fit_limit(&t2d, cfg.alpha)?;
    model.limit_s = fit_limit(&t2s, cfg.alpha)?;
    Ok(model)
}

/// Replays raw samples through the detector and collects both statistics
/// of every warm sample.
pub fn training_statistics(model: &MonitorModel, raw: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut det = Detector::new(model);
    let mut t2d = Vec::new();
    let mut t2s = Vec::new();
    for row in raw.row_iter() {
        let rec = det.step(&row.transpose())?;
        if let (Some(d), Some(s)) = (rec.t2d, rec.t2s) {
            t2d.push(d);
            t2s.push(s);
        }
    }
    Ok((t2d, t2s))
}

impl MonitorModel {
    pub fn n_vars(&self) -> usize {
        self.scaler.n_vars()
    }

    pub fn lags(&self) -> usize {
        self.var.d
    }

    /// Checks that every component agrees on the variable count.
    pub fn validate(&self) -> Result<()> {
        let p = self.n_vars();
        let checks = [
            ("variable names", self.variable_names.len()),
            ("dictionary rows", self.coder.nrows()),
            ("VAR targets", self.var.n_vars()),
            ("static weight", self.static_weight.nrows()),
            ("RBC matrix", self.rbc_metric.nrows()),
        ];
        for (what, n) in checks {
            if n != p {
                return Err(Error::Dimension(format!("{what}: {n}, scaler: {p}")));
            }
        }
        if self.var.a.nrows() != p * self.var.d {
            return Err(Error::Dimension("VAR coefficient rows do not match lag order".into()));
        }
        if self.t_max == 0 {
            return Err(Error::InvalidArgument("t_max must be at least 1".into()));
        }
        check_dictionary(&self.coder)
    }

    /// OMP reconstruction `ψ` of a standardized sample.
    pub fn reconstruct(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let code = omp_encode(&self.coder, y, self.t_max, default_residual_tol(y))?;
        Ok(&self.coder * code.dense(self.coder.ncols())?)
    }

    /// `T²_d` for the last sample of `window` (standardized, oldest first,
    /// `d + 1` samples).
    pub fn t2_dynamic(&self, window: &[DVector<f64>]) -> Result<f64> {
        let d = self.lags();
        if window.len() != d + 1 {
            return Err(Error::InsufficientHistory {
                lag: d,
                got: window.len().saturating_sub(1),
            });
        }
        let psi: Vec<DVector<f64>> = window.iter().map(|y| self.reconstruct(y)).collect::<Result<_>>()?;
        Ok(innovation(&self.var, &psi[..d], &psi[d])?.norm_squared())
    }

    /// `T²_s` of a standardized sample against its reconstruction.
    pub fn t2_static(&self, y: &DVector<f64>, psi: &DVector<f64>) -> f64 {
        quadratic_residual(&self.static_weight, y, psi)
    }

    /// RBC of one raw sample.
    pub fn rbc_diagnose(&self, raw: &DVector<f64>) -> Result<Rbc> {
        self.check_len(raw.len())?;
        rbc_contributions(&self.rbc_metric, &self.scaler.scale_sample(raw))
    }

    /// Mean raw RBC over the rows of `raw`.
    pub fn rbc_window(&self, raw: &DMatrix<f64>) -> Result<Rbc> {
        let p = self.n_vars();
        let mut acc = vec![0.0; p];
        let mut degenerate = vec![false; p];
        for row in raw.row_iter() {
            let r = self.rbc_diagnose(&row.transpose())?;
            for i in 0..p {
                acc[i] += r.raw[i];
                degenerate[i] |= r.degenerate[i];
            }
        }
        let n = raw.nrows().max(1) as f64;
        Ok(with_normalized(acc.into_iter().map(|v| v / n).collect(), degenerate))
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.n_vars() {
            return Err(Error::Dimension(format!(
                "sample has {n} entries, model expects {}",
                self.n_vars()
            )));
        }
        Ok(())
    }

    pub fn to_bundle_string(&self) -> Result<String> {
        let bundle = Bundle {
            format: BUNDLE_FORMAT.to_string(),
            model: self.clone(),
        };
        serde_json::to_string_pretty(&bundle).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_bundle_str(text: &str) -> Result<Self> {
        let bundle: Bundle = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(Error::Format(format!(
                "unsupported bundle format {:?}, expected {BUNDLE_FORMAT:?}",
                bundle.format
            )));
        }
        bundle.model.validate()?;
        Ok(bundle.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bundle_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bundle_str(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    format: String,
    model: MonitorModel,
}

/// Streaming detection session; owns the lag buffer of reconstructions.
pub struct Detector<'a> {
    model: &'a MonitorModel,
    history: VecDeque<DVector<f64>>,
    next_index: usize,
    with_rbc: bool,
}

impl<'a> Detector<'a> {
    pub fn new(model: &'a MonitorModel) -> Self {
        Self {
            model,
            history: VecDeque::with_capacity(model.lags() + 1),
            next_index: 0,
            with_rbc: false,
        }
    }

    /// Attach RBC vectors to alarmed records.
    pub fn with_rbc(mut self, on: bool) -> Self {
        self.with_rbc = on;
        self
    }

    pub fn step(&mut self, raw: &DVector<f64>) -> Result<DetectionRecord> {
        let m = self.model;
        m.check_len(raw.len())?;
        let y = m.scaler.scale_sample(raw);
        let psi = m.reconstruct(&y)?;
        let index = self.next_index;
        self.next_index += 1;
        let mut rec = DetectionRecord {
            index,
            t2d: None,
            t2s: None,
            cl_d: m.limit_d.cl,
            cl_s: m.limit_s.cl,
            alarm_d: false,
            alarm_s: false,
            rbc: None,
        };
        if self.history.len() == m.lags() {
            let past: Vec<DVector<f64>> = self.history.iter().cloned().collect();
            let t2d = innovation(&m.var, &past, &psi)?.norm_squared();
            let t2s = m.t2_static(&y, &psi);
            rec.t2d = Some(t2d);
            rec.t2s = Some(t2s);
            rec.alarm_d = t2d > rec.cl_d;
            rec.alarm_s = t2s > rec.cl_s;
            if self.with_rbc && rec.any_alarm() {
                rec.rbc = Some(rbc_contributions(&m.rbc_metric, &y)?.raw);
            }
            self.history.pop_front();
        }
        self.history.push_back(psi);
        Ok(rec)
    }
}

/// Runs a fresh detection session over the rows of `stream` (raw units).
pub fn detect(model: &MonitorModel, stream: &DMatrix<f64>) -> Result<Vec<DetectionRecord>> {
    let mut det = Detector::new(model);
    stream.row_iter().map(|row| det.step(&row.transpose())).collect()
}

/// Alarm flags that require `run` consecutive raw alarms.
pub fn debounce(alarms: &[bool], run: usize) -> Vec<bool> {
    let mut streak = 0;
    alarms
        .iter()
        .map(|&a| {
            streak = if a { streak + 1 } else { 0 };
            streak >= run.max(1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::var::VarMode;

    #[test]
    fn rbc_diagonal_case() {
        let m = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![0.0, 3.0, 0.0, 0.0]);
        let r = rbc_contributions(&m, &y).unwrap();
        assert_eq!(r.raw, vec![0.0, 9.0, 0.0, 0.0]);
        assert_eq!(r.normalized, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(r.ranking()[0], 1);
    }

    #[test]
    fn rbc_is_sign_invariant_and_flags_degenerate_directions() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let a = rbc_contributions(&m, &y).unwrap();
        let b = rbc_contributions(&m, &-y).unwrap();
        assert_eq!(a.raw, b.raw);
        assert!(a.degenerate[2] && a.raw[2] == 0.0);
    }

    #[test]
    fn null_var_innovation_is_the_sample() {
        let var = VarModel {
            a: DMatrix::zeros(4, 2),
            d: 2,
            mode: VarMode::Ols,
            achieved_rank: 0,
        };
        let past = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0])];
        let psi = DVector::from_vec(vec![0.5, -0.5]);
        assert_eq!(innovation(&var, &past, &psi).unwrap(), psi);
        assert!(innovation(&var, &past[..1], &psi).is_err());
    }

    #[test]
    fn innovation_uses_newest_lag_first() {
        // ψ_t = 0.5 ψ_{t-1} only
        let mut a = DMatrix::zeros(2, 1);
        a[(0, 0)] = 0.5;
        let var = VarModel {
            a,
            d: 2,
            mode: VarMode::Ols,
            achieved_rank: 1,
        };
        let past = vec![DVector::from_vec(vec![8.0]), DVector::from_vec(vec![2.0])];
        let r = innovation(&var, &past, &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn quadratic_residual_matches_explicit_product() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let psi = DVector::from_vec(vec![0.5, -1.0]);
        let r = [0.5, 3.0];
        let explicit = r[0] * (2.0 * r[0] + r[1]) + r[1] * (r[0] + 3.0 * r[1]);
        assert!((quadratic_residual(&w, &y, &psi) - explicit).abs() < 1e-12);
        assert_eq!(quadratic_residual(&w, &y, &y), 0.0);
    }

    #[test]
    fn debounce_needs_a_run() {
        let a = [true, true, false, true, true, true, true];
        assert_eq!(debounce(&a, 3), vec![false, false, false, false, false, true, true]);
    }

    #[test]
    fn rbc_metric_from_var() {
        let mut a = DMatrix::zeros(2, 1);
        a[(0, 0)] = 0.3;
        a[(1, 0)] = 0.2;
        let var = VarModel {
            a,
            d: 2,
            mode: VarMode::Ols,
            achieved_rank: 1,
        };
        let m = rbc_metric(&var);
        assert!((m[(0, 0)] - 0.25).abs() < 1e-15);
    }
}
