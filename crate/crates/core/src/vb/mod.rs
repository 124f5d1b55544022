//! Beta-Bernoulli dictionary learning by variational EM.
//!
//! Each standardized sample is modelled as `x_i = D (z_i ⊙ s_i) + ε_i` with
//! Gaussian atoms `d_k ~ N(0, P⁻¹ I)`, Gaussian weights `s_ik ~ N(0, γ_s⁻¹)`,
//! binary usage indicators `z_ik ~ Bernoulli(π_k)`, a beta-process prior
//! `π_k ~ Beta(a0/K, b0(K-1)/K)` and Gamma priors on both precisions. The
//! posterior is approximated by the fully factorized family
//! `q(D) q(S) q(Z) q(π) q(γ_s) q(γ_ε)` and fitted by coordinate ascent, one
//! factor at a time, so the evidence lower bound never decreases.
//!
//! All coordinate updates work against the running residual
//! `r_i = x_i - Σ_k η_ik ν_ik μ_k`; the leave-one-out residual for atom `k`
//! is `r_i + η_ik ν_ik μ_k`.
//!
//! Coordinate ascent alone settles in poor local optima on this model
//! (duplicated atoms sharing usage, atoms that mix two true directions), so
//! [`fit`] periodically proposes merging, removing and adding atoms. A
//! proposal is refitted for a few sweeps and kept only if it ends with a
//! higher bound, which keeps the recorded trace monotone.

mod special;

pub use special::{checked_digamma, digamma, ln_beta, ln_gamma};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior constants `a0..f0` and the atom budget `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub d0: f64,
    pub e0: f64,
    pub f0: f64,
    pub k: usize,
}

impl Hyperparams {
    /// Non-informative defaults with `K = 2P` atoms.
    pub fn for_dimension(p: usize) -> Self {
        Self {
            a0: 1.0,
            b0: 1.0,
            c0: 1e-6,
            d0: 1e-6,
            e0: 1e-6,
            f0: 1e-6,
            k: (2 * p).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("a0", self.a0),
            ("b0", self.b0),
            ("c0", self.c0),
            ("d0", self.d0),
            ("e0", self.e0),
            ("f0", self.f0),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("atom budget K must be at least 1".into()));
        }
        Ok(())
    }

    /// Shapes of the Beta prior on each usage probability. With a single atom
    /// `b0 (K-1)/K` vanishes, so the second shape falls back to `b0`.
    pub fn beta_prior(&self) -> (f64, f64) {
        let k = self.k as f64;
        let second = if self.k > 1 { self.b0 * (k - 1.0) / k } else { self.b0 };
        (self.a0 / k, second)
    }
}

/// Variational parameters of every factor.
///
/// `mu` holds atom means as columns (P×K); `sigma[k]` is the isotropic
/// variance of atom `k`; `nu`, `omega` and `eta` are N×K.
#[derive(Debug, Clone, PartialEq)]
pub struct VbPosterior {
    pub mu: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub nu: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub hp: Hyperparams,
}

impl VbPosterior {
    pub fn n_samples(&self) -> usize {
        self.nu.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.mu.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.mu.ncols()
    }

    /// Posterior mean of the weight precision `γ_s`.
    pub fn weight_precision(&self) -> f64 {
        self.c / self.d
    }

    /// Posterior mean of the noise precision `γ_ε`.
    pub fn noise_precision(&self) -> f64 {
        self.e / self.f
    }

    /// `E[d_kᵀ d_k] = μ_kᵀμ_k + trace(Σ_k)`.
    pub fn atom_second_moment(&self, k: usize) -> f64 {
        self.mu.column(k).norm_squared() + self.n_vars() as f64 * self.sigma[k]
    }

    /// `(E[ln π_k], E[ln(1 - π_k)])`.
    pub fn log_usage(&self, k: usize) -> Result<(f64, f64)> {
        let t1 = self.tau1[k];
        let t2 = self.tau2[k];
        let total = checked_digamma(t1 + t2, "tau1 + tau2")?;
        Ok((
            checked_digamma(t1, "tau1")? - total,
            checked_digamma(t2, "tau2")? - total,
        ))
    }

    /// Mean usage `(1/N) Σ_i η_ik` per atom.
    pub fn usage(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        self.eta.column_iter().map(|c| c.sum() / n).collect()
    }

    /// Checks the support constraints of every factor.
    pub fn check_invariants(&self) -> Result<()> {
        if let Some(v) = self.eta.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invariant(format!("eta outside [0, 1]: {v}")));
        }
        if let Some(v) = self.omega.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Invariant(format!("omega not positive: {v}")));
        }
        if let Some(v) = self.sigma.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Invariant(format!("atom variance not positive: {v}")));
        }
        for (k, (&t1, &t2)) in self.tau1.iter().zip(&self.tau2).enumerate() {
            if !(t1 > 0.0 && t2 > 0.0) {
                return Err(Error::Invariant(format!(
                    "beta parameters of atom {k} not positive: ({t1}, {t2})"
                )));
            }
        }
        for (name, v) in [("c'", self.c), ("d'", self.d), ("e'", self.e), ("f'", self.f)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invariant(format!("gamma parameter {name} = {v}")));
            }
        }
        if self.mu.iter().any(|v| !v.is_finite()) || self.nu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite atom or weight mean".into()));
        }
        Ok(())
    }

    /// Residuals `r_i = x_i - Σ_k η_ik ν_ik μ_k` as columns of a P×N matrix.
    fn residuals(&self, xt: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = xt.clone();
        for i in 0..self.n_samples() {
            let mut col = r.column_mut(i);
            for k in 0..self.n_atoms() {
                let w = self.eta[(i, k)] * self.nu[(i, k)];
                if w != 0.0 {
                    col.axpy(-w, &self.mu.column(k), 1.0);
                }
            }
        }
        r
    }
}

/// Learned dictionary with the summaries needed downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryModel {
    /// Posterior atom means as columns (P×K).
    pub dictionary: DMatrix<f64>,
    pub active_mask: Vec<bool>,
    /// Mean usage `(1/N) Σ_i η_ik` per atom.
    pub usage: Vec<f64>,
    pub noise_precision: f64,
    pub hyperparams: Hyperparams,
    pub elbo_trace: Vec<f64>,
    /// Average number of active atoms with `η_ik ≥ 0.5` per training sample.
    pub mean_atoms_per_sample: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DictionaryModel {
    pub fn n_active(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }

    /// Columns of the active atoms only.
    pub fn active_dictionary(&self) -> DMatrix<f64> {
        let idx: Vec<usize> = (0..self.active_mask.len()).filter(|&k| self.active_mask[k]).collect();
        self.dictionary.select_columns(&idx)
    }
}

/// Mean usage above which an atom counts as active.
pub const ACTIVE_USAGE: f64 = 0.01;

/// Loop controls for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    pub max_iter: usize,
    /// Relative lower-bound change below which the loop stops.
    pub tol: f64,
    /// Independent initializations; the one ending with the highest bound
    /// is kept. Restart `r` uses seed `seed + r`.
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
            restarts: 1,
        }
    }
}

fn check_data(data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            got: data.nrows(),
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "training data contains non-finite values".into(),
        ));
    }
    Ok(())
}

fn check_shape(post: &VbPosterior, data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() != post.n_samples() || data.ncols() != post.n_vars() {
        return Err(Error::Dimension(format!(
            "data is {:?} but posterior expects {}x{}",
            data.shape(),
            post.n_samples(),
            post.n_vars()
        )));
    }
    Ok(())
}

/// Seeded initialization.
///
/// Atom means start at `K` distinct training samples rescaled to norm
/// `1/√P`, atom variances at the prior `1/P`, weights at `ν = 0, Ω = 1`,
/// usage probabilities at 0.5 and every Beta and Gamma factor at its prior.
pub fn init_model(data: &DMatrix<f64>, hp: &Hyperparams, seed: u64) -> Result<VbPosterior> {
    hp.validate()?;
    check_data(data)?;
    let (n, p) = data.shape();
    let k = hp.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let picks: Vec<usize> = if k <= n {
        index::sample(&mut rng, n, k).into_vec()
    } else {
        log::warn!("atom budget {k} exceeds sample count {n}; some atoms start duplicated");
        let mut v = index::sample(&mut rng, n, n).into_vec();
        while v.len() < k {
            v.push(v[v.len() % n]);
        }
        v
    };

    let target = 1.0 / (p as f64).sqrt();
    let mut mu = DMatrix::zeros(p, k);
    for (col, &i) in picks.iter().enumerate() {
        let mut atom: DVector<f64> = data.row(i).transpose();
        // Duplicated picks get a small seeded perturbation so atoms differ.
        if col >= n || atom.norm() == 0.0 {
            for v in atom.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += g;
            }
        }
        let norm = atom.norm();
        mu.set_column(col, &(atom * (target / norm)));
    }

    let (alpha0, beta0) = hp.beta_prior();
    Ok(VbPosterior {
        mu,
        sigma: vec![1.0 / p as f64; k],
        nu: DMatrix::zeros(n, k),
        omega: DMatrix::from_element(n, k, 1.0),
        eta: DMatrix::from_element(n, k, 0.5),
        tau1: vec![alpha0; k],
        tau2: vec![beta0; k],
        c: hp.c0,
        d: hp.d0,
        e: hp.e0,
        f: hp.f0,
        hp: *hp,
    })
}

/// Signal-to-noise ratio assumed by [`prime`] for the first sweep.
const PRIME_SNR: f64 = 10.0;

/// Moves a fresh posterior off the degenerate prior state before the first
/// sweep.
///
/// With `ν = 0` every atom update returns a zero mean, and with the prior
/// atom variance `E[d_kᵀd_k]` is dominated by `trace(Σ_k) = 1` rather than
/// `‖μ_k‖² = 1/P`, so the first indicator update switches everything off.
/// Priming sets `q(γ_ε)` to a mean of `PRIME_SNR` over the data power, gives
/// each atom the variance its precision update implies under the current
/// weight moments, then updates every weight factor once and the Beta
/// factors from the current usage.
fn prime(post: &mut VbPosterior, data: &DMatrix<f64>) {
    let (n, p) = data.shape();
    let power = data.norm_squared() / (n * p) as f64;
    let gamma_eps = if power > 0.0 { PRIME_SNR / power } else { 1.0 };
    post.e = post.hp.e0 + (n * p) as f64 / 2.0;
    post.f = post.e / gamma_eps;
    for k in 0..post.n_atoms() {
        let load: f64 = (0..n)
            .map(|i| post.eta[(i, k)] * (post.nu[(i, k)].powi(2) + post.omega[(i, k)]))
            .sum();
        post.sigma[k] = 1.0 / (p as f64 + gamma_eps * load);
    }
    let xt = data.transpose();
    let mut r = post.residuals(&xt);
    for k in 0..post.n_atoms() {
        update_weights(post, &mut r, k);
        update_usage_prior(post, k);
    }
}

/// Variational E-step: refresh every `q(z_ik)` in log space.
///
/// Samples are visited in order and atoms within a sample sequentially, with
/// the residual kept current, so each refresh is an exact coordinate update.
pub fn vb_e_step(post: &VbPosterior, data: &DMatrix<f64>) -> Result<VbPosterior> {
    check_shape(post, data)?;
    let mut next = post.clone();
    let k = next.n_atoms();
    let gamma_eps = next.noise_precision();

    let mut log_usage = Vec::with_capacity(k);
    let mut second = Vec::with_capacity(k);
    let mut mu_sq = Vec::with_capacity(k);
    for kk in 0..k {
        log_usage.push(next.log_usage(kk)?);
        second.push(next.atom_second_moment(kk));
        mu_sq.push(next.mu.column(kk).norm_squared());
    }

    let xt = data.transpose();
    let mut r = next.residuals(&xt);
    for i in 0..next.n_samples() {
        let mut ri = r.column_mut(i);
        for kk in 0..k {
            let nu = next.nu[(i, kk)];
            let eta = next.eta[(i, kk)];
            let mu_k = next.mu.column(kk);
            // μ_kᵀ x_i^{-k} with x_i^{-k} = r_i + η ν μ_k
            let proj = mu_k.dot(&ri) + eta * nu * mu_sq[kk];
            let s2 = nu * nu + next.omega[(i, kk)];
            let (ln_pi, ln_not_pi) = log_usage[kk];
            let log_on = ln_pi - 0.5 * gamma_eps * (s2 * second[kk] - 2.0 * nu * proj);
            let log_off = ln_not_pi;
            let new_eta = bernoulli_mean(log_on, log_off);
            let delta = (eta - new_eta) * nu;
            if delta != 0.0 {
                ri.axpy(delta, &mu_k, 1.0);
            }
            next.eta[(i, kk)] = new_eta;
        }
    }
    Ok(next)
}

/// `exp(a) / (exp(a) + exp(b))`, normalized against the larger exponent so
/// neither branch can overflow.
fn bernoulli_mean(log_on: f64, log_off: f64) -> f64 {
    let diff = log_on - log_off;
    if diff >= 0.0 {
        1.0 / (1.0 + (-diff).exp())
    } else {
        let w = diff.exp();
        w / (1.0 + w)
    }
}

/// Joint coordinate update of each pair `q(s_ik) q(z_ik)`.
///
/// The indicator update alone cannot revive a switched-off atom: `ν_ik`
/// scales with `η_ik`, so once `η_ik ≈ 0` the weight factor sits at its prior
/// and the indicator sees only its cost. Here the weight factor is profiled
/// out in closed form for every candidate `η`, leaving the one-dimensional
/// bound
///
/// `F(η) = (γ_ε η b)² / 2A - ½ ln A + η (E[ln π] - E[ln(1-π)]) + H(η)`,
/// `A = γ_s + γ_ε η E[dᵀd]`, `b = μ_kᵀ x_i^{-k}`,
///
/// which is maximized over a logit grid that includes the current `η`, so
/// the bound cannot decrease.
pub fn vb_code_step(post: &VbPosterior, data: &DMatrix<f64>) -> Result<VbPosterior> {
    check_shape(post, data)?;
    let mut next = post.clone();
    let gamma_eps = next.noise_precision();
    let gamma_s = next.weight_precision();
    let xt = data.transpose();
    let mut r = next.residuals(&xt);
    let grid: Vec<f64> = (-CODE_GRID..=CODE_GRID)
        .map(|j| logistic(j as f64 * CODE_GRID_STEP))
        .collect();

    for k in 0..next.n_atoms() {
        let (ln_pi, ln_not_pi) = next.log_usage(k)?;
        let prior_odds = ln_pi - ln_not_pi;
        let second = next.atom_second_moment(k);
        let mu_k = next.mu.column(k).into_owned();
        let mu_sq = mu_k.norm_squared();
        let bound = |eta: f64, b: f64| {
            let a = gamma_s + gamma_eps * eta * second;
            let fit = gamma_eps * eta * b;
            fit * fit / (2.0 * a) - 0.5 * a.ln() + eta * prior_odds - xlogx(eta) - xlogx(1.0 - eta)
        };
        for i in 0..next.n_samples() {
            let (eta0, nu0) = (next.eta[(i, k)], next.nu[(i, k)]);
            let b = mu_k.dot(&r.column(i)) + eta0 * nu0 * mu_sq;
            let mut best = (bound(eta0, b), eta0);
            let mut best_u = 0.0;
            for (j, &g) in grid.iter().enumerate() {
                let v = bound(g, b);
                if v > best.0 {
                    best = (v, g);
                    best_u = (j as i32 - CODE_GRID) as f64 * CODE_GRID_STEP;
                }
            }
            let (u, v) = golden_max(
                |u| bound(logistic(u), b),
                best_u - CODE_GRID_STEP,
                best_u + CODE_GRID_STEP,
            );
            if v > best.0 {
                best = (v, logistic(u));
            }
            let eta = best.1;
            let a = gamma_s + gamma_eps * eta * second;
            let nu = gamma_eps * eta * b / a;
            let delta = eta0 * nu0 - eta * nu;
            if delta != 0.0 {
                r.column_mut(i).axpy(delta, &mu_k, 1.0);
            }
            next.eta[(i, k)] = eta;
            next.nu[(i, k)] = nu;
            next.omega[(i, k)] = 1.0 / a;
        }
    }
    Ok(next)
}

/// Coarse logit grid `j · CODE_GRID_STEP` for `|j| ≤ CODE_GRID`, refined by
/// golden-section search around the best grid point.
const CODE_GRID: i32 = 12;
const CODE_GRID_STEP: f64 = 2.5;
const GOLDEN_ITERS: usize = 16;

/// Golden-section search for a maximum of `f` on `[lo, hi]`; returns the
/// best point evaluated and its value.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Variational M-step: for each atom update `q(d_k)`, then every `q(s_ik)`,
/// then `q(π_k)`; finally both Gamma factors.
pub fn vb_m_step(post: &VbPosterior, data: &DMatrix<f64>) -> Result<VbPosterior> {
    check_shape(post, data)?;
    let mut next = post.clone();
    let xt = data.transpose();
    let mut r = next.residuals(&xt);
    for k in 0..next.n_atoms() {
        update_atom(&mut next, &mut r, k)?;
        update_weights(&mut next, &mut r, k);
        update_usage_prior(&mut next, k);
    }
    update_precisions(&mut next, &xt, &r);
    Ok(next)
}

/// `q(d_k)`: precision `P + γ_ε Σ_i η_ik E[s_ik²]`, mean
/// `γ_ε Σ_k Σ_i η_ik ν_ik x_i^{-k}`.
fn update_atom(post: &mut VbPosterior, r: &mut DMatrix<f64>, k: usize) -> Result<()> {
    let n = post.n_samples();
    let p = post.n_vars();
    let gamma_eps = post.noise_precision();
    let old = post.mu.column(k).into_owned();

    let mut precision = p as f64;
    let mut acc = DVector::zeros(p);
    for i in 0..n {
        let eta = post.eta[(i, k)];
        let nu = post.nu[(i, k)];
        precision += gamma_eps * eta * (nu * nu + post.omega[(i, k)]);
        let w = eta * nu;
        if w != 0.0 {
            // x_i^{-k} = r_i + w μ_k
            acc.axpy(w, &r.column(i), 1.0);
            acc.axpy(w * w, &old, 1.0);
        }
    }
    let mut variance = 1.0 / precision;
    if !(variance > 0.0 && variance.is_finite()) {
        // Retry once with jitter before giving up.
        variance = 1.0 / (precision + 1e-10);
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Numerical(format!(
                "atom {k} covariance inversion failed (precision {precision})"
            )));
        }
    }
    let new = acc * (gamma_eps * variance);
    for i in 0..n {
        let w = post.eta[(i, k)] * post.nu[(i, k)];
        if w != 0.0 {
            let mut ri = r.column_mut(i);
            ri.axpy(w, &old, 1.0);
            ri.axpy(-w, &new, 1.0);
        }
    }
    post.sigma[k] = variance;
    post.mu.set_column(k, &new);
    Ok(())
}

/// `q(s_ik)` for every sample: precision `γ_s + γ_ε η_ik E[d_kᵀd_k]`,
/// mean `γ_ε Ω_ik η_ik μ_kᵀ x_i^{-k}`.
fn update_weights(post: &mut VbPosterior, r: &mut DMatrix<f64>, k: usize) {
    let gamma_eps = post.noise_precision();
    let gamma_s = post.weight_precision();
    let second = post.atom_second_moment(k);
    let mu_k = post.mu.column(k).into_owned();
    let mu_sq = mu_k.norm_squared();
    for i in 0..post.n_samples() {
        let eta = post.eta[(i, k)];
        let nu = post.nu[(i, k)];
        let mut ri = r.column_mut(i);
        let proj = mu_k.dot(&ri) + eta * nu * mu_sq;
        let omega = 1.0 / (gamma_s + gamma_eps * eta * second);
        let new_nu = gamma_eps * omega * eta * proj;
        let delta = eta * (nu - new_nu);
        if delta != 0.0 {
            ri.axpy(delta, &mu_k, 1.0);
        }
        post.omega[(i, k)] = omega;
        post.nu[(i, k)] = new_nu;
    }
}

/// `q(π_k)`: `τ_1k = a0/K + Σ_i η_ik`, `τ_2k = b0(K-1)/K + N - Σ_i η_ik`.
fn update_usage_prior(post: &mut VbPosterior, k: usize) {
    let (alpha0, beta0) = post.hp.beta_prior();
    let n_k: f64 = post.eta.column(k).sum();
    post.tau1[k] = alpha0 + n_k;
    post.tau2[k] = beta0 + post.n_samples() as f64 - n_k;
}

/// Both Gamma factors from the current sufficient statistics.
fn update_precisions(post: &mut VbPosterior, xt: &DMatrix<f64>, r: &DMatrix<f64>) {
    let (n, k, p) = (post.n_samples(), post.n_atoms(), post.n_vars());
    let hp = post.hp;
    let s2_sum: f64 = post.nu.iter().zip(post.omega.iter()).map(|(nu, om)| nu * nu + om).sum();
    post.c = hp.c0 + (n * k) as f64 / 2.0;
    post.d = hp.d0 + 0.5 * s2_sum;
    post.e = hp.e0 + (n * p) as f64 / 2.0;
    post.f = hp.f0 + 0.5 * expected_sq_error(post, xt, r);
}

/// `Σ_i E‖x_i - D(z_i ⊙ s_i)‖²`, using the identity
/// `E‖·‖² = ‖r_i‖² + Σ_k η_ik (E[s_ik²] E[d_kᵀd_k] - η_ik ν_ik² ‖μ_k‖²)`.
fn expected_sq_error(post: &VbPosterior, _xt: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let k = post.n_atoms();
    let second: Vec<f64> = (0..k).map(|kk| post.atom_second_moment(kk)).collect();
    let mu_sq: Vec<f64> = (0..k).map(|kk| post.mu.column(kk).norm_squared()).collect();
    let mut total = 0.0;
    for i in 0..post.n_samples() {
        total += r.column(i).norm_squared();
        for kk in 0..k {
            let eta = post.eta[(i, kk)];
            let nu = post.nu[(i, kk)];
            let s2 = nu * nu + post.omega[(i, kk)];
            total += eta * (s2 * second[kk] - eta * nu * nu * mu_sq[kk]);
        }
    }
    total
}

/// Evidence lower bound split by factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub likelihood: f64,
    pub atoms: f64,
    pub weights: f64,
    pub indicators: f64,
    pub usage: f64,
    pub precisions: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.atoms + self.weights + self.indicators + self.usage + self.precisions
    }
}

/// `E_q[log p(X, θ)] - E_q[log q(θ)]`.
pub fn compute_elbo(post: &VbPosterior, data: &DMatrix<f64>) -> Result<f64> {
    Ok(elbo_terms(post, data)?.total())
}

/// Lower bound grouped by factor; each group pairs the expected log prior
/// (or likelihood) with the entropy of the matching `q`.
pub fn elbo_terms(post: &VbPosterior, data: &DMatrix<f64>) -> Result<ElboTerms> {
    check_shape(post, data)?;
    let (n, k, p) = (post.n_samples(), post.n_atoms(), post.n_vars());
    let (nf, pf) = (n as f64, p as f64);
    let hp = post.hp;
    let xt = data.transpose();
    let r = post.residuals(&xt);

    let ln_gamma_eps = checked_digamma(post.e, "e'")? - post.f.ln();
    let ln_gamma_s = checked_digamma(post.c, "c'")? - post.d.ln();
    let gamma_eps = post.noise_precision();
    let gamma_s = post.weight_precision();

    let likelihood = 0.5 * nf * pf * (ln_gamma_eps - LN_2PI) - 0.5 * gamma_eps * expected_sq_error(post, &xt, &r);

    let mut atoms = 0.0;
    for kk in 0..k {
        atoms += 0.5 * pf * (pf.ln() - LN_2PI) - 0.5 * pf * post.atom_second_moment(kk);
        atoms += 0.5 * pf * (1.0 + LN_2PI + post.sigma[kk].ln());
    }

    let mut weights = 0.0;
    for (nu, om) in post.nu.iter().zip(post.omega.iter()) {
        weights += 0.5 * (ln_gamma_s - LN_2PI) - 0.5 * gamma_s * (nu * nu + om);
        weights += 0.5 * (1.0 + LN_2PI + om.ln());
    }

    let (alpha0, beta0) = hp.beta_prior();
    let mut indicators = 0.0;
    let mut usage = 0.0;
    for kk in 0..k {
        let (ln_pi, ln_not_pi) = post.log_usage(kk)?;
        for i in 0..n {
            let eta = post.eta[(i, kk)];
            indicators += eta * ln_pi + (1.0 - eta) * ln_not_pi;
            indicators -= xlogx(eta) + xlogx(1.0 - eta);
        }
        let (t1, t2) = (post.tau1[kk], post.tau2[kk]);
        usage += -ln_beta(alpha0, beta0) + (alpha0 - 1.0) * ln_pi + (beta0 - 1.0) * ln_not_pi;
        usage +=
            ln_beta(t1, t2) - (t1 - 1.0) * digamma(t1) - (t2 - 1.0) * digamma(t2) + (t1 + t2 - 2.0) * digamma(t1 + t2);
    }

    let precisions = gamma_log_prior(hp.c0, hp.d0, ln_gamma_s, gamma_s)
        + gamma_entropy(post.c, post.d)
        + gamma_log_prior(hp.e0, hp.f0, ln_gamma_eps, gamma_eps)
        + gamma_entropy(post.e, post.f);

    let terms = ElboTerms {
        likelihood,
        atoms,
        weights,
        indicators,
        usage,
        precisions,
    };
    let named = [
        ("likelihood", terms.likelihood),
        ("q(D)", terms.atoms),
        ("q(s)", terms.weights),
        ("q(z)", terms.indicators),
        ("q(pi)", terms.usage),
        ("q(gamma)", terms.precisions),
    ];
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("lower bound term {name} is {v}")));
        }
    }
    Ok(terms)
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `E[log Gamma(γ | shape, rate)]` given `E[ln γ]` and `E[γ]`.
fn gamma_log_prior(shape: f64, rate: f64, ln_mean: f64, mean: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * ln_mean - rate * mean
}

fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
}

/// One pass of E-step, joint code step and M-step.
fn sweep(post: &VbPosterior, data: &DMatrix<f64>) -> Result<VbPosterior> {
    let next = vb_m_step(&vb_code_step(&vb_e_step(post, data)?, data)?, data)?;
    if cfg!(debug_assertions) {
        next.check_invariants()?;
    }
    Ok(next)
}

/// Sweeps between merge attempts.
const MERGE_EVERY: usize = 10;
/// Minimum |cosine| between two atoms for a merge to be proposed.
const MERGE_COSINE: f64 = 0.9;

/// Proposes merging near-parallel active atoms.
///
/// Coordinate ascent cannot fold two copies of the same atom into one: each
/// sample is indifferent between them, so usage stays split. A merge moves
/// the weight of the less used atom onto the other, releases it, runs a few
/// sweeps and is kept only when the bound ends higher than `elbo`.
fn try_merges(mut post: VbPosterior, mut elbo: f64, data: &DMatrix<f64>) -> Result<(VbPosterior, f64)> {
    let usage = post.usage();
    let active: Vec<usize> = (0..post.n_atoms()).filter(|&k| usage[k] > ACTIVE_USAGE).collect();
    let mut pairs = Vec::new();
    for (ai, &a) in active.iter().enumerate() {
        for &b in &active[ai + 1..] {
            if let Some(cos) = atom_cosine(&post, a, b).filter(|&c| c >= MERGE_COSINE) {
                let (keep, drop) = if usage[a] >= usage[b] { (a, b) } else { (b, a) };
                pairs.push((cos, keep, drop));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut touched = vec![false; post.n_atoms()];
    for (_, keep, drop) in pairs {
        // earlier accepted proposals have moved every atom since the scan
        if touched[keep] || touched[drop] || atom_cosine(&post, keep, drop).is_none_or(|c| c < MERGE_COSINE) {
            continue;
        }
        let mut proposal = merged(&post, keep, drop);
        for _ in 0..REFIT_SWEEPS {
            proposal = sweep(&proposal, data)?;
        }
        let value = compute_elbo(&proposal, data)?;
        if value > elbo {
            log::debug!("merged atom {drop} into {keep}: bound {elbo} -> {value}");
            post = proposal;
            elbo = value;
            touched[keep] = true;
            touched[drop] = true;
        }
    }
    Ok((post, elbo))
}

/// `|cos|` between two atom means, `None` when either is zero.
fn atom_cosine(post: &VbPosterior, a: usize, b: usize) -> Option<f64> {
    let (ma, mb) = (post.mu.column(a), post.mu.column(b));
    let denom = ma.norm() * mb.norm();
    (denom > 0.0 && denom.is_finite()).then(|| (ma.dot(&mb) / denom).abs())
}

/// Sweeps a merge or removal proposal gets to re-express the affected
/// samples before it is judged.
const REFIT_SWEEPS: usize = 4;

/// Removal attempts per round, least used atoms first.
const DELETE_TRIES: usize = 3;

/// Proposes removing the least used atoms. Each removal is kept only when,
/// after a few sweeps, the bound ends higher than `elbo`.
fn try_deletes(mut post: VbPosterior, mut elbo: f64, data: &DMatrix<f64>) -> Result<(VbPosterior, f64)> {
    let usage = post.usage();
    let mut order: Vec<usize> = (0..post.n_atoms()).filter(|&k| usage[k] > ACTIVE_USAGE).collect();
    order.sort_by(|&a, &b| usage[a].total_cmp(&usage[b]));
    for k in order.into_iter().take(DELETE_TRIES) {
        let mut proposal = released(&post, k);
        for _ in 0..REFIT_SWEEPS {
            proposal = sweep(&proposal, data)?;
        }
        let value = compute_elbo(&proposal, data)?;
        if value <= elbo {
            continue;
        }
        log::debug!("removed atom {k}: bound {elbo} -> {value}");
        post = proposal;
        elbo = value;
    }
    Ok((post, elbo))
}

/// Fraction of worst-reconstructed samples that seed a new atom.
const BIRTH_FRACTION: f64 = 0.05;

/// Proposes a new atom in an unused slot, pointing along the dominant
/// direction of the residuals of the worst-reconstructed samples. Kept only
/// when, after a few sweeps, the bound ends higher than `elbo`.
fn try_birth(post: VbPosterior, elbo: f64, data: &DMatrix<f64>) -> Result<(VbPosterior, f64)> {
    let usage = post.usage();
    let Some(slot) = (0..post.n_atoms()).find(|&k| usage[k] <= ACTIVE_USAGE) else {
        return Ok((post, elbo));
    };
    let r = post.residuals(&data.transpose());
    let mut order: Vec<usize> = (0..post.n_samples()).collect();
    let energy: Vec<f64> = r.column_iter().map(|c| c.norm_squared()).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]));
    let take = ((post.n_samples() as f64 * BIRTH_FRACTION).ceil() as usize).max(1);
    let worst = r.select_columns(&order[..take]);
    let scatter = &worst * worst.transpose();
    let eig = scatter.symmetric_eigen();
    let lead = eig.eigenvalues.imax();
    let direction = eig.eigenvectors.column(lead).into_owned();

    let active: Vec<usize> = (0..post.n_atoms()).filter(|&k| usage[k] > ACTIVE_USAGE).collect();
    let norm = if active.is_empty() {
        1.0 / (post.n_vars() as f64).sqrt()
    } else {
        active.iter().map(|&k| post.mu.column(k).norm()).sum::<f64>() / active.len() as f64
    };
    let mut proposal = released(&post, slot);
    proposal.mu.set_column(slot, &(direction * norm));
    proposal.sigma[slot] = 0.0f64.max(post.sigma.iter().copied().fold(f64::INFINITY, f64::min));
    for _ in 0..REFIT_SWEEPS {
        proposal = sweep(&proposal, data)?;
    }
    let value = compute_elbo(&proposal, data)?;
    if value > elbo {
        log::debug!("new atom in slot {slot}: bound {elbo} -> {value}");
        Ok((proposal, value))
    } else {
        Ok((post, elbo))
    }
}

/// `post` with atom `k` switched off everywhere and reset to its prior.
fn released(post: &VbPosterior, k: usize) -> VbPosterior {
    let mut next = post.clone();
    let gamma_s = post.weight_precision();
    next.eta.column_mut(k).fill(0.0);
    next.nu.column_mut(k).fill(0.0);
    next.omega.column_mut(k).fill(1.0 / gamma_s);
    next.mu.column_mut(k).fill(0.0);
    next.sigma[k] = 1.0 / post.n_vars() as f64;
    update_usage_prior(&mut next, k);
    next
}

/// `post` with atom `drop` folded into atom `keep` and reset to its prior.
fn merged(post: &VbPosterior, keep: usize, drop: usize) -> VbPosterior {
    let mut next = post.clone();
    let mu_keep = post.mu.column(keep);
    let scale = post.mu.column(drop).dot(&mu_keep) / mu_keep.norm_squared();
    for i in 0..post.n_samples() {
        let moved = post.eta[(i, drop)] * post.nu[(i, drop)] * scale;
        let eta = post.eta[(i, keep)].max(post.eta[(i, drop)]);
        if eta > 0.0 {
            next.eta[(i, keep)] = eta;
            next.nu[(i, keep)] = (post.eta[(i, keep)] * post.nu[(i, keep)] + moved) / eta;
        }
    }
    update_usage_prior(&mut next, keep);
    released(&next, drop)
}

/// Primes a seeded initialization, then runs sweeps of E-step, joint code
/// step and M-step until the relative lower-bound change drops below `tol`
/// or `max_iter` sweeps have run. Every `MERGE_EVERY` sweeps merge, removal
/// and birth proposals are tried. With several restarts the run ending at
/// the highest bound wins.
pub fn fit(data: &DMatrix<f64>, hp: &Hyperparams, opts: FitOptions) -> Result<DictionaryModel> {
    fit_with_posterior(data, hp, opts).map(|(m, _)| m)
}

/// One initialization followed by sweeps and periodic moves until the
/// relative bound change drops below `opts.tol`.
fn run_from(
    data: &DMatrix<f64>,
    hp: &Hyperparams,
    seed: u64,
    opts: &FitOptions,
) -> Result<(VbPosterior, Vec<f64>, bool)> {
    let mut post = init_model(data, hp, seed)?;
    prime(&mut post, data);
    let mut prev = compute_elbo(&post, data)?;
    let mut trace = Vec::new();
    let mut converged = false;

    for it in 0..opts.max_iter.max(1) {
        post = sweep(&post, data)?;
        let mut elbo = compute_elbo(&post, data)?;
        if (it + 1) % MERGE_EVERY == 0 {
            (post, elbo) = try_merges(post, elbo, data)?;
            (post, elbo) = try_deletes(post, elbo, data)?;
            (post, elbo) = try_birth(post, elbo, data)?;
        }
        trace.push(elbo);
        let rel = (elbo - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = elbo;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }
    Ok((post, trace, converged))
}

/// [`fit`], also returning the variational posterior of the winning run.
pub fn fit_with_posterior(
    data: &DMatrix<f64>,
    hp: &Hyperparams,
    opts: FitOptions,
) -> Result<(DictionaryModel, VbPosterior)> {
    let mut best: Option<(VbPosterior, Vec<f64>, bool)> = None;
    for r in 0..opts.restarts.max(1) {
        let run = run_from(data, hp, opts.seed.wrapping_add(r as u64), &opts)?;
        let better = match &best {
            None => true,
            Some((_, trace, _)) => run.1.last() > trace.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let (post, trace, converged) = best.expect("at least one restart runs");

    let usage = post.usage();
    let active_mask: Vec<bool> = usage.iter().map(|&u| u > ACTIVE_USAGE).collect();
    if !active_mask.iter().any(|&a| a) {
        log::warn!("no atom exceeded the usage threshold {ACTIVE_USAGE}");
    }
    let hard: usize = (0..post.n_samples())
        .map(|i| {
            (0..post.n_atoms())
                .filter(|&k| active_mask[k] && post.eta[(i, k)] >= 0.5)
                .count()
        })
        .sum();
    let model = DictionaryModel {
        dictionary: post.mu.clone(),
        active_mask,
        usage,
        noise_precision: post.noise_precision(),
        hyperparams: *hp,
        iterations: trace.len(),
        elbo_trace: trace,
        mean_atoms_per_sample: hard as f64 / post.n_samples() as f64,
        converged,
    };
    Ok((model, post))
}
