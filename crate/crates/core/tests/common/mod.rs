#![allow(dead_code)]

use nalgebra::DMatrix;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Samples drawn from a known sparse dictionary.
pub struct SparseSynthetic {
    /// P×atoms, unit-norm columns.
    pub atoms: DMatrix<f64>,
    /// N×P observations.
    pub data: DMatrix<f64>,
    /// N×atoms generating weights (zero where an atom is unused).
    pub weights: DMatrix<f64>,
}

/// Random unit atoms, each sample uses `per_sample` distinct atoms with
/// weights kept away from zero; noise is scaled to the requested SNR in dB.
pub fn sparse_synthetic(
    p: usize,
    n_atoms: usize,
    n: usize,
    per_sample: usize,
    snr_db: f64,
    seed: u64,
) -> SparseSynthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = random_atoms(p, n_atoms, &mut rng);
    let mut weights: DMatrix<f64> = DMatrix::zeros(n, n_atoms);
    for i in 0..n {
        for k in rand::seq::index::sample(&mut rng, n_atoms, per_sample).iter() {
            let w: f64 = StandardNormal.sample(&mut rng);
            weights[(i, k)] = w + 0.5 * w.signum();
        }
    }
    finish(atoms, weights, snr_db, &mut rng)
}

/// Draws from the beta-Bernoulli generative model itself: every atom is
/// switched on independently with probability `usage` and carries an N(0,1)
/// weight.
pub fn bernoulli_synthetic(p: usize, n_atoms: usize, n: usize, usage: f64, snr_db: f64, seed: u64) -> SparseSynthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = random_atoms(p, n_atoms, &mut rng);
    let mut weights: DMatrix<f64> = DMatrix::zeros(n, n_atoms);
    for i in 0..n {
        for k in 0..n_atoms {
            if rng.random::<f64>() < usage {
                weights[(i, k)] = StandardNormal.sample(&mut rng);
            }
        }
    }
    finish(atoms, weights, snr_db, &mut rng)
}

fn random_atoms(p: usize, n_atoms: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut atoms: DMatrix<f64> = DMatrix::from_fn(p, n_atoms, |_, _| StandardNormal.sample(rng));
    for mut c in atoms.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    atoms
}

fn finish(atoms: DMatrix<f64>, weights: DMatrix<f64>, snr_db: f64, rng: &mut ChaCha8Rng) -> SparseSynthetic {
    let clean = &weights * atoms.transpose();
    let (n, p) = clean.shape();
    let signal_power = clean.norm_squared() / (n * p) as f64;
    let noise_sd = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let data = DMatrix::from_fn(n, p, |i, j| {
        let g: f64 = StandardNormal.sample(rng);
        clean[(i, j)] + noise_sd * g
    });
    SparseSynthetic { atoms, data, weights }
}

/// Maximum-weight assignment of true atoms to learned atoms by |cosine|.
/// Returns the matched |cosine| per true atom.
pub fn match_atoms(truth: &DMatrix<f64>, learned: &DMatrix<f64>) -> Vec<f64> {
    assert!(learned.ncols() >= truth.ncols());
    let cos = |a: usize, b: usize| {
        let t = truth.column(a);
        let l = learned.column(b);
        let nl = l.norm();
        if nl == 0.0 {
            0.0
        } else {
            (t.dot(&l) / (t.norm() * nl)).abs()
        }
    };
    let scale = 1e9;
    let weights = Matrix::from_fn(truth.ncols(), learned.ncols(), |(a, b)| {
        (cos(a, b) * scale).round() as i64
    });
    let (_, assignment) = kuhn_munkres(&weights);
    assignment.iter().enumerate().map(|(a, &b)| cos(a, b)).collect()
}

/// Stable VAR(2) with unit Gaussian innovations. Returns the series (T×n)
/// and the stacked coefficients `[A1ᵀ; A2ᵀ]` rescaled so the companion
/// matrix has the requested spectral radius.
pub fn simulate_var2(n: usize, t: usize, radius: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let a2: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let c = radius / companion_radius(&a1, &a2);
    let (a1, a2) = (a1 * c, a2 * (c * c));
    let burn = 500;
    let mut x: DMatrix<f64> = DMatrix::zeros(t + burn, n);
    for i in 2..t + burn {
        let e = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let next = &a1 * x.row(i - 1).transpose() + &a2 * x.row(i - 2).transpose() + e;
        x.row_mut(i).copy_from(&next.transpose());
    }
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&a1.transpose());
    stacked.view_mut((n, 0), (n, n)).copy_from(&a2.transpose());
    (x.rows(burn, t).into_owned(), stacked)
}

pub fn companion_radius(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> f64 {
    let n = a1.nrows();
    let mut comp = DMatrix::zeros(2 * n, 2 * n);
    comp.view_mut((0, 0), (n, n)).copy_from(a1);
    comp.view_mut((0, n), (n, n)).copy_from(a2);
    comp.view_mut((n, 0), (n, n)).fill_with_identity();
    comp.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}
