//! Orthogonal matching pursuit against a frozen dictionary.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse representation of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    /// Selected atom indices in selection order.
    pub support: Vec<usize>,
    /// Least-squares coefficients aligned with `support`.
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
}

impl SparseCode {
    pub fn empty(residual_norm: f64) -> Self {
        Self {
            support: Vec::new(),
            coefficients: Vec::new(),
            residual_norm,
        }
    }

    /// Dense coefficient vector of length `k`.
    pub fn dense(&self, k: usize) -> Result<DVector<f64>> {
        let mut w = DVector::zeros(k);
        for (&j, &c) in self.support.iter().zip(&self.coefficients) {
            if j >= k {
                return Err(Error::Dimension(format!("atom index {j} out of range for {k} atoms")));
            }
            w[j] = c;
        }
        Ok(w)
    }
}

/// Rejects dictionaries with non-finite entries or all-zero columns.
pub fn check_dictionary(dictionary: &DMatrix<f64>) -> Result<()> {
    if dictionary.ncols() == 0 {
        return Err(Error::InvalidArgument("dictionary has no atoms".into()));
    }
    for (k, col) in dictionary.column_iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("atom {k} has non-finite entries")));
        }
        if col.norm() == 0.0 {
            return Err(Error::InvalidArgument(format!("atom {k} is all zeros")));
        }
    }
    Ok(())
}

/// Sparsity cap from the training average of atoms per sample, rounded up.
pub fn default_t_max(mean_atoms_per_sample: f64) -> usize {
    (mean_atoms_per_sample.ceil() as usize).max(1)
}

/// Residual tolerance `1e-6 · ‖y‖`.
pub fn default_residual_tol(sample: &DVector<f64>) -> f64 {
    1e-6 * sample.norm()
}

/// Greedy OMP: repeatedly picks the atom whose normalized column correlates
/// most with the residual (lowest index on ties), then refits all selected
/// coefficients by least squares. Stops after `t_max` atoms, once the
/// residual norm drops below `residual_tol`, or when no unused atom
/// correlates with the residual.
pub fn omp_encode(
    dictionary: &DMatrix<f64>,
    sample: &DVector<f64>,
    t_max: usize,
    residual_tol: f64,
) -> Result<SparseCode> {
    let (p, k) = dictionary.shape();
    if sample.len() != p {
        return Err(Error::Dimension(format!(
            "sample has {} entries, dictionary has {p} rows",
            sample.len()
        )));
    }
    if t_max == 0 {
        return Err(Error::InvalidArgument("t_max must be at least 1".into()));
    }
    let norms: Vec<f64> = dictionary.column_iter().map(|c| c.norm()).collect();
    let mut code = SparseCode::empty(sample.norm());
    let mut residual = sample.clone();
    let mut used = vec![false; k];
    let mut basis = Basis::default();

    while code.support.len() < t_max.min(k) && code.residual_norm >= residual_tol {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..k).filter(|&j| !used[j] && norms[j] > 0.0) {
            let score = (dictionary.column(j).dot(&residual) / norms[j]).abs();
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let Some((j, score)) = best else { break };
        if score == 0.0 {
            break;
        }
        used[j] = true;
        if !basis.push(&dictionary.column(j).into_owned(), sample) {
            // numerically inside the span of the current support
            continue;
        }
        code.support.push(j);
        let coef = basis.coefficients();
        let sub = dictionary.select_columns(&code.support);
        residual = sample - &sub * &coef;
        code.coefficients = coef.iter().copied().collect();
        code.residual_norm = residual.norm();
    }
    Ok(code)
}

/// Incremental thin QR of the selected columns by Gram-Schmidt with one
/// reorthogonalization pass, plus `Qᵀy`.
#[derive(Default)]
struct Basis {
    q: Vec<DVector<f64>>,
    /// Columns of the upper-triangular factor.
    r: Vec<Vec<f64>>,
    qty: Vec<f64>,
}

impl Basis {
    fn push(&mut self, column: &DVector<f64>, y: &DVector<f64>) -> bool {
        let mut v = column.clone();
        let mut rcol = vec![0.0; self.q.len() + 1];
        for _ in 0..2 {
            for (i, qi) in self.q.iter().enumerate() {
                let c = qi.dot(&v);
                rcol[i] += c;
                v.axpy(-c, qi, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= 1e-12 * column.norm() {
            return false;
        }
        v /= norm;
        rcol[self.q.len()] = norm;
        self.qty.push(v.dot(y));
        self.q.push(v);
        self.r.push(rcol);
        true
    }

    /// Back-substitution of `R c = Qᵀy`.
    fn coefficients(&self) -> DVector<f64> {
        let t = self.q.len();
        let mut c = DVector::zeros(t);
        for i in (0..t).rev() {
            let mut acc = self.qty[i];
            for j in i + 1..t {
                acc -= self.r[j][i] * c[j];
            }
            c[i] = acc / self.r[i][i];
        }
        c
    }
}

/// Encodes every row of `data` (N×P).
pub fn encode_rows(dictionary: &DMatrix<f64>, data: &DMatrix<f64>, t_max: usize) -> Result<Vec<SparseCode>> {
    data.row_iter()
        .map(|row| {
            let y = row.transpose();
            let tol = default_residual_tol(&y);
            omp_encode(dictionary, &y, t_max, tol)
        })
        .collect()
}

/// Stacks `D ŵ_i` for every code as the rows of an N×P matrix.
pub fn reconstruct(dictionary: &DMatrix<f64>, codes: &[SparseCode]) -> Result<DMatrix<f64>> {
    let (p, k) = dictionary.shape();
    let mut out = DMatrix::zeros(codes.len(), p);
    for (i, code) in codes.iter().enumerate() {
        let psi = dictionary * code.dense(k)?;
        out.row_mut(i).copy_from(&psi.transpose());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dictionary_picks_the_basis_vector() {
        let d = DMatrix::identity(5, 5);
        let y = DVector::from_fn(5, |i, _| if i == 3 { 1.0 } else { 0.0 });
        let code = omp_encode(&d, &y, 1, 1e-12).unwrap();
        assert_eq!(code.support, vec![3]);
        assert_eq!(code.coefficients, vec![1.0]);
        assert_eq!(code.residual_norm, 0.0);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let d = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![0.0, 2.0, -2.0]);
        let code = omp_encode(&d, &y, 1, 0.0).unwrap();
        assert_eq!(code.support, vec![1]);
    }

    #[test]
    fn selection_normalizes_but_coefficients_do_not() {
        // second column is longer but less aligned with y
        let d = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 10.0, 10.0]);
        let y = DVector::from_vec(vec![1.0, 0.2]);
        let code = omp_encode(&d, &y, 1, 0.0).unwrap();
        assert_eq!(code.support, vec![0]);
        assert!((code.coefficients[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stops_at_tolerance() {
        let d = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![3.0, 1e-9, 0.0, 0.0]);
        let code = omp_encode(&d, &y, 4, 1e-6).unwrap();
        assert_eq!(code.support, vec![0]);
    }

    #[test]
    fn empty_code_reconstructs_to_zero() {
        let d = DMatrix::identity(3, 3);
        let rows = reconstruct(&d, &[SparseCode::empty(0.0)]).unwrap();
        assert!(rows.iter().all(|&v| v == 0.0));
        let bad = SparseCode {
            support: vec![7],
            coefficients: vec![1.0],
            residual_norm: 0.0,
        };
        assert!(reconstruct(&d, &[bad]).is_err());
    }

    #[test]
    fn rejects_zero_atoms() {
        let d = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(check_dictionary(&d).is_err());
        assert!(check_dictionary(&DMatrix::identity(2, 2)).is_ok());
    }

    #[test]
    fn default_cap_rounds_up() {
        assert_eq!(default_t_max(2.1), 3);
        assert_eq!(default_t_max(0.0), 1);
    }
}
