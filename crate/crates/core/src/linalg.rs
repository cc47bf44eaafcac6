//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest admissible pivot of the unit-diagonal-scaled Cholesky factor.
/// Anything below is treated as exact collinearity.
const PIVOT_TOLERANCE: f64 = 1e-6;

/// Cholesky factorisation of a symmetric positive-definite matrix with a
/// scale-free collinearity check.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>, what: &str) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::LinearAlgebra(format!("{what}: matrix is not square")));
        }
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let d = a[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::RankDeficient(format!(
                    "{what}: non-positive diagonal entry at {i}"
                )));
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut scaled = a.clone();
        for j in 0..n {
            for i in 0..n {
                scaled[(i, j)] *= scale[i] * scale[j];
            }
        }
        let chol = Cholesky::new(scaled)
            .ok_or_else(|| Error::RankDeficient(format!("{what}: matrix is not positive definite")))?;
        let l = chol.l_dirty();
        for i in 0..n {
            if l[(i, i)] < PIVOT_TOLERANCE {
                return Err(Error::RankDeficient(format!(
                    "{what}: column {i} is (numerically) collinear with the others"
                )));
            }
        }
        Ok(Self { chol, scale })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let scaled = b.component_mul(&self.scale);
        self.chol.solve(&scaled).component_mul(&self.scale)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = b.clone();
        for j in 0..scaled.ncols() {
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= self.scale[i];
            }
        }
        let mut out = self.chol.solve(&scaled);
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] *= self.scale[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = self.chol.inverse();
        for j in 0..n {
            for i in 0..n {
                inv[(i, j)] *= self.scale[i] * self.scale[j];
            }
        }
        inv
    }

    /// Diagonal entries `from..n` of the inverse, without forming it.
    pub fn inverse_diagonal(&self, from: usize) -> Vec<f64> {
        let n = self.dim();
        let l = self.chol.l_dirty();
        let mut v = vec![0.0; n];
        (from..n)
            .map(|j| {
                // ‖L⁻¹e_j‖²; L⁻¹e_j vanishes above row j.
                v[j] = 1.0 / l[(j, j)];
                let mut ss = v[j] * v[j];
                for i in j + 1..n {
                    let mut acc = 0.0;
                    for k in j..i {
                        acc += l[(i, k)] * v[k];
                    }
                    v[i] = -acc / l[(i, i)];
                    ss += v[i] * v[i];
                }
                ss * self.scale[j] * self.scale[j]
            })
            .collect()
    }

    /// log-determinant of the original (unscaled) matrix.
    pub fn ln_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        let mut s = 0.0;
        for i in 0..self.dim() {
            s += 2.0 * l[(i, i)].ln() - 2.0 * self.scale[i].ln();
        }
        s
    }
}

/// Plain Cholesky for covariance matrices where only positive definiteness
/// matters (no collinearity diagnostics).
pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone())
        .ok_or_else(|| Error::LinearAlgebra(format!("{what}: matrix is not positive definite")))
}

/// Symmetrise and clip negative eigenvalues at zero.
///
/// Returns the repaired matrix and the smallest eigenvalue before clipping.
pub fn psd_clip(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return (sym, min);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for j in 0..scaled.ncols() {
        scaled.column_mut(j).scale_mut(clipped[j]);
    }
    let repaired = &scaled * u.transpose();
    (((&repaired) + repaired.transpose()) * 0.5, min)
}

/// Factor `L` (n x r) with `a = L Lᵀ` for a symmetric PSD matrix; negative
/// eigenvalues are clipped. Zero columns are dropped.
pub fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&j| eig.eigenvalues[j] > 1e-14 * scale)
        .collect();
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, keep.len());
    for (c, &j) in keep.iter().enumerate() {
        let s = eig.eigenvalues[j].sqrt();
        for i in 0..n {
            l[(i, c)] = eig.eigenvectors[(i, j)] * s;
        }
    }
    l
}

pub fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn select_cols(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

pub fn select_block(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Scale row `i` of `a` by `w[i]`.
pub fn scale_rows(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            out[(i, j)] *= w[i];
        }
    }
    out
}

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n as f64 - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_diagonal_matches_inverse() {
        let a = DMatrix::from_fn(5, 5, |i, j| if i == j { 4.0 + i as f64 } else { 1.0 / (1.0 + (i + j) as f64) });
        let f = SpdFactor::new(&a, "test").unwrap();
        let inv = f.inverse();
        let d = f.inverse_diagonal(2);
        for (k, v) in d.iter().enumerate() {
            assert!((v - inv[(k + 2, k + 2)]).abs() < 1e-14);
        }
    }

    #[test]
    fn factor_detects_duplicate_column() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let xtx = x.transpose() * &x;
        assert!(matches!(SpdFactor::new(&xtx, "xtx"), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn factor_solves_and_inverts() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = SpdFactor::new(&a, "a").unwrap();
        let inv = f.inverse();
        let id = &a * &inv;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        assert!((f.ln_det() - 11.0_f64.ln()).abs() < 1e-13);
        let x = f.solve_vec(&DVector::from_vec(vec![1.0, 2.0]));
        assert!(((&a * x) - DVector::from_vec(vec![1.0, 2.0])).abs().max() < 1e-14);
    }

    #[test]
    fn clip_repairs_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (b, min) = psd_clip(&a);
        assert!(min < -0.9);
        let eig = SymmetricEigen::new(b);
        assert!(eig.eigenvalues.min() > -1e-12);
    }

    #[test]
    fn factor_reproduces_psd_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let l = psd_factor(&a);
        assert_eq!(l.ncols(), 2);
        assert!((&l * l.transpose() - a).abs().max() < 1e-12);
    }

    #[test]
    fn mean_sd_uses_n_minus_one() {
        let (m, s) = mean_sd(&[0.0, 2.0]);
        assert_eq!(m, 1.0);
        assert!((s - 2.0_f64.sqrt()).abs() < 1e-15);
    }
}
