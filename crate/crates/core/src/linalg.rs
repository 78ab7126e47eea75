//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm at which sweeps stop, relative to `‖G‖_F`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Allowed asymmetry, relative to `max(1, max|G_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector of `values[i]`, when requested.
    pub vectors: Option<Array2<f64>>,
    pub sweeps: usize,
}

pub fn check_symmetric(m: ArrayView2<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale || worst.is_nan() {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// Eigenvalues (descending) of a symmetric matrix.
pub fn spectrum(gram: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(jacobi_eigen(gram, false)?.values)
}

pub fn jacobi_eigen(m: ArrayView2<f64>, want_vectors: bool) -> Result<SymmetricEigen> {
    check_symmetric(m)?;
    let n = m.nrows();
    // symmetrize so rounding-level asymmetry doesn't leak into the rotations
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (m[[i, j]] + m[[j, i]]));
    let mut v = want_vectors.then(|| Array2::<f64>::eye(n));

    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = JACOBI_TOL * norm;
    let mut sweeps = 0;

    while sweeps < JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, p, q, c, s);
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[[k, p]];
                        let vkq = v[[k, q]];
                        v[[k, p]] = c * vkp - s * vkq;
                        v[[k, q]] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = v.map(|v| Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]));
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

// A <- Jᵀ A J for the Givens rotation J in the (p, q) plane.
fn rotate(a: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        a[[k, p]] = c * akp - s * akq;
        a[[k, q]] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[[p, k]];
        let aqk = a[[q, k]];
        a[[p, k]] = c * apk - s * aqk;
        a[[q, k]] = s * apk + c * aqk;
    }
}

impl SymmetricEigen {
    /// `Q f(Λ) Qᵀ` for a scalar function of the eigenvalues.
    pub fn apply_function(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let q = self
            .vectors
            .as_ref()
            .expect("eigenvectors were not requested");
        let scaled = Array1::from_iter(self.values.iter().map(|&l| f(l)));
        let qs = q * &scaled.view().insert_axis(ndarray::Axis(0));
        qs.dot(&q.t())
    }
}

pub fn trace(m: ArrayView2<f64>) -> f64 {
    m.diag().sum()
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}
