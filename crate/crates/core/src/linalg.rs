//! Dense symmetric linear algebra: Cholesky factorization, log-determinants,
//! SPD inverses, and a cyclic Jacobi eigensolver for matrix functions.
//!
//! Matrices here are small (at most a few hundred rows), so the routines
//! favour determinism and accuracy over blocking.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
///
/// Only the lower triangle of `a` is read.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = square_dim(a)?;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::degenerate(format!(
                "pivot {j} of {n} is {d:e}; matrix is not positive definite"
            )));
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// `log det A` from a Cholesky factor.
pub fn logdet_from_cholesky(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn logdet_spd(a: ArrayView2<f64>) -> Result<f64> {
    Ok(logdet_from_cholesky(&cholesky(a)?))
}

/// `A⁻¹` from a Cholesky factor, symmetrized exactly.
pub fn inverse_from_cholesky(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    // L⁻¹ by forward substitution, column by column.
    let mut linv = Array2::<f64>::zeros((n, n));
    for c in 0..n {
        linv[[c, c]] = 1.0 / l[[c, c]];
        for i in (c + 1)..n {
            let mut s = 0.0;
            for k in c..i {
                s -= l[[i, k]] * linv[[k, c]];
            }
            linv[[i, c]] = s / l[[i, i]];
        }
    }
    // A⁻¹ = L⁻ᵀ L⁻¹
    let mut inv = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[[k, i]] * linv[[k, j]];
            }
            inv[[i, j]] = s;
            inv[[j, i]] = s;
        }
    }
    inv
}

pub fn inverse_spd(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(inverse_from_cholesky(&cholesky(a)?))
}

/// Eigendecomposition `A = V diag(w) Vᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    /// Eigenvectors stored as columns.
    pub vectors: Array2<f64>,
}

impl SymEigen {
    /// `V diag(f(w)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let fw = self.values.mapv(f);
        let scaled = &self.vectors * &fw.view().insert_axis(ndarray::Axis(0));
        let mut out = scaled.dot(&self.vectors.t());
        symmetrize_in_place(&mut out);
        out
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn sym_eigen(a: ArrayView2<f64>) -> Result<SymEigen> {
    let n = square_dim(a)?;
    let mut m = a.to_owned();
    symmetrize_in_place(&mut m);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigendecomposition input".into()));
    }
    let mut v = Array2::<f64>::eye(n);
    let scale = m
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(SymEigen {
        values: m.diag().to_owned(),
        vectors: v,
    })
}

/// Matrix logarithm of an SPD matrix via its eigendecomposition.
pub fn logm_spd(a: ArrayView2<f64>) -> Result<(Array2<f64>, SymEigen)> {
    let eig = sym_eigen(a)?;
    if let Some(w) = eig.values.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::degenerate(format!("non-positive eigenvalue {w:e}")));
    }
    Ok((eig.map(f64::ln), eig))
}

pub fn symmetrize_in_place(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

pub(crate) fn square_dim(a: ArrayView2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::invalid(format!(
            "expected a square matrix, got {r}x{c}"
        )));
    }
    if r == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    Ok(r)
}
