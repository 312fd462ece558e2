//! Small dense symmetric linear algebra: Cholesky factorization and a cyclic
//! Jacobi eigensolver. Matrices here are at most a few hundred rows (one
//! temporal covariance per channel, one feature covariance for FID).

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, Axis};

use crate::error::{Error, Result};
use crate::num::Real;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T: Real> {
    lower: Array2<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!("cholesky of {}x{} matrix", n, a.ncols())));
        }
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = diag.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    /// Solves `A x = b` in place by forward then backward substitution.
    pub fn solve_in_place(&self, mut b: ArrayViewMut1<'_, T>) {
        let l = &self.lower;
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[[i, k]] * b[k];
            }
            b[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * b[k];
            }
            b[i] = s / l[[i, i]];
        }
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: ArrayView2<'_, T>) -> Array2<T> {
        let mut x = b.to_owned();
        for col in x.axis_iter_mut(Axis(1)) {
            self.solve_in_place(col);
        }
        x
    }
}

/// Eigen-decomposition of a symmetric matrix: `A = V diag(values) Vᵀ`,
/// eigenvectors stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T: Real> {
    pub values: Array1<T>,
    pub vectors: Array2<T>,
}

impl<T: Real> SymmetricEigen<T> {
    /// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
    /// The input is symmetrized first so slightly asymmetric products are
    /// accepted.
    pub fn new(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!("eigen of {}x{} matrix", n, a.ncols())));
        }
        let half = T::lit(0.5);
        let mut m = Array2::<T>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = half * (a[[i, j]] + a[[j, i]]);
            }
        }
        let mut v = Array2::<T>::eye(n);
        let scale = m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        let tol = T::epsilon() * T::epsilon() * scale * scale;

        for _sweep in 0..100 {
            let mut off = T::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m[[p, q]] * m[[p, q]];
                }
            }
            if off <= tol || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[[p, q]];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = m[[p, p]];
                    let aqq = m[[q, q]];
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
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
        let values = Array1::from_iter((0..n).map(|i| m[[i, i]]));
        Ok(Self { values, vectors: v })
    }

    /// `V diag(f(values)) Vᵀ`.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Array2<T> {
        let scaled = Array1::from_iter(self.values.iter().map(|&x| f(x)));
        let mut vs = self.vectors.clone();
        for (mut col, &s) in vs.axis_iter_mut(Axis(1)).zip(scaled.iter()) {
            col.mapv_inplace(|x| x * s);
        }
        vs.dot(&self.vectors.t())
    }
}

/// Squared-exponential temporal kernel matrix `σ² exp(−(i−j)²/(2ℓ²)) + ε I`.
pub fn squared_exponential<T: Real>(n: usize, variance: T, length: T, jitter: T) -> Array2<T> {
    let two_l2 = T::lit(2.0) * length * length;
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d = T::lit(i as f64 - j as f64);
        let k = variance * (-(d * d) / two_l2).exp();
        if i == j {
            k + jitter
        } else {
            k
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs_matrix() {
        let a = array![[4.0f64, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let c = Cholesky::factor(a.view()).unwrap();
        let rebuilt = c.lower().dot(&c.lower().t());
        for (x, y) in rebuilt.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let b = array![1.0f64, -2.0, 0.5];
        let mut x = b.clone();
        c.solve_in_place(x.view_mut());
        let back = a.dot(&x);
        for (p, q) in back.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(Cholesky::factor(a.view()), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let a = array![[2.0f64, 1.0], [1.0, 2.0]];
        let e = SymmetricEigen::new(a.view()).unwrap();
        let mut vals = e.values.to_vec();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        let rebuilt = e.map_values(|x| x);
        for (x, y) in rebuilt.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_is_positive_definite() {
        let k = squared_exponential(60, 0.04f64, 6.0, 1e-6);
        assert!(Cholesky::factor(k.view()).is_ok());
        let k32 = squared_exponential(16, 0.04f32, 6.0, 1e-4);
        assert!(Cholesky::factor(k32.view()).is_ok());
    }
}
