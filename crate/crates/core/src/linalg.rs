//! Small dense linear-algebra helpers shared by the problem definitions and
//! the oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigendecomposition `A = V diag(values) Vᵀ` of a symmetric matrix.
///
/// Eigenvalues are sorted ascending and the columns of `vectors` are the
/// matching orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.vectors * DMatrix::from_diagonal(&self.values);
        scaled * self.vectors.transpose()
    }

    /// Coordinates of `x` in the eigenbasis (`Vᵀx`).
    pub fn to_eigenbasis(&self, x: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(x)
    }

    pub fn from_eigenbasis(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.vectors * z
    }

    fn sorted(values: DVector<f64>, vectors: DMatrix<f64>) -> Self {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| values[i]));
        let mut sorted = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            sorted.set_column(dst, &vectors.column(src));
        }
        SymEigen {
            values,
            vectors: sorted,
        }
    }
}

/// Relative symmetry test: `max|A - Aᵀ| <= tol * max(1, max|A|)`.
pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Cyclic Jacobi eigenvalue algorithm for symmetric matrices.
///
/// Sweeps every off-diagonal pair with a plane rotation until the
/// off-diagonal Frobenius mass falls below `1e-15` of the total. Quadratic
/// convergence means a handful of sweeps suffice for the small Gram matrices
/// this crate works with.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<SymEigen> {
    const MAX_SWEEPS: usize = 100;
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "jacobi_eigen",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let total = m.norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * total {
            return Ok(SymEigen::sorted(m.diagonal(), v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J with J the (p, q) rotation
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::NoConvergence(MAX_SWEEPS))
}

/// Symmetric eigendecomposition backed by nalgebra's tridiagonal QR.
/// Used where matrices are too large for Jacobi sweeps to be cheap.
pub fn sym_eigen(a: &DMatrix<f64>) -> SymEigen {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    SymEigen::sorted(eig.eigenvalues, eig.eigenvectors)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn extreme_eigenvalues(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Planar rotation by `theta`.
pub fn rotation2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Haar-ish random orthogonal matrix from the QR factorization of a Gaussian
/// matrix, with the sign of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn inf_norm(x: &DVector<f64>) -> f64 {
    x.amax()
}

pub fn l1_norm(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        (&g + g.transpose()) * 0.5
    }

    #[test]
    fn jacobi_diagonal_is_identity_transform() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let eig = jacobi_eigen(&a).unwrap();
        assert_eq!(eig.values.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let eig = jacobi_eigen(&a).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_matches_nalgebra_and_reconstructs() {
        for seed in 0..5 {
            let a = random_symmetric(12, seed);
            let jac = jacobi_eigen(&a).unwrap();
            let reference = sym_eigen(&a);
            for (x, y) in jac.values.iter().zip(reference.values.iter()) {
                assert!((x - y).abs() < 1e-11, "{x} vs {y}");
            }
            let err = (jac.reconstruct() - &a).amax();
            assert!(err < 1e-12, "reconstruction error {err}");
            let ortho = (jac.vectors.tr_mul(&jac.vectors) - DMatrix::identity(12, 12)).amax();
            assert!(ortho < 1e-12);
        }
    }

    #[test]
    fn jacobi_rejects_non_square() {
        assert!(jacobi_eigen(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_orthogonal(6, &mut rng);
        assert!((q.tr_mul(&q) - DMatrix::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn symmetry_tolerance_is_relative() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1e6, 1.0, 1.0, 1e6]);
        a[(0, 1)] += 1e-7;
        assert!(is_symmetric(&a, 1e-12));
        a[(0, 1)] += 1.0;
        assert!(!is_symmetric(&a, 1e-12));
    }
}
