//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape {
                context: "square matrix",
                expected: n * n,
                actual: data.len(),
            });
        }
        Ok(SquareMatrix { n, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }
}

/// Eigenvalues and column eigenvectors (`vectors.get(row, k)` is component
/// `row` of eigenvector `k`).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix,
}

fn off_diagonal_norm(a: &SquareMatrix) -> f64 {
    let mut s = 0.0;
    for i in 0..a.n {
        for j in 0..a.n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi: sweep all `(p, q)` pairs in row order, rotating away each
/// off-diagonal entry, until the off-diagonal mass is negligible.
pub fn jacobi_eigen(m: &SquareMatrix) -> SymmetricEigen {
    let n = m.n;
    let mut a = m.clone();
    a.symmetrize();
    let mut v = SquareMatrix::identity(n);
    let scale = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off == 0.0 || off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    SymmetricEigen {
        values: (0..n).map(|i| a.get(i, i)).collect(),
        vectors: v,
    }
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues down to `-1e-9 * max(1, |M|_max)` are treated as zero.
pub fn matrix_sqrt_psd(m: &SquareMatrix) -> Result<SquareMatrix> {
    let tol = 1e-6 * m.max_abs().max(1.0);
    if m.max_asymmetry() > tol {
        return Err(Error::usage(format!(
            "matrix is not symmetric (asymmetry {:.3e})",
            m.max_asymmetry()
        )));
    }
    let eig = jacobi_eigen(m);
    let floor = -1e-9 * m.max_abs().max(1.0);
    if let Some(bad) = eig.values.iter().find(|&&l| l < floor) {
        return Err(Error::usage(format!(
            "matrix is not positive semidefinite (eigenvalue {bad:.3e})"
        )));
    }
    let n = m.n;
    let roots: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut s = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (k, r) in roots.iter().enumerate() {
                acc += eig.vectors.get(i, k) * r * eig.vectors.get(j, k);
            }
            s.set(i, j, acc);
            s.set(j, i, acc);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Philox;

    fn random_psd(n: usize, seed: u64) -> SquareMatrix {
        let mut rng = Philox::new(seed);
        let a = SquareMatrix::from_rows(n, (0..n * n).map(|_| rng.normal()).collect()).unwrap();
        let mut at = a.clone();
        for i in 0..n {
            for j in 0..n {
                at.set(i, j, a.get(j, i));
            }
        }
        a.matmul(&at)
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let i = SquareMatrix::identity(5);
        assert_eq!(matrix_sqrt_psd(&i).unwrap(), i);
        let s = matrix_sqrt_psd(&SquareMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(s, SquareMatrix::from_diagonal(&[2.0, 3.0]));
    }

    #[test]
    fn sqrt_reconstructs_random_psd() {
        for seed in 0..5 {
            let m = random_psd(8, seed);
            let s = matrix_sqrt_psd(&m).unwrap();
            assert_eq!(s.max_asymmetry(), 0.0);
            let back = s.matmul(&s);
            let err = back
                .data
                .iter()
                .zip(&m.data)
                .fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
            assert!(err <= 1e-6 * (1.0 + m.max_abs()), "{err}");
            // PSD root: all eigenvalues non-negative
            assert!(jacobi_eigen(&s).values.iter().all(|&l| l > -1e-9));
        }
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let m = random_psd(6, 42);
        let e = jacobi_eigen(&m);
        for i in 0..6 {
            for j in 0..6 {
                let r: f64 = (0..6)
                    .map(|k| e.vectors.get(i, k) * e.values[k] * e.vectors.get(j, k))
                    .sum();
                assert!((r - m.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let m = SquareMatrix::from_rows(2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(matrix_sqrt_psd(&m), Err(Error::Usage(_))));
        let m = SquareMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(matrix_sqrt_psd(&m), Err(Error::Usage(_))));
        // tiny negative eigenvalues are clipped
        let m = SquareMatrix::from_diagonal(&[1.0, -1e-12]);
        assert_eq!(
            matrix_sqrt_psd(&m).unwrap(),
            SquareMatrix::from_diagonal(&[1.0, 0.0])
        );
    }
}
