//! Moment summaries and the Fréchet distance between Gaussian fits.

use serde::{Deserialize, Serialize};

use super::linalg::{jacobi_eigen, matrix_sqrt_psd, SquareMatrix};
use super::Features;
use crate::error::{Error, Result};

/// Covariances whose smallest eigenvalue falls below this are regularized.
pub const SINGULAR_EIGENVALUE: f64 = 1e-10;
/// Ridge added to both covariances when either is near-singular.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Sample mean and covariance (denominator `M - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    pub covariance: SquareMatrix,
    pub count: usize,
}

impl MomentSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Builds a summary directly from known moments.
    pub fn from_parts(mean: Vec<f64>, covariance: SquareMatrix, count: usize) -> Result<Self> {
        if covariance.n != mean.len() {
            return Err(Error::Shape {
                context: "covariance",
                expected: mean.len(),
                actual: covariance.n,
            });
        }
        if count < 2 {
            return Err(Error::usage("moment summary needs at least two points"));
        }
        if covariance.max_asymmetry() > 1e-9 {
            return Err(Error::usage("covariance is not symmetric"));
        }
        Ok(MomentSummary {
            mean,
            covariance,
            count,
        })
    }
}

pub fn moments(features: &Features) -> Result<MomentSummary> {
    let (m, f) = (features.rows(), features.dim());
    if m < 2 {
        return Err(Error::usage(format!(
            "moments need at least two points, got {m}"
        )));
    }
    let mut mean = vec![0.0; f];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(features.row(i)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut cov = SquareMatrix::zeros(f);
    let mut dev = vec![0.0; f];
    for i in 0..m {
        for ((d, v), mu) in dev.iter_mut().zip(features.row(i)).zip(&mean) {
            *d = v - mu;
        }
        for a in 0..f {
            let da = dev[a];
            if da == 0.0 {
                continue;
            }
            let row = &mut cov.data[a * f..(a + 1) * f];
            for b in a..f {
                row[b] += da * dev[b];
            }
        }
    }
    let denom = (m - 1) as f64;
    for a in 0..f {
        for b in a..f {
            let v = cov.get(a, b) / denom;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(MomentSummary {
        mean,
        covariance: cov,
        count: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrechetResult {
    pub distance: f64,
    /// Whether the covariance ridge was applied.
    pub regularized: bool,
}

fn min_eigenvalue(m: &SquareMatrix) -> f64 {
    jacobi_eigen(m)
        .values
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

pub fn frechet_from_moments(x: &MomentSummary, y: &MomentSummary) -> Result<FrechetResult> {
    if x.dim() != y.dim() {
        return Err(Error::Shape {
            context: "frechet feature dimension",
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    let mean_term: f64 = x
        .mean
        .iter()
        .zip(&y.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mut sx = x.covariance.clone();
    let mut sy = y.covariance.clone();
    let regularized = x.dim() > 1
        && (min_eigenvalue(&sx) < SINGULAR_EIGENVALUE || min_eigenvalue(&sy) < SINGULAR_EIGENVALUE);
    if regularized {
        sx.add_diagonal(COVARIANCE_RIDGE);
        sy.add_diagonal(COVARIANCE_RIDGE);
    }
    let root_x = matrix_sqrt_psd(&sx)?;
    let mut inner = root_x.matmul(&sy).matmul(&root_x);
    inner.symmetrize();
    let cross: f64 = jacobi_eigen(&inner)
        .values
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let traces = sx.trace() + sy.trace();
    let d = mean_term + traces - 2.0 * cross;
    let distance = if d >= 0.0 {
        d
    } else if d >= -1e-6 * traces.max(1.0) {
        0.0
    } else {
        return Err(Error::usage(format!(
            "Fréchet distance evaluated to {d:.3e}; covariance inputs are not PSD"
        )));
    };
    Ok(FrechetResult {
        distance,
        regularized,
    })
}

pub fn frechet_distance(x: &Features, y: &Features) -> Result<FrechetResult> {
    if x.dim() != y.dim() {
        return Err(Error::Shape {
            context: "frechet feature dimension",
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    frechet_from_moments(&moments(x)?, &moments(y)?)
}
