//! Distribution and fidelity metrics: Fréchet distance, k-NN manifold
//! precision/recall/density/coverage, and classifier accuracy.

mod fidelity;
mod frechet;
mod linalg;
mod manifold;
mod report;

pub use fidelity::{classifier_fidelity, Fidelity};
pub use frechet::{
    frechet_distance, frechet_from_moments, moments, FrechetResult, MomentSummary,
    COVARIANCE_RIDGE, SINGULAR_EIGENVALUE,
};
pub use linalg::{jacobi_eigen, matrix_sqrt_psd, SquareMatrix, SymmetricEigen};
pub use manifold::{
    build_manifold, coverage, density, euclidean, manifold_scores, precision, recall,
    ManifoldIndex, ManifoldScores,
};
pub use report::{
    format_sig6, metrics_csv, per_class_csv, Evaluator, FeatureSpace, MetricReport, METRICS_HEADER,
    PER_CLASS_HEADER,
};

use crate::datasets::Dataset;
use crate::error::{Error, Result};

/// Row-major `rows x dim` point set in some feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape {
                context: "feature matrix",
                expected: dim.max(1) * (data.len() / dim.max(1)),
                actual: data.len(),
            });
        }
        Ok(Features { dim, data })
    }

    /// Raw coordinates of a dataset.
    pub fn identity(data: &Dataset) -> Self {
        Features {
            dim: data.dim(),
            data: data.features().to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}
