//! Data substrates: Gaussian mixtures, procedural glyphs, IDX digits, and the
//! GLD1 file format generated datasets are persisted in.

mod gld1;
mod glyphs;
mod idx;
mod mixture;

pub use gld1::{decode_gld1, encode_gld1, read_gld1, write_gld1, GLD1_MAGIC, GLD1_VERSION};
pub use glyphs::{
    glyph_dataset, glyph_stencils, GlyphOptions, GLYPH_CLASSES, GLYPH_DIM, GLYPH_SIDE,
};
pub use idx::{load_idx, parse_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use mixture::{circle_means, gaussian_mixture};

use crate::error::{Error, Result};
use crate::rng::Philox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Generation(u32),
}

/// Affine map from raw feature units to `[-1, 1]`: `x = (raw - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (s, k))| x * k + s)
            .collect()
    }
}

/// `N` samples of dimension `D` in `[-1, 1]`, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Option<Vec<u16>>,
    num_classes: usize,
    pub provenance: Provenance,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    /// Builds and validates a dataset. `num_classes` is ignored when unlabeled.
    pub fn new(
        dim: usize,
        features: Vec<f64>,
        labels: Option<Vec<u16>>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            dim,
            features,
            num_classes: if labels.is_some() { num_classes } else { 0 },
            labels,
            provenance: Provenance::Real,
            normalization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks every type invariant: N >= 1, finite features in `[-1, 1]`,
    /// labels in `[0, K)`.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dataset dimension must be >= 1"));
        }
        if self.features.is_empty() || !self.features.len().is_multiple_of(self.dim) {
            return Err(Error::config(format!(
                "dataset needs a positive multiple of {} feature values, got {}",
                self.dim,
                self.features.len()
            )));
        }
        if let Some(i) = self
            .features
            .iter()
            .position(|v| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::config(format!(
                "feature {} of sample {} is outside [-1, 1]: {}",
                i % self.dim,
                i / self.dim,
                self.features[i]
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(Error::Shape {
                    context: "dataset labels",
                    expected: self.len(),
                    actual: labels.len(),
                });
            }
            if let Some(i) = labels.iter().position(|&l| l as usize >= self.num_classes) {
                return Err(Error::config(format!(
                    "label {} of sample {i} outside [0, {})",
                    labels[i], self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i] as usize)
    }

    /// Widens the class count (labels read from a file only reveal max + 1).
    pub fn with_num_classes(mut self, k: usize) -> Result<Self> {
        if self.labels.is_some() {
            self.num_classes = k;
            self.validate()?;
        }
        Ok(self)
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self.num_classes = 0;
        self
    }

    /// Per-class sample counts (empty when unlabeled).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        if let Some(labels) = &self.labels {
            for &l in labels {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            dim: self.dim,
            features,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            provenance: self.provenance,
            normalization: self.normalization.clone(),
        }
    }

    /// Concatenates two datasets of equal dimension. Labels survive only when
    /// both sides carry them.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim != other.dim {
            return Err(Error::Shape {
                context: "dataset concat",
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let (labels, k) = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => {
                let mut l = a.clone();
                l.extend_from_slice(b);
                (Some(l), self.num_classes.max(other.num_classes))
            }
            _ => (None, 0),
        };
        Ok(Dataset {
            dim: self.dim,
            features,
            labels,
            num_classes: k,
            provenance: self.provenance,
            normalization: self.normalization.clone(),
        })
    }

    /// Rounds every feature through `f32`, which is what GLD1 stores.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.features {
            *v = *v as f32 as f64;
        }
    }
}

/// Deterministic shuffled split into `(train, held_out)`.
///
/// The train side gets `round(fraction * N)` samples. For labeled data the
/// per-class quotas are apportioned by largest remainder, so each class's
/// train count is within one sample of `fraction * n_class`.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "split fraction {fraction} not in (0, 1)"
        )));
    }
    let n = dataset.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!(
            "split of {n} samples at {fraction} leaves one side empty"
        )));
    }
    let mut rng = Philox::new(seed);
    let perm = rng.permutation(n);

    let (mut train_idx, mut held_idx) = (Vec::with_capacity(n_train), Vec::new());
    match dataset.labels() {
        None => {
            train_idx.extend_from_slice(&perm[..n_train]);
            held_idx.extend_from_slice(&perm[n_train..]);
        }
        Some(labels) => {
            let counts = dataset.class_counts();
            let ideal: Vec<f64> = counts.iter().map(|&c| c as f64 * fraction).collect();
            let mut quota: Vec<usize> = ideal.iter().map(|q| q.floor() as usize).collect();
            let mut leftover = n_train - quota.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..counts.len()).collect();
            // largest fractional part first, ties by class index
            order.sort_by(|&a, &b| {
                let fa = ideal[a] - ideal[a].floor();
                let fb = ideal[b] - ideal[b].floor();
                fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
            });
            for c in order {
                if leftover == 0 {
                    break;
                }
                if quota[c] < counts[c] {
                    quota[c] += 1;
                    leftover -= 1;
                }
            }
            let mut taken = vec![0usize; counts.len()];
            for &i in &perm {
                let c = labels[i] as usize;
                if taken[c] < quota[c] {
                    taken[c] += 1;
                    train_idx.push(i);
                } else {
                    held_idx.push(i);
                }
            }
        }
    }
    Ok((dataset.subset(&train_idx), dataset.subset(&held_idx)))
}
