//! k-NN manifold estimates and the precision/recall/density/coverage family.

use rayon::prelude::*;

use super::Features;
use crate::error::{Error, Result};

/// Euclidean distance, accumulated coordinate by coordinate in index order.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// Reference points with their distance to the k-th nearest other point.
#[derive(Debug, Clone)]
pub struct ManifoldIndex {
    points: Features,
    radii: Vec<f64>,
    k: usize,
}

impl ManifoldIndex {
    pub fn points(&self) -> &Features {
        &self.points
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    fn check_query(&self, query: &Features) -> Result<()> {
        if query.dim() != self.points.dim() {
            return Err(Error::Shape {
                context: "manifold query dimension",
                expected: self.points.dim(),
                actual: query.dim(),
            });
        }
        if query.rows() == 0 {
            return Err(Error::usage("manifold query set is empty"));
        }
        Ok(())
    }

    /// Number of reference balls containing `y`.
    fn covering_count(&self, y: &[f64]) -> usize {
        (0..self.len())
            .filter(|&i| euclidean(y, self.points.row(i)) <= self.radii[i])
            .count()
    }
}

pub fn build_manifold(reference: &Features, k: usize) -> Result<ManifoldIndex> {
    let m = reference.rows();
    if k == 0 || k >= m {
        return Err(Error::config(format!(
            "manifold k must satisfy 1 <= k < {m}, got {k}"
        )));
    }
    let radii = (0..m)
        .into_par_iter()
        .map(|i| {
            let xi = reference.row(i);
            let mut d: Vec<f64> = (0..m)
                .filter(|&j| j != i)
                .map(|j| euclidean(xi, reference.row(j)))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect();
    Ok(ManifoldIndex {
        points: reference.clone(),
        radii,
        k,
    })
}

/// Fraction of `generated` points inside at least one real ball.
pub fn precision(real: &ManifoldIndex, generated: &Features) -> Result<f64> {
    real.check_query(generated)?;
    let inside = (0..generated.rows())
        .into_par_iter()
        .filter(|&j| real.covering_count(generated.row(j)) > 0)
        .count();
    Ok(inside as f64 / generated.rows() as f64)
}

/// Fraction of `real` points inside at least one generated ball.
pub fn recall(generated: &ManifoldIndex, real: &Features) -> Result<f64> {
    precision(generated, real)
}

pub fn density(real: &ManifoldIndex, generated: &Features) -> Result<f64> {
    real.check_query(generated)?;
    let total: usize = (0..generated.rows())
        .into_par_iter()
        .map(|j| real.covering_count(generated.row(j)))
        .sum();
    Ok(total as f64 / (real.k as f64 * generated.rows() as f64))
}

/// Fraction of real balls holding at least one generated point.
pub fn coverage(real: &ManifoldIndex, generated: &Features) -> Result<f64> {
    real.check_query(generated)?;
    let covered = (0..real.len())
        .into_par_iter()
        .filter(|&i| {
            let xi = real.points.row(i);
            (0..generated.rows()).any(|j| euclidean(generated.row(j), xi) <= real.radii[i])
        })
        .count();
    Ok(covered as f64 / real.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldScores {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
}

const SCORE_CHUNK: usize = 64;

/// All four scores from a single pass over the real × generated distances.
pub fn manifold_scores(real: &ManifoldIndex, generated: &ManifoldIndex) -> Result<ManifoldScores> {
    real.check_query(generated.points())?;
    let n = real.len();
    let m = generated.len();
    struct Partial {
        inside: usize,
        balls: usize,
        covered: Vec<bool>,
        recalled: Vec<bool>,
    }
    let partials: Vec<Partial> = (0..m.div_ceil(SCORE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut p = Partial {
                inside: 0,
                balls: 0,
                covered: vec![false; n],
                recalled: vec![false; n],
            };
            for j in c * SCORE_CHUNK..((c + 1) * SCORE_CHUNK).min(m) {
                let yj = generated.points.row(j);
                let rj = generated.radii[j];
                let mut count = 0;
                for i in 0..n {
                    let d = euclidean(yj, real.points.row(i));
                    if d <= real.radii[i] {
                        count += 1;
                        p.covered[i] = true;
                    }
                    if d <= rj {
                        p.recalled[i] = true;
                    }
                }
                p.balls += count;
                p.inside += usize::from(count > 0);
            }
            p
        })
        .collect();
    let mut inside = 0;
    let mut balls = 0;
    let mut covered = vec![false; n];
    let mut recalled = vec![false; n];
    for p in partials {
        inside += p.inside;
        balls += p.balls;
        for i in 0..n {
            covered[i] |= p.covered[i];
            recalled[i] |= p.recalled[i];
        }
    }
    let frac = |flags: &[bool]| flags.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(ManifoldScores {
        precision: inside as f64 / m as f64,
        recall: frac(&recalled),
        density: balls as f64 / (real.k as f64 * m as f64),
        coverage: frac(&covered),
    })
}
