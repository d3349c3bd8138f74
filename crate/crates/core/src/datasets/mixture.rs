use super::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::rng::Philox;

/// `k` means equally spaced on a circle, the first on the positive x axis.
pub fn circle_means(k: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..k)
        .map(|c| {
            let a = std::f64::consts::TAU * c as f64 / k as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

/// Isotropic 2-D Gaussian blobs, labeled by component, in class order.
///
/// Normalization is one affine map for the whole dataset: the shift is the
/// centroid of the means and the common scale is
/// `max(1, max_c |mean_c - shift|_inf + 4 sigma, max_i |x_i - shift|_inf)`,
/// so blob geometry is preserved and every sample lands in `[-1, 1]`.
pub fn gaussian_mixture(
    means: &[[f64; 2]],
    n_per_class: usize,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if means.is_empty() {
        return Err(Error::config("mixture needs at least one component"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!(
            "mixture sigma must be positive, got {sigma}"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::config("mixture needs n_per_class >= 1"));
    }
    let k = means.len();
    let mut rng = Philox::new(seed);
    let mut raw = Vec::with_capacity(k * n_per_class * 2);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for (c, m) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            raw.push(m[0] + sigma * rng.normal());
            raw.push(m[1] + sigma * rng.normal());
            labels.push(c as u16);
        }
    }

    let shift = [
        means.iter().map(|m| m[0]).sum::<f64>() / k as f64,
        means.iter().map(|m| m[1]).sum::<f64>() / k as f64,
    ];
    let geometric = means
        .iter()
        .map(|m| (m[0] - shift[0]).abs().max((m[1] - shift[1]).abs()))
        .fold(0.0, f64::max)
        + 4.0 * sigma;
    let observed = raw
        .chunks_exact(2)
        .map(|p| (p[0] - shift[0]).abs().max((p[1] - shift[1]).abs()))
        .fold(0.0, f64::max);
    let scale = geometric.max(observed).max(1.0);
    let features = raw
        .chunks_exact(2)
        .flat_map(|p| [(p[0] - shift[0]) / scale, (p[1] - shift[1]) / scale])
        .map(|v: f64| v.clamp(-1.0, 1.0))
        .collect();

    let mut ds = Dataset::new(2, features, Some(labels), k)?;
    ds.normalization = Some(Normalization {
        shift: shift.to_vec(),
        scale: vec![scale; 2],
    });
    Ok(ds)
}
