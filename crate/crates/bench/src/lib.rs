//! Input fixtures shared by the benchmarks.

use collapse_lab::datasets::{circle_means, gaussian_mixture};
use collapse_lab::metrics::Features;
use collapse_lab::nn::{Network, NetworkSpec};
use collapse_lab::{Dataset, Philox};

/// The default 8-mode mixture with `n_per_class` points per mode.
pub fn mixture(n_per_class: usize) -> Dataset {
    gaussian_mixture(&circle_means(8, 4.0), n_per_class, 0.3, 1).expect("valid mixture")
}

/// `rows x dim` standard normal features.
pub fn gaussian_features(rows: usize, dim: usize, seed: u64) -> Features {
    let mut rng = Philox::new(seed);
    Features::new(dim, (0..rows * dim).map(|_| rng.normal()).collect()).expect("valid shape")
}

/// A class-conditional denoiser shaped like the experiment default.
pub fn denoiser(dim: usize, hidden: Vec<usize>, steps: usize, classes: usize) -> Network {
    let spec = NetworkSpec {
        time_embed_dim: 32,
        max_timestep: steps,
        num_classes: classes,
        class_embed_dim: if classes > 0 { 16 } else { 0 },
        ..NetworkSpec::plain(dim, hidden, dim)
    };
    Network::new(spec, 7).expect("valid spec")
}
