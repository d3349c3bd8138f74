//! Softmax classifier used both as the fidelity oracle and as the feature map
//! for distribution metrics on image-like data.

use rayon::prelude::*;

use crate::datasets::{split, Dataset};
use crate::error::{Error, Result};
use crate::metrics::Features;
use crate::nn::{
    adam_step, read_snapshot, write_snapshot, AdamConfig, AdamState, Network, NetworkSpec,
};
use crate::rng::{derive_seed, Philox};

/// Role tag for classifier snapshots.
pub const CLASSIFIER_ROLE: [u8; 4] = *b"CLSF";

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64],
            epochs: 40,
            batch_size: 64,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    network: Network,
    heldout_accuracy: f64,
    train_accuracy: f64,
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(logits)[label]`, via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    (lse - logits[label]).max(0.0)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Classifier {
    /// Wraps an already trained plain network ending in `K >= 2` logits.
    pub fn from_network(
        network: Network,
        heldout_accuracy: f64,
        train_accuracy: f64,
    ) -> Result<Self> {
        let spec = network.spec();
        if spec.time_embed_dim != 0 || spec.class_embed_dim != 0 {
            return Err(Error::config("classifier network must not be conditioned"));
        }
        if spec.hidden.is_empty() {
            return Err(Error::config("classifier needs at least one hidden layer"));
        }
        if spec.output_dim < 2 {
            return Err(Error::config("classifier needs at least two classes"));
        }
        Ok(Classifier {
            network,
            heldout_accuracy,
            train_accuracy,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_dim(&self) -> usize {
        self.network.spec().input_dim
    }

    #[allow(clippy::misnamed_getters)]
    pub fn num_classes(&self) -> usize {
        self.network.spec().output_dim
    }

    /// Width of the penultimate layer.
    pub fn feature_dim(&self) -> usize {
        self.network.spec().penultimate_width()
    }

    pub fn heldout_accuracy(&self) -> f64 {
        self.heldout_accuracy
    }

    /// Accuracy over the full dataset passed to training.
    pub fn train_accuracy(&self) -> f64 {
        self.train_accuracy
    }

    fn check_dim(&self, len: usize, rows: usize) -> Result<()> {
        if len != rows * self.input_dim() {
            return Err(Error::Shape {
                context: "classifier input",
                expected: rows * self.input_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    fn run_chunks(&self, xs: &[f64], layer: usize, width: usize) -> Result<Vec<f64>> {
        let d = self.input_dim();
        let rows = xs.len().checked_div(d).unwrap_or(0);
        self.check_dim(xs.len(), rows)?;
        let chunks = xs
            .par_chunks(EVAL_CHUNK * d)
            .map(|chunk| {
                let n = chunk.len() / d;
                let cache = self
                    .network
                    .forward_batch(chunk, &vec![0; n], &vec![None; n])?;
                Ok(cache.activations(layer).to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let out: Vec<f64> = chunks.concat();
        debug_assert_eq!(out.len(), rows * width);
        Ok(out)
    }

    /// Row-major `rows x K` logits for row-major inputs.
    pub fn logits_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let last = self.network.spec().num_layers() - 1;
        self.run_chunks(xs, last, self.num_classes())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len(), 1)?;
        Ok(softmax(&self.logits_batch(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x.len(), 1)?;
        Ok(argmax(&self.logits_batch(x)?))
    }

    /// Penultimate activations for one input.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len(), 1)?;
        self.features_batch(x).map(|f| f.as_slice().to_vec())
    }

    pub fn features_batch(&self, xs: &[f64]) -> Result<Features> {
        let last = self.network.spec().num_layers() - 1;
        let f = self.feature_dim();
        Features::new(f, self.run_chunks(xs, last - 1, f)?)
    }

    /// Fraction of argmax-correct predictions on a labeled dataset.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::usage("accuracy needs a labeled dataset"))?;
        if data.is_empty() {
            return Err(Error::usage("accuracy of an empty dataset"));
        }
        let k = self.num_classes();
        let logits = self.logits_batch(data.features())?;
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| argmax(&logits[i * k..(i + 1) * k]) == l as usize)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Snapshot bytes; role metadata is `f64 heldout_accuracy, f64 train_accuracy`.
    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut extra = Vec::with_capacity(16);
        extra.extend_from_slice(&self.heldout_accuracy.to_le_bytes());
        extra.extend_from_slice(&self.train_accuracy.to_le_bytes());
        write_snapshot(CLASSIFIER_ROLE, &self.network, &extra)
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self> {
        let snap = read_snapshot(bytes)?;
        if snap.role != CLASSIFIER_ROLE {
            return Err(Error::format(
                8,
                format!(
                    "snapshot role {:?} is not a classifier",
                    String::from_utf8_lossy(&snap.role)
                ),
            ));
        }
        if snap.extra.len() != 16 {
            return Err(Error::format(
                8,
                "classifier snapshot metadata must be 16 bytes",
            ));
        }
        let heldout = f64::from_le_bytes(snap.extra[0..8].try_into().unwrap());
        let train = f64::from_le_bytes(snap.extra[8..16].try_into().unwrap());
        Classifier::from_network(snap.network, heldout, train)
            .map_err(|e| Error::format(8, e.to_string()))
    }
}

/// Trains a classifier by minibatch Adam on the mean cross-entropy.
///
/// A stratified 90/10 split of `train` provides the held-out accuracy; the
/// recorded training accuracy is measured on all of `train`.
pub fn train_classifier(
    train: &Dataset,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<Classifier> {
    let labels = train
        .labels()
        .ok_or_else(|| Error::usage("classifier training needs a labeled dataset"))?;
    let k = train.num_classes();
    if k < 2 {
        return Err(Error::usage(
            "classifier training needs at least two classes",
        ));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::config(
            "classifier epochs and batch_size must be >= 1",
        ));
    }
    if config.hidden.is_empty() || config.hidden.contains(&0) {
        return Err(Error::config(
            "classifier hidden widths must be non-empty and positive",
        ));
    }
    debug_assert!(labels.iter().all(|&l| (l as usize) < k));
    let (fit, held) = split(train, 0.9, derive_seed(seed, &[0]))?;
    let spec = NetworkSpec::plain(train.dim(), config.hidden.clone(), k);
    let mut net = Network::new(spec, derive_seed(seed, &[1]))?;
    let mut state = AdamState::new(&net, config.adam);
    let mut rng = Philox::new(derive_seed(seed, &[2]));
    let fit_labels = fit.labels().expect("split keeps labels");
    for epoch in 0..config.epochs {
        let perm = rng.permutation(fit.len());
        for idx in perm.chunks(config.batch_size) {
            let batch = fit.subset(idx);
            let n = idx.len();
            let cache = net.forward_batch(batch.features(), &vec![0; n], &vec![None; n])?;
            let logits = cache.output();
            let mut loss = 0.0;
            let mut grad = vec![0.0; n * k];
            for (b, &i) in idx.iter().enumerate() {
                let row = &logits[b * k..(b + 1) * k];
                let label = fit_labels[i] as usize;
                loss += cross_entropy(row, label);
                let p = softmax(row);
                for c in 0..k {
                    grad[b * k + c] = (p[c] - f64::from(u8::from(c == label))) / n as f64;
                }
            }
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence(format!(
                    "classifier loss became non-finite in epoch {epoch}"
                )));
            }
            let grads = net.backward(&cache, &grad)?;
            adam_step(&mut net, &grads, &mut state)?;
        }
    }
    let mut clf = Classifier::from_network(net, 0.0, 0.0)?;
    clf.heldout_accuracy = clf.accuracy(&held)?;
    clf.train_accuracy = clf.accuracy(train)?;
    Ok(clf)
}
