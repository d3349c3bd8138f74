use rayon::prelude::*;

use super::{GuidanceConfig, Schedule};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Gradients, Network};
use crate::rng::Philox;

// Rows per forward/backward chunk. Chunk gradients are summed in chunk order,
// so the result is the same at any thread count.
const GRAD_CHUNK: usize = 32;

/// Noise-prediction loss `mean_b |eps_b - eps_hat_b|^2` on one batch and its
/// gradient.
///
/// Per sample, in order, the stream supplies: `t = 1 + below(T)`, `D` normal
/// draws for the noise, one Bernoulli(`p_uncond`) draw for label dropout.
pub fn training_loss(
    net: &Network,
    batch: &Dataset,
    schedule: &Schedule,
    guidance: &GuidanceConfig,
    rng: &mut Philox,
) -> Result<(f64, Gradients)> {
    guidance.validate()?;
    let spec = net.spec();
    let d = spec.input_dim;
    if batch.dim() != d {
        return Err(Error::Shape {
            context: "training batch dimension",
            expected: d,
            actual: batch.dim(),
        });
    }
    if spec.max_timestep != schedule.steps() {
        return Err(Error::config(
            "network timestep range differs from the schedule",
        ));
    }
    let conditional = spec.is_class_conditional();
    if conditional && !batch.is_labeled() {
        return Err(Error::usage(
            "class-conditional training needs labeled data",
        ));
    }
    let n = batch.len();
    let mut xt = vec![0.0; n * d];
    let mut eps = vec![0.0; n * d];
    let mut ts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = 1 + rng.below(schedule.steps() as u64) as usize;
        let e = &mut eps[i * d..(i + 1) * d];
        rng.fill_normal(e);
        let dropped = rng.bernoulli(guidance.p_uncond);
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (j, x0) in batch.row(i).iter().enumerate() {
            xt[i * d + j] = a * x0 + b * e[j];
        }
        ts.push(t);
        labels.push(if conditional && !dropped {
            batch.label(i)
        } else {
            None
        });
    }

    let scale = 2.0 / n as f64;
    let parts: Vec<(f64, Gradients)> = (0..n)
        .step_by(GRAD_CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&start| -> Result<(f64, Gradients)> {
            let end = (start + GRAD_CHUNK).min(n);
            let cache = net.forward_batch(
                &xt[start * d..end * d],
                &ts[start..end],
                &labels[start..end],
            )?;
            let target = &eps[start * d..end * d];
            let mut sq = 0.0;
            let grad_out: Vec<f64> = cache
                .output()
                .iter()
                .zip(target)
                .map(|(p, e)| {
                    let r = p - e;
                    sq += r * r;
                    scale * r
                })
                .collect();
            Ok((sq, net.backward(&cache, &grad_out)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(net);
    for (sq, g) in &parts {
        total += sq;
        grads.accumulate(g);
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::TrainingDivergence("diffusion loss".into()));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Minibatch Adam on the noise-prediction loss. Each epoch visits a fresh
/// permutation of the data; the last batch may be short.
pub fn train_diffusion(
    net: &mut Network,
    data: &Dataset,
    schedule: &Schedule,
    guidance: &GuidanceConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::config("epochs and batch_size must be >= 1"));
    }
    let mut rng = Philox::new(seed);
    let mut state = AdamState::new(net, config.adam);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let perm = rng.permutation(data.len());
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in perm.chunks(config.batch_size) {
            let batch = data.subset(idx);
            let (loss, grads) = training_loss(net, &batch, schedule, guidance, &mut rng)?;
            adam_step(net, &grads, &mut state)?;
            sum += loss;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    Ok(TrainReport {
        epoch_losses,
        steps: state.step(),
    })
}
