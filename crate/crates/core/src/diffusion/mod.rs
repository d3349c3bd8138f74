//! Denoising diffusion: schedule, epsilon-prediction training with label
//! dropout, ancestral and deterministic reverse samplers, and
//! classifier-free guidance.

mod sampler;
mod schedule;
mod train;

pub use sampler::{
    ddim_step, ddim_timesteps, ddpm_step, guided_epsilon, guided_epsilon_batch, sample, LabelPlan,
    SamplerKind,
};
pub use schedule::{compose_forward_chain, forward_sample, make_schedule, Schedule, ScheduleSpec};
pub use train::{train_diffusion, training_loss, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::nn::{read_snapshot, write_snapshot, Network, NetworkSpec};

/// Classifier-free guidance settings.
///
/// `scale` blends the two branches as `eps_u + scale * (eps_c - eps_u)`:
/// 1 is purely conditional, 0 purely unconditional. `p_uncond` is the
/// probability a training label is replaced by the null class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub p_uncond: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            scale: 1.0,
            p_uncond: 0.1,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::config(format!(
                "guidance scale must be finite and >= 0, got {}",
                self.scale
            )));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::config(format!(
                "p_uncond must lie in [0, 1], got {}",
                self.p_uncond
            )));
        }
        Ok(())
    }
}

/// Anything that predicts the injected noise for a batch of noisy samples.
pub trait NoisePredictor: Sync {
    fn data_dim(&self) -> usize;

    /// Number of conditioning classes; 0 for an unconditional predictor.
    fn num_classes(&self) -> usize;

    /// `xs` is `batch x data_dim`; returns the same shape.
    fn predict_batch(&self, xs: &[f64], ts: &[usize], labels: &[Option<usize>])
        -> Result<Vec<f64>>;
}

impl NoisePredictor for Network {
    fn data_dim(&self) -> usize {
        self.spec().input_dim
    }

    fn num_classes(&self) -> usize {
        if self.spec().is_class_conditional() {
            self.spec().num_classes
        } else {
            0
        }
    }

    fn predict_batch(
        &self,
        xs: &[f64],
        ts: &[usize],
        labels: &[Option<usize>],
    ) -> Result<Vec<f64>> {
        Ok(self.forward_batch(xs, ts, labels)?.output().to_vec())
    }
}

/// Role tag for diffusion snapshots.
pub const DIFFUSION_ROLE: [u8; 4] = *b"DIFF";

/// A trained noise predictor with the schedule it was trained under.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub network: Network,
    pub schedule: ScheduleSpec,
}

impl DiffusionModel {
    pub fn new(spec: NetworkSpec, schedule: ScheduleSpec, seed: u64) -> Result<Self> {
        if spec.time_embed_dim == 0 || spec.max_timestep != schedule.steps {
            return Err(Error::config(
                "diffusion network needs a time embedding covering the schedule",
            ));
        }
        if spec.output_dim != spec.input_dim {
            return Err(Error::config(
                "noise predictor output must match data dimension",
            ));
        }
        Ok(DiffusionModel {
            network: Network::new(spec, seed)?,
            schedule,
        })
    }

    /// Snapshot bytes; role metadata is `u32 T, f64 beta_start, f64 beta_end`.
    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut extra = Vec::with_capacity(20);
        extra.extend_from_slice(&(self.schedule.steps as u32).to_le_bytes());
        extra.extend_from_slice(&self.schedule.beta_start.to_le_bytes());
        extra.extend_from_slice(&self.schedule.beta_end.to_le_bytes());
        write_snapshot(DIFFUSION_ROLE, &self.network, &extra)
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self> {
        let snap = read_snapshot(bytes)?;
        if snap.role != DIFFUSION_ROLE {
            return Err(Error::format(
                8,
                format!(
                    "snapshot role {:?} is not a diffusion model",
                    String::from_utf8_lossy(&snap.role)
                ),
            ));
        }
        if snap.extra.len() != 20 {
            return Err(Error::format(
                8,
                "diffusion snapshot metadata must be 20 bytes",
            ));
        }
        let e = &snap.extra;
        let schedule = ScheduleSpec {
            steps: u32::from_le_bytes(e[0..4].try_into().unwrap()) as usize,
            beta_start: f64::from_le_bytes(e[4..12].try_into().unwrap()),
            beta_end: f64::from_le_bytes(e[12..20].try_into().unwrap()),
        };
        schedule
            .build()
            .map_err(|err| Error::format(8, format!("bad schedule in snapshot: {err}")))?;
        Ok(DiffusionModel {
            network: snap.network,
            schedule,
        })
    }
}
