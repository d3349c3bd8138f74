use rayon::prelude::*;

use super::{NoisePredictor, Schedule};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::rng::Philox;

// Samples are processed in fixed-size chunks so parallel and serial runs
// see identical batches; each sample also owns its own Philox substream.
const SAMPLE_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Ancestral sampling through every timestep.
    Ddpm,
    /// Deterministic implicit sampling over `steps` strided timesteps.
    Ddim { steps: usize },
}

/// Conditioning labels for a sampling run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelPlan {
    /// Every sample null-conditioned; output carries no labels.
    Null,
    /// Sample `i` conditioned on class `i mod K`.
    BalancedAuto,
    Explicit(Vec<usize>),
}

/// Guided noise estimate for one sample.
pub fn guided_epsilon<P: NoisePredictor + ?Sized>(
    pred: &P,
    x_t: &[f64],
    t: usize,
    label: Option<usize>,
    scale: f64,
) -> Result<Vec<f64>> {
    guided_epsilon_batch(pred, x_t, t, &[label], scale)
}

/// `eps_u + scale * (eps_c - eps_u)` per row. Scales 1 and 0 return the
/// conditional and unconditional branch unmodified; rows without a label
/// use the unconditional branch.
pub fn guided_epsilon_batch<P: NoisePredictor + ?Sized>(
    pred: &P,
    xs: &[f64],
    t: usize,
    labels: &[Option<usize>],
    scale: f64,
) -> Result<Vec<f64>> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::config(format!(
            "guidance scale {scale} must be >= 0"
        )));
    }
    let batch = labels.len();
    let ts = vec![t; batch];
    let nulls = vec![None; batch];
    let any_label = labels.iter().any(Option::is_some);
    if !any_label || scale == 0.0 {
        return pred.predict_batch(xs, &ts, &nulls);
    }
    if scale == 1.0 {
        return pred.predict_batch(xs, &ts, labels);
    }
    let cond = pred.predict_batch(xs, &ts, labels)?;
    let uncond = pred.predict_batch(xs, &ts, &nulls)?;
    let d = pred.data_dim();
    let mut out = uncond;
    for (b, label) in labels.iter().enumerate() {
        if label.is_some() {
            for j in b * d..(b + 1) * d {
                out[j] += scale * (cond[j] - out[j]);
            }
        }
    }
    Ok(out)
}

fn ddpm_update(x: &mut [f64], eps: &[f64], t: usize, schedule: &Schedule, noise: Option<&[f64]>) {
    let beta = schedule.beta(t);
    let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let sigma = beta.sqrt();
    for j in 0..x.len() {
        let mean = inv_sqrt_alpha * (x[j] - coef * eps[j]);
        x[j] = match noise {
            Some(z) => mean + sigma * z[j],
            None => mean,
        };
    }
}

fn ddim_update(x: &mut [f64], eps: &[f64], t: usize, t_prev: usize, schedule: &Schedule) {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    for j in 0..x.len() {
        let x0 = (x[j] - sb * eps[j]) / sa;
        x[j] = pa * x0 + pb * eps[j];
    }
}

fn check_sample_dim<P: NoisePredictor + ?Sized>(pred: &P, x: &[f64]) -> Result<()> {
    if x.len() != pred.data_dim() {
        return Err(Error::Shape {
            context: "reverse step input",
            expected: pred.data_dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// One ancestral step `x_t -> x_{t-1}`; no noise is added at `t = 1`.
pub fn ddpm_step<P: NoisePredictor + ?Sized>(
    pred: &P,
    x_t: &[f64],
    t: usize,
    schedule: &Schedule,
    scale: f64,
    label: Option<usize>,
    rng: &mut Philox,
) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    check_sample_dim(pred, x_t)?;
    let eps = guided_epsilon(pred, x_t, t, label, scale)?;
    let mut x = x_t.to_vec();
    if t > 1 {
        let mut z = vec![0.0; x.len()];
        rng.fill_normal(&mut z);
        ddpm_update(&mut x, &eps, t, schedule, Some(&z));
    } else {
        ddpm_update(&mut x, &eps, t, schedule, None);
    }
    Ok(x)
}

/// One deterministic implicit step `x_t -> x_{t_prev}`; `t_prev = 0` is the data.
pub fn ddim_step<P: NoisePredictor + ?Sized>(
    pred: &P,
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    schedule: &Schedule,
    scale: f64,
    label: Option<usize>,
) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if t_prev >= t {
        return Err(Error::usage(format!(
            "ddim step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    check_sample_dim(pred, x_t)?;
    let eps = guided_epsilon(pred, x_t, t, label, scale)?;
    let mut x = x_t.to_vec();
    ddim_update(&mut x, &eps, t, t_prev, schedule);
    Ok(x)
}

/// Strided timesteps `k * T / S` for `k = S..=1`, descending.
pub fn ddim_timesteps(total: usize, steps: usize) -> Vec<usize> {
    let s = steps.clamp(1, total);
    (1..=s).rev().map(|k| k * total / s).collect()
}

fn resolve_labels(
    n: usize,
    num_classes: usize,
    plan: &LabelPlan,
    scale: Option<f64>,
) -> Result<Vec<Option<usize>>> {
    if scale.is_some() && num_classes == 0 {
        return Err(Error::config(
            "guidance requested but the model is not class-conditional",
        ));
    }
    let labels = match plan {
        LabelPlan::Null => vec![None; n],
        _ if scale.is_none() => {
            return Err(Error::config("conditioning labels need a guidance scale"));
        }
        LabelPlan::BalancedAuto => (0..n).map(|i| Some(i % num_classes)).collect(),
        LabelPlan::Explicit(l) => {
            if l.len() != n {
                return Err(Error::Shape {
                    context: "explicit sampling labels",
                    expected: n,
                    actual: l.len(),
                });
            }
            if let Some(bad) = l.iter().find(|&&c| c >= num_classes) {
                return Err(Error::usage(format!("label {bad} out of range")));
            }
            l.iter().map(|&c| Some(c)).collect()
        }
    };
    Ok(labels)
}

/// Draws `n` samples from `x_T ~ N(0, I)` down to `x_0`, clamped to `[-1, 1]`.
///
/// Sample `i` draws all of its noise from `Philox::substream(seed, i)`, so the
/// result does not depend on chunking or thread count.
pub fn sample<P: NoisePredictor + ?Sized>(
    pred: &P,
    n: usize,
    schedule: &Schedule,
    kind: SamplerKind,
    scale: Option<f64>,
    plan: &LabelPlan,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("sample count must be >= 1"));
    }
    if let Some(s) = scale {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::config(format!("guidance scale {s} must be >= 0")));
        }
    }
    let k = pred.num_classes();
    let labels = resolve_labels(n, k, plan, scale)?;
    let scale = scale.unwrap_or(1.0);
    let d = pred.data_dim();
    let total = schedule.steps();
    let ddim_ts = match kind {
        SamplerKind::Ddim { steps } => {
            if steps == 0 {
                return Err(Error::config("ddim needs at least one step"));
            }
            ddim_timesteps(total, steps)
        }
        SamplerKind::Ddpm => Vec::new(),
    };

    let starts: Vec<usize> = (0..n).step_by(SAMPLE_CHUNK).collect();
    let chunks: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| -> Result<Vec<f64>> {
            let end = (start + SAMPLE_CHUNK).min(n);
            let b = end - start;
            let chunk_labels = &labels[start..end];
            let mut rngs: Vec<Philox> = (start..end)
                .map(|i| Philox::substream(seed, i as u64))
                .collect();
            let mut x = vec![0.0; b * d];
            for (row, rng) in x.chunks_exact_mut(d).zip(&mut rngs) {
                rng.fill_normal(row);
            }
            let check = |x: &[f64], step: usize| -> Result<()> {
                if x.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::SamplingDivergence { step })
                }
            };
            match kind {
                SamplerKind::Ddpm => {
                    let mut z = vec![0.0; d];
                    for t in (1..=total).rev() {
                        let eps = guided_epsilon_batch(pred, &x, t, chunk_labels, scale)?;
                        for (r, rng) in rngs.iter_mut().enumerate() {
                            let row = &mut x[r * d..(r + 1) * d];
                            let e = &eps[r * d..(r + 1) * d];
                            if t > 1 {
                                rng.fill_normal(&mut z);
                                ddpm_update(row, e, t, schedule, Some(&z));
                            } else {
                                ddpm_update(row, e, t, schedule, None);
                            }
                        }
                        check(&x, t)?;
                    }
                }
                SamplerKind::Ddim { .. } => {
                    for (i, &t) in ddim_ts.iter().enumerate() {
                        let t_prev = ddim_ts.get(i + 1).copied().unwrap_or(0);
                        let eps = guided_epsilon_batch(pred, &x, t, chunk_labels, scale)?;
                        for r in 0..b {
                            ddim_update(
                                &mut x[r * d..(r + 1) * d],
                                &eps[r * d..(r + 1) * d],
                                t,
                                t_prev,
                                schedule,
                            );
                        }
                        check(&x, t)?;
                    }
                }
            }
            for v in &mut x {
                *v = v.clamp(-1.0, 1.0);
            }
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;

    let features: Vec<f64> = chunks.into_iter().flatten().collect();
    let out_labels = if labels.iter().all(Option::is_some) {
        Some(labels.iter().map(|l| l.unwrap() as u16).collect())
    } else {
        None
    };
    Dataset::new(d, features, out_labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{forward_sample, make_schedule, ScheduleSpec};
    use crate::nn::{Activation, Network, NetworkSpec};

    /// Predicts the exact noise that maps a fixed `x0` to `x_t`.
    struct OracleNoise {
        x0: Vec<f64>,
        schedule: Schedule,
    }

    impl NoisePredictor for OracleNoise {
        fn data_dim(&self) -> usize {
            self.x0.len()
        }
        fn num_classes(&self) -> usize {
            0
        }
        fn predict_batch(&self, xs: &[f64], ts: &[usize], _: &[Option<usize>]) -> Result<Vec<f64>> {
            let d = self.x0.len();
            let mut out = Vec::with_capacity(xs.len());
            for (b, &t) in ts.iter().enumerate() {
                let ab = self.schedule.alpha_bar(t);
                for j in 0..d {
                    out.push((xs[b * d + j] - ab.sqrt() * self.x0[j]) / (1.0 - ab).sqrt());
                }
            }
            Ok(out)
        }
    }

    fn small_conditional_net() -> Network {
        Network::new(
            NetworkSpec {
                input_dim: 2,
                hidden: vec![16, 16],
                output_dim: 2,
                hidden_activation: Activation::Silu,
                time_embed_dim: 8,
                max_timestep: 40,
                num_classes: 4,
                class_embed_dim: 4,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn guidance_endpoints_are_exact() {
        let net = small_conditional_net();
        let x = [0.3, -0.2];
        let (cond, _) = net.forward(&x, 7, Some(2)).unwrap();
        let (uncond, _) = net.forward(&x, 7, None).unwrap();
        assert_eq!(guided_epsilon(&net, &x, 7, Some(2), 1.0).unwrap(), cond);
        assert_eq!(guided_epsilon(&net, &x, 7, Some(2), 0.0).unwrap(), uncond);
        let mid = guided_epsilon(&net, &x, 7, Some(2), 0.5).unwrap();
        for j in 0..2 {
            assert!((mid[j] - 0.5 * (cond[j] + uncond[j])).abs() < 1e-15);
        }
        assert!(guided_epsilon(&net, &x, 7, Some(2), -1.0).is_err());
    }

    #[test]
    fn ddpm_final_step_is_deterministic() {
        let net = small_conditional_net();
        let s = make_schedule(40, 1e-3, 0.05).unwrap();
        let x = [0.1, 0.9];
        let a = ddpm_step(&net, &x, 1, &s, 1.0, Some(1), &mut Philox::new(1)).unwrap();
        let b = ddpm_step(&net, &x, 1, &s, 1.0, Some(1), &mut Philox::new(2)).unwrap();
        assert_eq!(a, b);
        let c = ddpm_step(&net, &x, 5, &s, 1.0, Some(1), &mut Philox::new(1)).unwrap();
        let d = ddpm_step(&net, &x, 5, &s, 1.0, Some(1), &mut Philox::new(1)).unwrap();
        let e = ddpm_step(&net, &x, 5, &s, 1.0, Some(1), &mut Philox::new(2)).unwrap();
        assert_eq!(c, d);
        assert_ne!(c, e);
    }

    /// Always returns the noise that was used to build `x_T`.
    struct FixedNoise(Vec<f64>);

    impl NoisePredictor for FixedNoise {
        fn data_dim(&self) -> usize {
            self.0.len()
        }
        fn num_classes(&self) -> usize {
            0
        }
        fn predict_batch(&self, _: &[f64], ts: &[usize], _: &[Option<usize>]) -> Result<Vec<f64>> {
            Ok(ts.iter().flat_map(|_| self.0.iter().copied()).collect())
        }
    }

    #[test]
    fn ddpm_reconstruction_improves_as_beta_shrinks() {
        let x0 = vec![0.4, -0.7];
        let eps = vec![0.8, -1.1];
        let stub = FixedNoise(eps.clone());
        let mut errors = Vec::new();
        for beta in [0.1, 0.01, 0.001] {
            let schedule = make_schedule(10, beta, beta).unwrap();
            let mut total = 0.0;
            for seed in 0..20 {
                let mut rng = Philox::new(seed);
                let mut x = forward_sample(&x0, 10, &eps, &schedule).unwrap();
                for t in (1..=10).rev() {
                    x = ddpm_step(&stub, &x, t, &schedule, 1.0, None, &mut rng).unwrap();
                }
                total += x
                    .iter()
                    .zip(&x0)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
            }
            errors.push(total / 20.0);
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    }

    #[test]
    fn ddim_inverts_exact_noise() {
        let schedule = ScheduleSpec::default().build().unwrap();
        let x0 = vec![0.25, -0.6, 0.9];
        let oracle = OracleNoise {
            x0: x0.clone(),
            schedule: schedule.clone(),
        };
        let xt = forward_sample(&x0, 400, &[1.3, -0.2, 0.5], &schedule).unwrap();
        let back = ddim_step(&oracle, &xt, 400, 0, &schedule, 1.0, None).unwrap();
        for j in 0..3 {
            assert!((back[j] - x0[j]).abs() < 1e-6);
        }
        assert!(ddim_step(&oracle, &xt, 10, 10, &schedule, 1.0, None).is_err());
    }

    #[test]
    fn ddim_repeatable_and_full_or_strided_terminates() {
        let net = small_conditional_net();
        let s = make_schedule(40, 1e-3, 0.05).unwrap();
        let a = ddim_step(&net, &[0.1, 0.2], 30, 20, &s, 0.3, Some(0)).unwrap();
        let b = ddim_step(&net, &[0.1, 0.2], 30, 20, &s, 0.3, Some(0)).unwrap();
        assert_eq!(a, b);
        for steps in [40, 8] {
            let ds = sample(
                &net,
                5,
                &s,
                SamplerKind::Ddim { steps },
                None,
                &LabelPlan::Null,
                1,
            )
            .unwrap();
            assert_eq!(ds.len(), 5);
            assert_eq!(ds.dim(), 2);
        }
        assert_eq!(ddim_timesteps(400, 50)[..3], [400, 392, 384]);
        assert_eq!(*ddim_timesteps(400, 50).last().unwrap(), 8);
        assert_eq!(ddim_timesteps(10, 50).len(), 10);
    }

    #[test]
    fn untrained_sample_shape_and_range() {
        let net = small_conditional_net();
        let s = make_schedule(40, 1e-3, 0.05).unwrap();
        let ds = sample(&net, 10, &s, SamplerKind::Ddpm, None, &LabelPlan::Null, 9).unwrap();
        assert_eq!((ds.len(), ds.dim()), (10, 2));
        assert!(!ds.is_labeled());
        assert!(ds
            .features()
            .iter()
            .all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn balanced_labels() {
        let net = small_conditional_net();
        let s = make_schedule(5, 1e-3, 0.05).unwrap();
        let ds = sample(
            &net,
            1000,
            &s,
            SamplerKind::Ddim { steps: 2 },
            Some(1.0),
            &LabelPlan::BalancedAuto,
            0,
        )
        .unwrap();
        assert_eq!(ds.class_counts(), vec![250; 4]);
    }

    #[test]
    fn sample_is_seed_deterministic_and_chunk_independent() {
        let net = small_conditional_net();
        let s = make_schedule(20, 1e-3, 0.05).unwrap();
        let run = |n| {
            sample(
                &net,
                n,
                &s,
                SamplerKind::Ddpm,
                Some(0.5),
                &LabelPlan::BalancedAuto,
                4,
            )
            .unwrap()
        };
        let a = run(70);
        let b = run(70);
        assert_eq!(a, b);
        // the first 3 samples do not depend on how many others are drawn
        let c = run(3);
        assert_eq!(&a.features()[..6], c.features());
    }

    #[test]
    fn guidance_on_unconditional_model_rejected() {
        let net = Network::new(
            NetworkSpec {
                input_dim: 2,
                hidden: vec![4],
                output_dim: 2,
                hidden_activation: Activation::Silu,
                time_embed_dim: 4,
                max_timestep: 5,
                num_classes: 0,
                class_embed_dim: 0,
            },
            0,
        )
        .unwrap();
        let s = make_schedule(5, 1e-3, 0.05).unwrap();
        let err = sample(
            &net,
            2,
            &s,
            SamplerKind::Ddpm,
            Some(1.0),
            &LabelPlan::BalancedAuto,
            0,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    struct Exploding;

    impl NoisePredictor for Exploding {
        fn data_dim(&self) -> usize {
            1
        }
        fn num_classes(&self) -> usize {
            0
        }
        fn predict_batch(&self, xs: &[f64], ts: &[usize], _: &[Option<usize>]) -> Result<Vec<f64>> {
            Ok(ts
                .iter()
                .zip(xs)
                .map(|(&t, _)| if t == 3 { f64::INFINITY } else { 0.0 })
                .collect())
        }
    }

    #[test]
    fn divergence_names_step() {
        let s = make_schedule(10, 1e-3, 0.05).unwrap();
        let err = sample(
            &Exploding,
            2,
            &s,
            SamplerKind::Ddpm,
            None,
            &LabelPlan::Null,
            0,
        );
        assert!(matches!(err, Err(Error::SamplingDivergence { step: 3 })));
    }
}
