use crate::error::{Error, Result};
use crate::rng::Philox;

/// Parameters a linear schedule is built from; stored in model snapshots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: 400,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<Schedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Noise schedule indexed by `t = 1..=T`; `alpha_bar(0)` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linear betas from `beta_start` at `t = 1` to `beta_end` at `t = T`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    Schedule::from_betas(betas)
}

impl Schedule {
    /// Arbitrary betas in `[0, 1)`; zero betas make a noiseless chain.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::config(format!("beta {b} outside [0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Schedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::usage(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Closed-form jump `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_sample(x0: &[f64], t: usize, eps: &[f64], schedule: &Schedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if eps.len() != x0.len() {
        return Err(Error::Shape {
            context: "forward_sample noise",
            expected: x0.len(),
            actual: eps.len(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Literal Markov chain `x_s = sqrt(1 - beta_s) x_{s-1} + sqrt(beta_s) eps_s`, `s = 1..=t`.
pub fn compose_forward_chain(
    x0: &[f64],
    t: usize,
    schedule: &Schedule,
    rng: &mut Philox,
) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    let mut x = x0.to_vec();
    for s in 1..=t {
        let beta = schedule.beta(s);
        let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
        for v in &mut x {
            *v = a * *v + b * rng.normal();
        }
    }
    Ok(x)
}
