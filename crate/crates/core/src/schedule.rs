//! Noise schedules and the closed-form DDIM arithmetic: forward
//! perturbation, `sigma_t`, Tweedie denoising and the stochastic reverse
//! step.
//!
//! Convention: `z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::{Error, LatentVideo, Result};

/// Radicands in `(-RADICAND_TOL, 0)` are clamped to zero; anything more
/// negative is a schedule inconsistency.
pub const RADICAND_TOL: f64 = 1e-12;

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;
pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// `beta_s` linear over a ladder of `train_steps` steps; the sampling
    /// steps take every `train_steps / T`-th cumulative product. With
    /// `train_steps = T` this is `abar_t = prod_{s <= t} (1 - beta_s)`.
    LinearBeta {
        #[serde(default = "default_beta_start")]
        beta_start: f64,
        #[serde(default = "default_beta_end")]
        beta_end: f64,
        /// `None` uses the sampling step count itself.
        #[serde(default = "default_train_steps")]
        train_steps: Option<usize>,
    },
    /// Explicit `abar_0..=abar_T`.
    Explicit { alphabar: Vec<f64> },
}

fn default_train_steps() -> Option<usize> {
    Some(DEFAULT_TRAIN_STEPS)
}

fn default_beta_start() -> f64 {
    DEFAULT_BETA_START
}

fn default_beta_end() -> f64 {
    DEFAULT_BETA_END
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::LinearBeta {
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            train_steps: Some(DEFAULT_TRAIN_STEPS),
        }
    }
}

/// Discrete `abar_t` ladder for `t = 0..=T` plus the stochasticity `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphabar: Vec<f64>,
    eta: f64,
}

pub fn build_schedule(kind: &ScheduleKind, steps: usize, eta: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("step count must be positive".into()));
    }
    let alphabar = match kind {
        ScheduleKind::LinearBeta {
            beta_start,
            beta_end,
            train_steps,
        } => linear_beta_alphabar(*beta_start, *beta_end, steps, train_steps.unwrap_or(steps))?,
        ScheduleKind::Explicit { alphabar } => {
            if alphabar.len() != steps + 1 {
                return Err(Error::InvalidSchedule(format!(
                    "explicit schedule has {} entries, expected T + 1 = {}",
                    alphabar.len(),
                    steps + 1
                )));
            }
            alphabar.clone()
        }
    };
    NoiseSchedule::new(alphabar, eta)
}

fn linear_beta_alphabar(start: f64, end: f64, steps: usize, train: usize) -> Result<Vec<f64>> {
    if train < steps {
        return Err(Error::InvalidSchedule(format!(
            "train_steps {train} is smaller than the sampling step count {steps}"
        )));
    }
    for (name, b) in [("beta_start", start), ("beta_end", end)] {
        if !(0.0..1.0).contains(&b) {
            return Err(Error::InvalidSchedule(format!("{name} = {b} outside [0, 1)")));
        }
    }
    let beta = |s: usize| {
        if train == 1 {
            start
        } else {
            start + (end - start) * (s - 1) as f64 / (train - 1) as f64
        }
    };
    let mut cumulative = Vec::with_capacity(train + 1);
    let mut prod = 1.0;
    cumulative.push(prod);
    for s in 1..=train {
        prod *= 1.0 - beta(s);
        cumulative.push(prod);
    }
    Ok((0..=steps).map(|t| cumulative[t * train / steps]).collect())
}

impl NoiseSchedule {
    pub fn new(alphabar: Vec<f64>, eta: f64) -> Result<Self> {
        if alphabar.len() < 2 {
            return Err(Error::InvalidSchedule("need at least abar_0 and abar_1".into()));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidSchedule(format!("eta = {eta} must be finite and >= 0")));
        }
        if (alphabar[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSchedule(format!("abar_0 = {} must be 1", alphabar[0])));
        }
        for (t, &a) in alphabar.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidSchedule(format!("abar_{t} = {a} outside (0, 1]")));
            }
        }
        for (t, w) in alphabar.windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(Error::InvalidSchedule(format!(
                    "abar increases between t={t} and t={}",
                    t + 1
                )));
            }
        }
        Ok(Self { alphabar, eta })
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::new(self.alphabar.clone(), eta)
    }

    /// Number of sampling steps `T`.
    pub fn steps(&self) -> usize {
        self.alphabar.len() - 1
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn alphabar(&self, t: usize) -> f64 {
        self.alphabar[t]
    }

    pub fn alphabars(&self) -> &[f64] {
        &self.alphabar
    }

    pub(crate) fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                min,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// `sigma_t = eta * sqrt((1 - abar_{t-1}) / (1 - abar_t) * (1 - abar_t / abar_{t-1}))`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        self.check_t(t, 1)?;
        let (prev, cur) = (self.alphabar[t - 1], self.alphabar[t]);
        if cur >= 1.0 {
            return Err(Error::DegenerateSchedule { t });
        }
        let radicand = ((1.0 - prev) / (1.0 - cur)) * (1.0 - cur / prev);
        Ok(self.eta * sqrt(radicand.max(0.0)))
    }

    /// Coefficient of the predicted noise in the reverse step,
    /// `sqrt(1 - abar_{t-1} - sigma_t^2)`.
    fn direction_coef(&self, t: usize, sigma: f64) -> Result<f64> {
        let radicand = 1.0 - self.alphabar[t - 1] - sigma * sigma;
        if radicand < -RADICAND_TOL {
            return Err(Error::NegativeRadicand { t, value: radicand });
        }
        Ok(sqrt(radicand.max(0.0)))
    }
}

/// `sqrt(abar_t) z0 + sqrt(1 - abar_t) noise`. `t = 0` returns `z0` exactly.
pub fn forward_sample(
    z0: &LatentVideo,
    t: usize,
    noise: &LatentVideo,
    sched: &NoiseSchedule,
) -> Result<LatentVideo> {
    sched.check_t(t, 0)?;
    z0.ensure_same_shape(noise)?;
    if t == 0 {
        return Ok(z0.clone());
    }
    let a = sched.alphabar[t];
    z0.lincomb(sqrt(a), noise, sqrt(1.0 - a))
}

/// Posterior mean `z_{0|t} = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)`.
pub fn tweedie(
    z_t: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentVideo> {
    sched.check_t(t, 1)?;
    denoise(z_t, eps_hat, t, sched)
}

/// Tweedie without the range check; at `t = 0` this is the identity.
pub(crate) fn denoise(
    z_t: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentVideo> {
    z_t.ensure_same_shape(eps_hat)?;
    let a = sched.alphabar[t];
    let (c_eps, inv) = (sqrt(1.0 - a), 1.0 / sqrt(a));
    Ok(z_t.zip_map(eps_hat, |z, e| (z - c_eps * e) * inv))
}

/// Deterministic part of the reverse step.
#[derive(Debug, Clone)]
pub struct StepMean {
    /// `sqrt(abar_{t-1}) z_{0|t} + sqrt(1 - abar_{t-1} - sigma_t^2) eps_hat`.
    pub mean: LatentVideo,
    pub z0t: LatentVideo,
    pub sigma: f64,
}

impl StepMean {
    /// `mean + sigma * noise`.
    pub fn perturb(&self, noise: &LatentVideo) -> Result<LatentVideo> {
        self.mean.ensure_same_shape(noise)?;
        let s = self.sigma;
        Ok(self.mean.zip_map(noise, |m, e| m + s * e))
    }
}

pub fn ddim_mean(
    z_t: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<StepMean> {
    let z0t = tweedie(z_t, eps_hat, t, sched)?;
    let sigma = sched.sigma(t)?;
    let c_dir = sched.direction_coef(t, sigma)?;
    let c_z0 = sqrt(sched.alphabar[t - 1]);
    let mean = z0t.zip_map(eps_hat, |x, e| c_z0 * x + c_dir * e);
    Ok(StepMean { mean, z0t, sigma })
}

/// One stochastic DDIM step. Returns `(z_{t-1}, z_{0|t})`.
pub fn ddim_step(
    z_t: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    sched: &NoiseSchedule,
    noise: &LatentVideo,
) -> Result<(LatentVideo, LatentVideo)> {
    let step = ddim_mean(z_t, eps_hat, t, sched)?;
    let z_prev = step.perturb(noise)?;
    Ok((z_prev, step.z0t))
}
