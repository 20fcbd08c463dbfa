//! The sampling engine.
//!
//! Inside the guidance window each reverse step branches into `n`
//! stochastic DDIM candidates, denoises every candidate with one score
//! evaluation, scores the decoded posterior means with the configured
//! rewards and keeps the best one (select mode, the zero-temperature limit
//! of path-integral control). Soft mode keeps the temperature and moves by
//! the reward-weighted mean displacement instead. Classifier mode shifts the
//! score by the gradient of the analytic class log-likelihood and is only a
//! differentiable baseline.
//!
//! NFE accounting (select mode): the selected candidate's noise prediction
//! is reused as the next step's prediction, so a run costs
//! `T + sum over guided steps t >= 2 of (n - 1)`. A guided step at `t = 1`
//! scores its candidates directly (they are final samples) and costs
//! nothing extra. See [`nfe_budget`].
//!
//! Candidate noise is drawn from the stream keyed by `(seed, t, index)`
//! and reductions run in index order, so results do not depend on the
//! [`Executor`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ensemble::{self, CandidateScores, EnsembleSpec};
use crate::math::{self, sqrt};
use crate::models::{decode, grad_log_likelihood, Condition, DecoderSpec, Denoiser, GuidanceScale, ScoreModelSpec};
use crate::rewards::{candidate_id, KeyFrameSet, Reward, ScoreContext};
use crate::rng::{derive_seed, fill_normal, NoiseStreams, StreamKey};
use crate::schedule::{ddim_mean, ddim_step, denoise, NoiseSchedule};
use crate::{Error, LatentVideo, Result, RewardError};

/// Runs `f(0..n)` and returns results in index order.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}

/// Monotonic time source for per-step wall time.
pub trait Clock: Sync {
    fn now(&self) -> Duration;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GuidanceMode {
    /// Keep the candidate with the largest combined reward.
    #[default]
    Select,
    /// Reward-weighted displacement at temperature `alpha > 0`.
    Soft { alpha: f64 },
    /// Analytic classifier guidance with strength `weight`.
    Classifier { weight: f64 },
}

/// What to do when a reward fails on a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    #[default]
    Abort,
    /// Exclude the candidate from the argmax; it is a hard error only when
    /// every candidate of a step fails.
    DropCandidate,
}

/// Set of timesteps (subset of `1..=T`) where guidance applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuidanceWindow {
    mask: Vec<bool>,
}

impl GuidanceWindow {
    pub fn none(steps: usize) -> Self {
        Self {
            mask: vec![false; steps + 1],
        }
    }

    pub fn all(steps: usize) -> Self {
        let mut mask = vec![true; steps + 1];
        mask[0] = false;
        Self { mask }
    }

    /// `t` in `[lo, hi]`.
    pub fn range(steps: usize, hi: usize, lo: usize) -> Result<Self> {
        if lo == 0 || lo > hi || hi > steps {
            return Err(Error::InvalidConfig {
                field: "window",
                reason: format!("[{hi}, {lo}] is not a subrange of [{steps}, 1]"),
            });
        }
        let mut w = Self::none(steps);
        for t in lo..=hi {
            w.mask[t] = true;
        }
        Ok(w)
    }

    /// The first `count` reverse steps, `t` in `[T, T - count + 1]`.
    pub fn first(steps: usize, count: usize) -> Result<Self> {
        if count == 0 {
            return Ok(Self::none(steps));
        }
        if count > steps {
            return Err(Error::InvalidConfig {
                field: "window",
                reason: format!("{count} guided steps exceed T = {steps}"),
            });
        }
        Self::range(steps, steps, steps - count + 1)
    }

    pub fn from_steps(steps: usize, ts: &[usize]) -> Result<Self> {
        let mut w = Self::none(steps);
        for &t in ts {
            if t == 0 || t > steps {
                return Err(Error::InvalidConfig {
                    field: "window",
                    reason: format!("timestep {t} outside [1, {steps}]"),
                });
            }
            w.mask[t] = true;
        }
        Ok(w)
    }

    pub fn steps(&self) -> usize {
        self.mask.len() - 1
    }

    pub fn contains(&self, t: usize) -> bool {
        self.mask.get(t).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Guided timesteps in sampling order (descending).
    pub fn timesteps(&self) -> Vec<usize> {
        (1..self.mask.len()).rev().filter(|&t| self.mask[t]).collect()
    }
}

/// Window as written in a config, resolved against `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WindowSpec {
    #[default]
    None,
    All,
    /// The first `steps` reverse steps.
    First { steps: usize },
    /// `t` in `[T - start, T - end]`; `{start: 0, end: 5}` is `[T, T-5]`.
    Offsets { start: usize, end: usize },
    Explicit { timesteps: Vec<usize> },
}

impl WindowSpec {
    pub fn resolve(&self, steps: usize) -> Result<GuidanceWindow> {
        match self {
            WindowSpec::None => Ok(GuidanceWindow::none(steps)),
            WindowSpec::All => Ok(GuidanceWindow::all(steps)),
            WindowSpec::First { steps: k } => GuidanceWindow::first(steps, *k),
            WindowSpec::Offsets { start, end } => {
                if start > end || *end >= steps {
                    return Err(Error::InvalidConfig {
                        field: "window",
                        reason: format!("offsets [T-{start}, T-{end}] invalid for T = {steps}"),
                    });
                }
                GuidanceWindow::range(steps, steps - start, steps - end)
            }
            WindowSpec::Explicit { timesteps } => GuidanceWindow::from_steps(steps, timesteps),
        }
    }

    pub fn label(&self) -> String {
        match self {
            WindowSpec::None => "none".into(),
            WindowSpec::All => "all".into(),
            WindowSpec::First { steps } => format!("first{steps}"),
            WindowSpec::Offsets { start, end } => {
                let side = |k: &usize| if *k == 0 { "T".to_string() } else { format!("T-{k}") };
                format!("[{},{}]", side(start), side(end))
            }
            WindowSpec::Explicit { timesteps } => format!("{timesteps:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub n: usize,
    pub window: GuidanceWindow,
    pub mode: GuidanceMode,
    pub ensemble: EnsembleSpec,
    pub key_frames: KeyFrameSet,
    pub cfg_w: GuidanceScale,
    pub seed: u64,
    pub on_reward_failure: FailurePolicy,
}

impl GuidanceConfig {
    pub fn validate(&self, sched: &NoiseSchedule, reward_count: usize, frames: usize) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig {
                field: "n",
                reason: "branch count must be at least 1".into(),
            });
        }
        if self.window.steps() != sched.steps() {
            return Err(Error::InvalidConfig {
                field: "window",
                reason: format!("window built for T = {}, schedule has T = {}", self.window.steps(), sched.steps()),
            });
        }
        match self.mode {
            GuidanceMode::Soft { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(Error::InvalidConfig {
                    field: "alpha",
                    reason: format!("{alpha}: soft mode needs a finite temperature > 0"),
                })
            }
            GuidanceMode::Soft { .. } if self.n < 2 && !self.window.is_empty() => {
                return Err(Error::InvalidConfig {
                    field: "n",
                    reason: "soft mode needs at least 2 candidates".into(),
                })
            }
            GuidanceMode::Classifier { weight } if !(weight >= 0.0 && weight.is_finite()) => {
                return Err(Error::InvalidConfig {
                    field: "weight",
                    reason: format!("{weight} must be finite and >= 0"),
                })
            }
            _ => {}
        }
        if !matches!(self.mode, GuidanceMode::Classifier { .. }) {
            self.ensemble.validate(reward_count)?;
        }
        self.key_frames.validate_for(frames)
    }
}

/// What a step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Plain,
    Select,
    Soft,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: usize,
    pub kind: StepKind,
    /// `raw[reward][candidate]`; `None` marks a dropped candidate.
    pub raw: Vec<Vec<Option<f64>>>,
    pub combined: Vec<Option<f64>>,
    pub selected: Option<usize>,
    /// Soft mode only.
    pub ess: Option<f64>,
    pub nfe: usize,
    pub failures: Vec<String>,
    pub wall: Option<Duration>,
}

impl StepLog {
    fn plain(t: usize, kind: StepKind, nfe: usize) -> Self {
        Self {
            t,
            kind,
            raw: Vec::new(),
            combined: Vec::new(),
            selected: None,
            ess: None,
            nfe,
            failures: Vec::new(),
            wall: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    /// One entry per reverse step, `t = T` first.
    pub steps: Vec<StepLog>,
    pub z0: LatentVideo,
    pub frames: LatentVideo,
    /// Each reward evaluated on the decoded output.
    pub final_rewards: Vec<f64>,
    pub total_nfe: usize,
}

impl RunRecord {
    pub fn wall_time(&self) -> Duration {
        self.steps.iter().filter_map(|s| s.wall).sum()
    }
}

/// Closed-form NFE of a run (see module docs).
pub fn nfe_budget(mode: GuidanceMode, window: &GuidanceWindow, n: usize) -> usize {
    let steps = window.steps();
    let guided_above_one = window.timesteps().iter().filter(|&&t| t >= 2).count();
    match mode {
        GuidanceMode::Select => steps + guided_above_one * (n - 1),
        GuidanceMode::Soft { .. } => steps + guided_above_one * n,
        GuidanceMode::Classifier { .. } => steps,
    }
}

/// Reward-weighted control estimate. `u` is the displacement added to the
/// transition mean `mu_t`; the continuous-time control of the reverse SDE
/// has the opposite sign because time runs backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEstimate {
    pub u: LatentVideo,
    pub weights: Vec<f64>,
    pub ess: f64,
}

/// `u = sum_i w_i (z_i - mu)` with `w = softmax(r / alpha)`.
pub fn soft_control(
    candidates: &[LatentVideo],
    rewards: &[f64],
    mu: &LatentVideo,
    alpha: f64,
) -> Result<ControlEstimate> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig {
            field: "alpha",
            reason: format!("{alpha} must be > 0"),
        });
    }
    if candidates.len() < 2 || candidates.len() != rewards.len() {
        return Err(Error::InvalidConfig {
            field: "n",
            reason: format!("need >= 2 candidates with one reward each, got {} / {}", candidates.len(), rewards.len()),
        });
    }
    let logits: Vec<f64> = rewards
        .iter()
        .map(|r| if r.is_nan() { f64::NEG_INFINITY } else { r / alpha })
        .collect();
    let lse = math::log_sum_exp(&logits);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let weights: Vec<f64> = logits.iter().map(|l| math::exp(l - lse)).collect();
    let mut u = LatentVideo::zeros(mu.frames(), mu.dims());
    for (z, &w) in candidates.iter().zip(&weights) {
        mu.ensure_same_shape(z)?;
        if w == 0.0 {
            continue;
        }
        for ((acc, &zi), &m) in u.as_mut_slice().iter_mut().zip(z.as_slice()).zip(mu.as_slice()) {
            *acc += w * (zi - m);
        }
    }
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    Ok(ControlEstimate {
        u,
        weights,
        ess: ess.clamp(1.0, candidates.len() as f64),
    })
}

/// One DDIM step with the score shifted by `weight * grad log p(c | z_t)`:
/// `eps' = eps - sqrt(1 - abar_t) * weight * grad`.
#[allow(clippy::too_many_arguments)]
pub fn classifier_guided_step(
    z_t: &LatentVideo,
    t: usize,
    weight: f64,
    spec: &ScoreModelSpec,
    cond: &Condition,
    sched: &NoiseSchedule,
    base_eps: &LatentVideo,
    noise: &LatentVideo,
) -> Result<LatentVideo> {
    let grad = grad_log_likelihood(spec, z_t, t, cond, sched)?;
    let eps = if weight == 0.0 {
        base_eps.clone()
    } else {
        let k = sqrt(1.0 - sched.alphabar(t)) * weight;
        base_eps.lincomb(1.0, &grad, -k)?
    };
    Ok(ddim_step(z_t, &eps, t, sched, noise)?.0)
}

struct Candidate {
    z: LatentVideo,
    eps: Option<LatentVideo>,
    scores: Vec<core::result::Result<f64, RewardError>>,
}

/// Everything a run needs, borrowed.
pub struct Sampler<'a, E: Executor = Sequential> {
    pub spec: &'a ScoreModelSpec,
    pub cond: &'a Condition,
    pub sched: &'a NoiseSchedule,
    pub decoder: &'a DecoderSpec,
    pub rewards: &'a [&'a dyn Reward],
    pub cfg: &'a GuidanceConfig,
    pub run_id: &'a str,
    pub executor: E,
    pub clock: Option<&'a dyn Clock>,
}

/// Result of a guided step.
pub struct GuidedStep {
    pub z_prev: LatentVideo,
    /// Noise prediction at the selected candidate, reusable at `t - 1`.
    pub eps_prev: Option<LatentVideo>,
    pub log: StepLog,
}

/// Result of [`Sampler::best_of_n`].
#[derive(Debug, Clone, PartialEq)]
pub struct BestOfN {
    pub record: RunRecord,
    pub path_scores: Vec<f64>,
    pub selected: usize,
}

impl<'a> Sampler<'a, Sequential> {
    pub fn new(
        spec: &'a ScoreModelSpec,
        cond: &'a Condition,
        sched: &'a NoiseSchedule,
        decoder: &'a DecoderSpec,
        rewards: &'a [&'a dyn Reward],
        cfg: &'a GuidanceConfig,
    ) -> Self {
        Sampler {
            spec,
            cond,
            sched,
            decoder,
            rewards,
            cfg,
            run_id: "run",
            executor: Sequential,
            clock: None,
        }
    }
}

impl<'a, E: Executor> Sampler<'a, E> {
    pub fn with_executor<E2: Executor>(self, executor: E2) -> Sampler<'a, E2> {
        Sampler {
            spec: self.spec,
            cond: self.cond,
            sched: self.sched,
            decoder: self.decoder,
            rewards: self.rewards,
            cfg: self.cfg,
            run_id: self.run_id,
            executor,
            clock: self.clock,
        }
    }

    pub fn denoiser(&self) -> Result<Denoiser<'a>> {
        Denoiser::new(self.spec, self.cond, self.cfg.cfg_w)
    }

    fn now(&self) -> Option<Duration> {
        self.clock.map(|c| c.now())
    }

    /// Full reverse chain from `z_T ~ N(0, I)` drawn with `cfg.seed`.
    pub fn run(&self) -> Result<RunRecord> {
        self.run_with(self.cfg.seed, &self.cfg.window)
    }

    /// The same chain with guidance disabled.
    pub fn run_unguided(&self) -> Result<RunRecord> {
        self.run_with(self.cfg.seed, &GuidanceWindow::none(self.sched.steps()))
    }

    fn run_with(&self, seed: u64, window: &GuidanceWindow) -> Result<RunRecord> {
        self.cfg.validate(self.sched, self.rewards.len(), self.spec.frames())?;
        self.decoder.validate(self.spec.dims())?;
        let den = self.denoiser()?;
        let streams = NoiseStreams::new(seed);
        let (frames, dims) = (self.spec.frames(), self.spec.dims());
        let mut z = streams.normal(StreamKey::Init, frames, dims);
        let mut cached: Option<LatentVideo> = None;
        let mut steps = Vec::with_capacity(self.sched.steps());
        let mut total_nfe = 0;

        for t in (1..=self.sched.steps()).rev() {
            let started = self.now();
            let mut nfe = 0;
            let eps_t = match cached.take() {
                Some(e) => e,
                None => {
                    nfe += 1;
                    den.eps(&z, t, self.sched)?
                }
            };
            let mut log = if !window.contains(t) {
                let noise = streams.normal(StreamKey::Step { t, candidate: 0 }, frames, dims);
                z = ddim_step(&z, &eps_t, t, self.sched, &noise)?.0;
                StepLog::plain(t, StepKind::Plain, 0)
            } else {
                match self.cfg.mode {
                    GuidanceMode::Select => {
                        let g = self.guided_step(&streams, &den, &z, &eps_t, t)?;
                        z = g.z_prev;
                        cached = g.eps_prev;
                        g.log
                    }
                    GuidanceMode::Soft { alpha } => {
                        let (z_prev, log) = self.soft_step(&streams, &den, &z, &eps_t, t, alpha)?;
                        z = z_prev;
                        log
                    }
                    GuidanceMode::Classifier { weight } => {
                        let noise = streams.normal(StreamKey::Step { t, candidate: 0 }, frames, dims);
                        z = classifier_guided_step(&z, t, weight, self.spec, self.cond, self.sched, &eps_t, &noise)?;
                        StepLog::plain(t, StepKind::Classifier, 0)
                    }
                }
            };
            log.nfe += nfe;
            total_nfe += log.nfe;
            log.wall = match (started, self.now()) {
                (Some(a), Some(b)) => Some(b.saturating_sub(a)),
                _ => None,
            };
            steps.push(log);
        }

        let out = decode(&z, self.decoder)?;
        let ctx = self.context(0, 0);
        let final_rewards = self
            .rewards
            .iter()
            .map(|r| r.score(&out, self.cond, &ctx).map(|s| s.value))
            .collect::<core::result::Result<Vec<_>, _>>()?;
        Ok(RunRecord {
            seed,
            steps,
            z0: z,
            frames: out,
            final_rewards,
            total_nfe,
        })
    }

    fn context(&self, t: usize, index: usize) -> ScoreContext<'_> {
        ScoreContext {
            run_id: self.run_id,
            candidate_id: candidate_id(t, index),
            t,
            key_frames: &self.cfg.key_frames,
        }
    }

    /// Draws candidate `i` at step `t`, denoises it to `z_{0|t-1}` and scores it.
    fn candidate(
        &self,
        streams: &NoiseStreams,
        den: &Denoiser<'_>,
        mean: &crate::schedule::StepMean,
        t: usize,
        i: usize,
    ) -> Result<Candidate> {
        let noise = streams.normal(StreamKey::Step { t, candidate: i }, self.spec.frames(), self.spec.dims());
        let z = mean.perturb(&noise)?;
        let (eps, z0) = if t >= 2 {
            let e = den.eps(&z, t - 1, self.sched)?;
            let z0 = denoise(&z, &e, t - 1, self.sched)?;
            (Some(e), z0)
        } else {
            (None, z.clone())
        };
        let frames = decode(&z0, self.decoder)?;
        let ctx = self.context(t, i);
        let scores = self
            .rewards
            .iter()
            .map(|r| r.score(&frames, self.cond, &ctx).map(|s| s.value))
            .collect();
        Ok(Candidate { z, eps, scores })
    }

    /// Branches, scores every candidate and combines rewards. Returns the
    /// candidates, the surviving indices and their combined scores.
    #[allow(clippy::type_complexity)]
    fn branch_and_score(
        &self,
        streams: &NoiseStreams,
        den: &Denoiser<'_>,
        z_t: &LatentVideo,
        eps_t: &LatentVideo,
        t: usize,
        kind: StepKind,
    ) -> Result<(crate::schedule::StepMean, Vec<Candidate>, Vec<usize>, Vec<f64>, StepLog)> {
        let n = self.cfg.n;
        let mean = ddim_mean(z_t, eps_t, t, self.sched)?;
        if self.sched.eta() == 0.0 && n > 1 {
            return Err(Error::InvalidConfig {
                field: "eta",
                reason: format!("eta = 0: all {n} branches would coincide"),
            });
        }
        let candidates = self
            .executor
            .map(n, |i| self.candidate(streams, den, &mean, t, i))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let mut failures = Vec::new();
        let mut alive = Vec::with_capacity(n);
        for (i, c) in candidates.iter().enumerate() {
            let mut ok = true;
            for s in &c.scores {
                if let Err(e) = s {
                    if self.cfg.on_reward_failure == FailurePolicy::Abort || !e.is_remote() {
                        return Err(Error::Reward(e.clone()));
                    }
                    failures.push(format!("{e}"));
                    ok = false;
                }
            }
            if ok {
                alive.push(i);
            }
        }
        if alive.is_empty() {
            return Err(Error::AllCandidatesDropped { t });
        }
        let rows: Vec<Vec<f64>> = (0..self.rewards.len())
            .map(|r| alive.iter().map(|&i| *candidates[i].scores[r].as_ref().unwrap()).collect())
            .collect();
        let combined = self.cfg.ensemble.combine(&CandidateScores::new(rows)?)?;

        let mut combined_full = vec![None; n];
        for (k, &i) in alive.iter().enumerate() {
            combined_full[i] = Some(combined[k]);
        }
        let raw = (0..self.rewards.len())
            .map(|r| candidates.iter().map(|c| c.scores[r].as_ref().ok().copied()).collect())
            .collect();
        let extra = if t >= 2 { n } else { 0 };
        let log = StepLog {
            raw,
            combined: combined_full,
            failures,
            ..StepLog::plain(t, kind, extra)
        };
        Ok((mean, candidates, alive, combined, log))
    }

    /// Select-mode step: argmax of the combined reward over `n` branches.
    pub fn guided_step(
        &self,
        streams: &NoiseStreams,
        den: &Denoiser<'_>,
        z_t: &LatentVideo,
        eps_t: &LatentVideo,
        t: usize,
    ) -> Result<GuidedStep> {
        let (_, mut candidates, alive, combined, mut log) =
            self.branch_and_score(streams, den, z_t, eps_t, t, StepKind::Select)?;
        let j = alive[ensemble::select(&combined)?];
        log.selected = Some(j);
        let chosen = candidates.swap_remove(j);
        Ok(GuidedStep {
            z_prev: chosen.z,
            eps_prev: chosen.eps,
            log,
        })
    }

    fn soft_step(
        &self,
        streams: &NoiseStreams,
        den: &Denoiser<'_>,
        z_t: &LatentVideo,
        eps_t: &LatentVideo,
        t: usize,
        alpha: f64,
    ) -> Result<(LatentVideo, StepLog)> {
        let (mean, candidates, alive, combined, mut log) =
            self.branch_and_score(streams, den, z_t, eps_t, t, StepKind::Soft)?;
        let zs: Vec<LatentVideo> = alive.iter().map(|&i| candidates[i].z.clone()).collect();
        let control = if zs.len() >= 2 {
            soft_control(&zs, &combined, &mean.mean, alpha)?
        } else {
            ControlEstimate {
                u: zs[0].lincomb(1.0, &mean.mean, -1.0)?,
                weights: vec![1.0],
                ess: 1.0,
            }
        };
        let noise = streams.normal(StreamKey::Soft { t }, self.spec.frames(), self.spec.dims());
        let shifted = mean.mean.lincomb(1.0, &control.u, 1.0)?;
        let z_prev = shifted.lincomb(1.0, &noise, mean.sigma)?;
        log.ess = Some(control.ess);
        Ok((z_prev, log))
    }

    /// `paths` independent unguided runs; returns the one whose final
    /// output scores best under the ensemble. Path 0 uses `cfg.seed`.
    pub fn best_of_n(&self, paths: usize) -> Result<BestOfN> {
        if paths == 0 {
            return Err(Error::InvalidConfig {
                field: "paths",
                reason: "best-of-N needs N >= 1".into(),
            });
        }
        let none = GuidanceWindow::none(self.sched.steps());
        let records = (0..paths)
            .map(|p| {
                let seed = if p == 0 { self.cfg.seed } else { derive_seed(self.cfg.seed, p as u64) };
                self.run_with(seed, &none)
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = (0..self.rewards.len())
            .map(|r| records.iter().map(|rec| rec.final_rewards[r]).collect())
            .collect();
        let path_scores = self.cfg.ensemble.combine(&CandidateScores::new(rows)?)?;
        let selected = ensemble::select(&path_scores)?;
        let total: usize = records.iter().map(|r| r.total_nfe).sum();
        let mut record = records.into_iter().nth(selected).expect("selected index in range");
        record.total_nfe = total;
        Ok(BestOfN {
            record,
            path_scores,
            selected,
        })
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Rewards of `m` unguided rollouts from `z_t` at step `t`. Rollout `p`
/// draws all of its noise from stream `Rollout { path: p }` of `seed`, so
/// two calls with the same seed use common random numbers.
pub fn rollout_rewards(
    z_t: &LatentVideo,
    t: usize,
    m: usize,
    den: &Denoiser<'_>,
    sched: &NoiseSchedule,
    reward: &dyn Fn(&LatentVideo) -> f64,
    seed: u64,
) -> Result<Vec<f64>> {
    sched.check_t(t, 0)?;
    let streams = NoiseStreams::new(seed);
    (0..m)
        .map(|p| {
            let mut rng = streams.rng(StreamKey::Rollout { path: p });
            let mut z = z_t.clone();
            for tau in (1..=t).rev() {
                let eps = den.eps(&z, tau, sched)?;
                let noise = fill_normal(&mut rng, z.frames(), z.dims());
                z = ddim_step(&z, &eps, tau, sched, &noise)?.0;
            }
            Ok(reward(&z))
        })
        .collect()
}

/// `alpha * ln(mean(exp(r / alpha)))`, log-sum-exp stabilized, with a
/// delta-method standard error.
pub fn soft_value(rewards: &[f64], alpha: f64) -> ValueEstimate {
    let m = rewards.len() as f64;
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = rewards.iter().map(|r| math::exp((r - max) / alpha)).collect();
    let mean = w.iter().sum::<f64>() / m;
    let value = max + alpha * math::ln(mean);
    let var = if rewards.len() > 1 {
        w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    ValueEstimate {
        value,
        std_error: alpha * sqrt(var / m) / mean,
    }
}

/// Value function `v(z_t) = alpha ln E[exp(r(z_0) / alpha) | z_t]` over `m`
/// unguided rollouts.
#[allow(clippy::too_many_arguments)]
pub fn value_mc(
    z_t: &LatentVideo,
    t: usize,
    alpha: f64,
    m: usize,
    den: &Denoiser<'_>,
    sched: &NoiseSchedule,
    reward: &dyn Fn(&LatentVideo) -> f64,
    seed: u64,
) -> Result<ValueEstimate> {
    if m == 0 || !(alpha > 0.0) {
        return Err(Error::InvalidConfig {
            field: "value_mc",
            reason: format!("need m >= 1 and alpha > 0 (m = {m}, alpha = {alpha})"),
        });
    }
    let r = rollout_rewards(z_t, t, m, den, sched, reward, seed)?;
    Ok(soft_value(&r, alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbEstimate {
    /// `sigma_t^2 grad v / alpha`, as a displacement (see [`ControlEstimate`]).
    pub control: LatentVideo,
    /// Per-coordinate standard error of `control`.
    pub std_error: LatentVideo,
}

/// Central finite differences of [`value_mc`] with common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn hjb_control_oracle(
    z_t: &LatentVideo,
    t: usize,
    alpha: f64,
    m: usize,
    h: f64,
    den: &Denoiser<'_>,
    sched: &NoiseSchedule,
    reward: &dyn Fn(&LatentVideo) -> f64,
    seed: u64,
) -> Result<HjbEstimate> {
    if !(h > 0.0) || m < 2 || !(alpha > 0.0) {
        return Err(Error::InvalidConfig {
            field: "hjb",
            reason: format!("need h > 0, m >= 2, alpha > 0 (h = {h}, m = {m}, alpha = {alpha})"),
        });
    }
    let sigma = sched.sigma(t)?;
    let k = sigma * sigma / alpha;
    let mut control = LatentVideo::zeros(z_t.frames(), z_t.dims());
    let mut std_error = control.clone();
    for j in 0..z_t.len() {
        let mut zp = z_t.clone();
        zp.as_mut_slice()[j] += h;
        let mut zm = z_t.clone();
        zm.as_mut_slice()[j] -= h;
        let rp = rollout_rewards(&zp, t, m, den, sched, reward, seed)?;
        let rm = rollout_rewards(&zm, t, m, den, sched, reward, seed)?;
        let (vp, vm) = (soft_value(&rp, alpha), soft_value(&rm, alpha));
        control.as_mut_slice()[j] = k * (vp.value - vm.value) / (2.0 * h);

        // paired influence functions of alpha ln mean(w)
        let influence = |r: &[f64]| -> Vec<f64> {
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = r.iter().map(|x| math::exp((x - max) / alpha)).collect();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            w.iter().map(|x| alpha * (x / mean - 1.0)).collect()
        };
        let d: Vec<f64> = influence(&rp)
            .iter()
            .zip(influence(&rm))
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let md = d.iter().sum::<f64>() / m as f64;
        let var = d.iter().map(|x| (x - md) * (x - md)).sum::<f64>() / (m as f64 - 1.0);
        std_error.as_mut_slice()[j] = k * sqrt(var / m as f64);
    }
    Ok(HjbEstimate { control, std_error })
}
