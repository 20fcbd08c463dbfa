//! Experiment configuration (JSON, schema version 1).

use std::path::{Path, PathBuf};

use gfguide_core::ensemble::EnsembleSpec;
use gfguide_core::guidance::{FailurePolicy, GuidanceConfig, GuidanceMode, WindowSpec};
use gfguide_core::models::{DecoderSpec, GuidanceScale};
use gfguide_core::rewards::{
    Calibration, DegradationReward, FrameScorer, FramewiseReward, KeyFrameSet, Quantized, Quantizer, QuantizerConfig,
    Reward, SequenceScorer, StitchedReward,
};
use gfguide_core::schedule::{build_schedule, NoiseSchedule, ScheduleKind};
use gfguide_core::LatentVideo;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::remote::{RemoteReward, RemoteSpec};
use crate::scenario::{Scenario, ScenarioSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the output directory.
pub const ENV_OUT: &str = "GFGUIDE_OUT";
/// Overrides the endpoint of every remote reward.
pub const ENV_ENDPOINT: &str = "GFGUIDE_REMOTE_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardKind {
    Framewise { scorer: FrameScorer },
    Stitched { scorer: SequenceScorer },
    Remote(RemoteSpec),
    /// Distance to the pooled observation of an inverse problem.
    Degradation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    #[serde(flatten)]
    pub kind: RewardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantize: Option<QuantizerConfig>,
}

impl RewardSpec {
    pub fn framewise(scorer: FrameScorer) -> Self {
        RewardSpec {
            kind: RewardKind::Framewise { scorer },
            quantize: None,
        }
    }

    pub fn degradation() -> Self {
        RewardSpec {
            kind: RewardKind::Degradation,
            quantize: None,
        }
    }
}

/// A live reward plus what is needed to build it again.
pub type BoxedReward = Box<dyn Reward + Send>;

impl RewardSpec {
    /// `observation` is required for degradation rewards.
    pub fn build(&self, observation: Option<(&LatentVideo, usize)>) -> Result<BoxedReward, HarnessError> {
        let base: BoxedReward = match &self.kind {
            RewardKind::Framewise { scorer } => Box::new(FramewiseReward(scorer.clone())),
            RewardKind::Stitched { scorer } => Box::new(StitchedReward(scorer.clone())),
            RewardKind::Remote(spec) => Box::new(RemoteReward::new(spec.clone())),
            RewardKind::Degradation => {
                let (obs, pool) = observation.ok_or_else(|| {
                    HarnessError::config("rewards", "a degradation reward needs an `inverse` section")
                })?;
                Box::new(DegradationReward {
                    observation: obs.clone(),
                    pool,
                })
            }
        };
        Ok(match &self.quantize {
            None => base,
            Some(q) => Box::new(Quantized {
                inner: base,
                quantizer: Quantizer::try_from(q.clone()).map_err(|e| HarnessError::config("quantize", e))?,
            }),
        })
    }

    /// Points every remote reward at `endpoint`.
    pub fn set_endpoint(&mut self, endpoint: &str) {
        if let RewardKind::Remote(spec) = &mut self.kind {
            spec.endpoint = endpoint.to_string();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Select,
    Soft,
}

fn d_n() -> usize {
    5
}
fn d_window() -> WindowSpec {
    WindowSpec::Offsets { start: 0, end: 5 }
}
fn d_cfg_w() -> GuidanceScale {
    GuidanceScale::new(1.0).unwrap()
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSection {
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_window")]
    pub window: WindowSpec,
    #[serde(default)]
    pub mode: ModeName,
    /// Soft-mode temperature; must stay 0 in select mode.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    /// Defaults to 4 evenly spaced frames including the first and last.
    #[serde(default)]
    pub key_frames: Option<KeyFrameSet>,
    #[serde(default = "d_cfg_w")]
    pub cfg_w: GuidanceScale,
    #[serde(default)]
    pub on_reward_failure: FailurePolicy,
    /// Threads evaluating the candidates of one step.
    #[serde(default = "one")]
    pub candidate_jobs: usize,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Comparator {
    Baseline {
        #[serde(default)]
        label: Option<String>,
    },
    Guided {
        #[serde(default)]
        label: Option<String>,
    },
    BestOfN {
        paths: usize,
        #[serde(default)]
        label: Option<String>,
    },
    Classifier {
        weight: f64,
        #[serde(default)]
        label: Option<String>,
    },
}

impl Comparator {
    pub fn label(&self) -> String {
        match self {
            Comparator::Baseline { label } => label.clone().unwrap_or_else(|| "baseline".into()),
            Comparator::Guided { label } => label.clone().unwrap_or_else(|| "guided".into()),
            Comparator::BestOfN { paths, label } => label.clone().unwrap_or_else(|| format!("best-of-{paths}")),
            Comparator::Classifier { weight, label } => label.clone().unwrap_or_else(|| format!("classifier-w{weight}")),
        }
    }
}

fn d_comparators() -> Vec<Comparator> {
    vec![Comparator::Baseline { label: None }, Comparator::Guided { label: None }]
}
fn d_ablate_n() -> Vec<usize> {
    vec![1, 3, 5, 10]
}
fn d_ablate_window() -> Vec<WindowSpec> {
    vec![
        WindowSpec::None,
        WindowSpec::Offsets { start: 0, end: 5 },
        WindowSpec::Offsets { start: 5, end: 10 },
        WindowSpec::Offsets { start: 0, end: 10 },
    ]
}
fn d_ablate_beta() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    #[serde(default = "d_ablate_n")]
    pub n: Vec<usize>,
    #[serde(default = "d_ablate_window")]
    pub window: Vec<WindowSpec>,
    /// Quantized scoring policies; defaults to the 1-9 rating and the 0/1
    /// answer, both calibrated to the scenario's reward range.
    #[serde(default)]
    pub policy: Option<Vec<QuantizerConfig>>,
    #[serde(default = "d_ablate_beta")]
    pub beta: Vec<f64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundTruth {
    /// One prior sample per replication, seeded from `seed` and the
    /// replication index.
    PriorSample { seed: u64 },
    /// The same fixed `F x D` truth for every replication.
    Frames(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseSection {
    pub pool: usize,
    pub ground_truth: GroundTruth,
    /// Std of Gaussian noise added to the pooled observation.
    #[serde(default)]
    pub observation_noise: f64,
}

fn d_steps() -> usize {
    50
}
fn d_eta() -> f64 {
    1.0
}
fn d_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "d_name")]
    pub name: String,
    pub scenario: ScenarioSpec,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub guidance: GuidanceSection,
    /// Defaults to the scenario's reward.
    #[serde(default)]
    pub rewards: Option<Vec<RewardSpec>>,
    #[serde(default = "d_comparators")]
    pub comparators: Vec<Comparator>,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub inverse: Option<InverseSection>,
    #[serde(default)]
    pub decoder: DecoderSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::config(
                "schema_version",
                format!("{} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, HarnessError> {
        self.schedule_with_steps(self.steps)
    }

    pub fn schedule_with_steps(&self, steps: usize) -> Result<NoiseSchedule, HarnessError> {
        build_schedule(&self.schedule, steps, self.eta).map_err(|e| HarnessError::config("schedule", e))
    }

    pub fn scenario(&self) -> Result<Scenario, HarnessError> {
        Scenario::build(&self.scenario).map_err(|e| HarnessError::config("scenario", e))
    }

    pub fn reward_specs(&self, scenario: &Scenario) -> Result<Vec<RewardSpec>, HarnessError> {
        let specs = self.rewards.clone().unwrap_or_else(|| scenario.default_rewards.clone());
        if specs.is_empty() || specs.len() > 2 {
            return Err(HarnessError::config(
                "rewards",
                format!("need 1 or 2 rewards, got {} (the scenario has no default)", specs.len()),
            ));
        }
        Ok(specs)
    }

    /// Guidance settings resolved against `steps`.
    pub fn guidance(&self, steps: usize, seed: u64, frames: usize) -> Result<GuidanceConfig, HarnessError> {
        let g = &self.guidance;
        let mode = match g.mode {
            ModeName::Select if g.alpha != 0.0 => {
                return Err(HarnessError::config(
                    "alpha",
                    "select mode is the alpha -> 0 limit; use mode \"soft\" for alpha > 0",
                ))
            }
            ModeName::Select => GuidanceMode::Select,
            ModeName::Soft => GuidanceMode::Soft { alpha: g.alpha },
        };
        let key_frames = match &g.key_frames {
            Some(k) => k.clone(),
            None => KeyFrameSet::default_for(frames).map_err(|e| HarnessError::config("key_frames", e))?,
        };
        Ok(GuidanceConfig {
            n: g.n,
            window: g.window.resolve(steps).map_err(|e| HarnessError::config("window", e))?,
            mode,
            ensemble: g.ensemble,
            key_frames,
            cfg_w: g.cfg_w,
            seed,
            on_reward_failure: g.on_reward_failure,
        })
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replications == 0 {
            return Err(HarnessError::config("replications", "must be at least 1"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(HarnessError::config("eta", format!("{} must be finite and >= 0", self.eta)));
        }
        if self.comparators.is_empty() {
            return Err(HarnessError::config("comparators", "at least one comparator is required"));
        }
        let mut labels: Vec<String> = self.comparators.iter().map(Comparator::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::config("comparators", "labels must be unique"));
        }
        for c in &self.comparators {
            match c {
                Comparator::BestOfN { paths: 0, .. } => {
                    return Err(HarnessError::config("paths", "best-of-n needs paths >= 1"))
                }
                Comparator::Classifier { weight, .. } if !(*weight >= 0.0 && weight.is_finite()) => {
                    return Err(HarnessError::config("weight", format!("{weight} must be finite and >= 0")))
                }
                _ => {}
            }
        }
        let sched = self.schedule()?;
        let scenario = self.scenario()?;
        let rewards = self.reward_specs(&scenario)?;
        let g = self.guidance(self.steps, self.seed, scenario.spec.frames())?;
        g.validate(&sched, rewards.len(), scenario.spec.frames())
            .map_err(HarnessError::from_core_config)?;
        if g.n > 1 && self.eta == 0.0 && !g.window.is_empty() {
            return Err(HarnessError::config("eta", "eta = 0 makes all branches coincide"));
        }
        self.decoder
            .validate(scenario.spec.dims())
            .map_err(|e| HarnessError::config("decoder", e))?;
        if let Some(inv) = &self.inverse {
            if inv.pool == 0 {
                return Err(HarnessError::config("pool", "must be positive"));
            }
            if !(inv.observation_noise >= 0.0) {
                return Err(HarnessError::config("observation_noise", "must be >= 0"));
            }
        }
        for q in self.ablation.policy.iter().flatten() {
            Quantizer::try_from(q.clone()).map_err(|e| HarnessError::config("policy", e))?;
        }
        for &b in &self.ablation.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(HarnessError::config("beta", format!("{b} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Default quantized policies mapped onto the scenario's reward range.
    pub fn policies(&self, scenario: &Scenario) -> Vec<QuantizerConfig> {
        if let Some(p) = &self.ablation.policy {
            return p.clone();
        }
        let (r_lo, r_hi) = scenario.reward_range;
        [(1, 9), (0, 1)]
            .into_iter()
            .map(|(lo, hi)| {
                let scale = (hi - lo) as f64 / (r_hi - r_lo);
                QuantizerConfig {
                    lo,
                    hi,
                    calib: Calibration::Affine {
                        scale,
                        offset: lo as f64 - scale * r_lo,
                    },
                }
            })
            .collect()
    }
}
