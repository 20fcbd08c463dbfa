//! Built-in toy worlds: a score model, the condition to sample under and the
//! reward(s) that make sense for it.

use std::collections::BTreeMap;

use gfguide_core::models::{ComponentConfig, Condition, Mixture, ModelConfig, ScoreModelSpec};
use gfguide_core::rewards::FrameScorer;
use gfguide_core::rng::{fill_normal, NoiseStreams, StreamKey};
use gfguide_core::{LatentVideo, Result};
use serde::{Deserialize, Serialize};

use crate::config::RewardSpec;

fn d_frames() -> usize {
    8
}
fn d_dims() -> usize {
    4
}
fn d_offset() -> f64 {
    1.0
}
fn d_variance() -> f64 {
    0.25
}
fn d_minor() -> f64 {
    0.2
}
fn d_inv_frames() -> usize {
    4
}
fn d_inv_dims() -> usize {
    8
}
fn d_components() -> usize {
    8
}
fn d_spread() -> f64 {
    1.5
}
fn d_inv_variance() -> f64 {
    0.05
}
fn d_small_frames() -> usize {
    4
}
fn d_small_dims() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// Two isotropic modes at `-offset` (weight `1 - minor_weight`) and
    /// `+offset` (weight `minor_weight`) in every coordinate. The default
    /// reward is the negative distance of each key frame to the minor mode.
    GmmMinorMode {
        #[serde(default = "d_frames")]
        frames: usize,
        #[serde(default = "d_dims")]
        dims: usize,
        #[serde(default = "d_offset")]
        offset: f64,
        #[serde(default = "d_variance")]
        variance: f64,
        #[serde(default = "d_minor")]
        minor_weight: f64,
    },
    /// Standard normal data; reward pulls towards `target` (all ones by
    /// default).
    SingleGaussian {
        #[serde(default = "d_small_frames")]
        frames: usize,
        #[serde(default = "d_small_dims")]
        dims: usize,
        #[serde(default)]
        target: Option<Vec<f64>>,
    },
    /// Equal-weight mixture of `components` tight clusters with
    /// `N(0, spread^2)` means drawn from `seed`; the prior for inverse
    /// problems.
    InverseGmm {
        #[serde(default = "d_inv_frames")]
        frames: usize,
        #[serde(default = "d_inv_dims")]
        dims: usize,
        #[serde(default = "d_components")]
        components: usize,
        #[serde(default = "d_spread")]
        spread: f64,
        #[serde(default = "d_inv_variance")]
        variance: f64,
        #[serde(default)]
        seed: u64,
    },
    Custom {
        model: ModelConfig,
        condition: String,
        #[serde(default)]
        prompt: Option<String>,
        #[serde(default)]
        target: Option<Vec<f64>>,
        #[serde(default)]
        classifier_condition: Option<String>,
    },
}

impl ScenarioSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioSpec::GmmMinorMode { .. } => "gmm-minor-mode",
            ScenarioSpec::SingleGaussian { .. } => "single-gaussian",
            ScenarioSpec::InverseGmm { .. } => "inverse-gmm",
            ScenarioSpec::Custom { .. } => "custom",
        }
    }
}

/// Nearest-mean classifier over `means`; a hit is landing on `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeProbe {
    pub means: Vec<LatentVideo>,
    pub target: usize,
}

impl ModeProbe {
    pub fn nearest(&self, z: &LatentVideo) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, m) in self.means.iter().enumerate() {
            let d = z.sq_dist(m).unwrap_or(f64::INFINITY);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn hit(&self, z: &LatentVideo) -> bool {
        self.nearest(z) == self.target
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub spec: ScoreModelSpec,
    pub condition: Condition,
    /// Class used by the classifier-guidance comparator.
    pub classifier_condition: Option<Condition>,
    pub default_rewards: Vec<RewardSpec>,
    pub probe: Option<ModeProbe>,
    /// Typical span of the first default reward, used to calibrate
    /// quantized scoring policies.
    pub reward_range: (f64, f64),
}

fn isotropic(weight: f64, mean: f64, variance: f64, dims: usize) -> ComponentConfig {
    ComponentConfig {
        weight,
        mean: vec![mean; dims],
        variance,
    }
}

fn invalid(what: String) -> gfguide_core::Error {
    gfguide_core::Error::InvalidModel(what)
}

impl Scenario {
    pub fn build(spec: &ScenarioSpec) -> Result<Self> {
        match spec {
            &ScenarioSpec::GmmMinorMode {
                frames,
                dims,
                offset,
                variance,
                minor_weight,
            } => {
                if !(minor_weight > 0.0 && minor_weight < 1.0) || !(offset > 0.0) {
                    return Err(invalid(format!(
                        "gmm-minor-mode needs 0 < minor_weight < 1 and offset > 0 (got {minor_weight}, {offset})"
                    )));
                }
                let major = isotropic(1.0 - minor_weight, -offset, variance, dims);
                let minor = isotropic(minor_weight, offset, variance, dims);
                let mut conditions = BTreeMap::new();
                conditions.insert("mixture".to_string(), vec![major.clone(), minor.clone()]);
                conditions.insert("minor".to_string(), vec![ComponentConfig { weight: 1.0, ..minor.clone() }]);
                conditions.insert("major".to_string(), vec![ComponentConfig { weight: 1.0, ..major.clone() }]);
                let model = ModelConfig {
                    frames,
                    dims,
                    conditions,
                    unconditional: Some(vec![major, minor]),
                    temporal_rho: 0.0,
                };
                let spec = ScoreModelSpec::from_config(&model)?;
                let keys = gfguide_core::rewards::KeyFrameSet::default_for(frames)?.len() as f64;
                let per_frame = 2.0 * offset * (dims as f64).sqrt();
                Ok(Scenario {
                    name: "gmm-minor-mode",
                    spec,
                    condition: Condition::new("mixture").with_prompt("a sample from the rare mode"),
                    classifier_condition: Some(Condition::new("minor")),
                    default_rewards: vec![RewardSpec::framewise(FrameScorer::NegDistance {
                        target: Some(vec![offset; dims]),
                    })],
                    probe: Some(ModeProbe {
                        means: vec![LatentVideo::filled(frames, dims, -offset), LatentVideo::filled(frames, dims, offset)],
                        target: 1,
                    }),
                    reward_range: (-keys * per_frame * 1.5, 0.0),
                })
            }
            ScenarioSpec::SingleGaussian { frames, dims, target } => {
                let (f, d) = (*frames, *dims);
                let target = target.clone().unwrap_or_else(|| vec![1.0; d]);
                let model = ModelConfig {
                    frames: f,
                    dims: d,
                    conditions: BTreeMap::from([("c".to_string(), vec![isotropic(1.0, 0.0, 1.0, d)])]),
                    unconditional: None,
                    temporal_rho: 0.0,
                };
                let keys = gfguide_core::rewards::KeyFrameSet::default_for(f)?.len() as f64;
                Ok(Scenario {
                    name: "single-gaussian",
                    spec: ScoreModelSpec::from_config(&model)?,
                    condition: Condition::new("c").with_target(target.clone()),
                    classifier_condition: None,
                    default_rewards: vec![RewardSpec::framewise(FrameScorer::NegSqDistance { target: None })],
                    probe: None,
                    reward_range: (-keys * (d as f64 + target.iter().map(|x| x * x).sum::<f64>()) * 2.0, 0.0),
                })
            }
            &ScenarioSpec::InverseGmm {
                frames,
                dims,
                components,
                spread,
                variance,
                seed,
            } => {
                if components == 0 {
                    return Err(invalid("inverse-gmm needs at least one component".into()));
                }
                let mut rng = NoiseStreams::new(seed).rng(StreamKey::Init);
                let means: Vec<LatentVideo> = (0..components)
                    .map(|_| fill_normal(&mut rng, frames, dims).scaled(spread))
                    .collect();
                let w = 1.0 / components as f64;
                let mixture = Mixture::new(vec![w; components], means.clone(), vec![variance; components])?;
                let spec = ScoreModelSpec::single(mixture)?;
                Ok(Scenario {
                    name: "inverse-gmm",
                    spec,
                    condition: Condition::new("c"),
                    classifier_condition: None,
                    default_rewards: vec![RewardSpec::degradation()],
                    probe: Some(ModeProbe { means, target: 0 }),
                    reward_range: (-((frames * dims) as f64) * spread * spread, 0.0),
                })
            }
            ScenarioSpec::Custom {
                model,
                condition,
                prompt,
                target,
                classifier_condition,
            } => {
                let spec = ScoreModelSpec::from_config(model)?;
                let mut cond = Condition::new(condition.clone());
                spec.mixture(&cond)?;
                if let Some(p) = prompt {
                    cond = cond.with_prompt(p.clone());
                }
                if let Some(t) = target {
                    cond = cond.with_target(t.clone());
                }
                let classifier_condition = match classifier_condition {
                    Some(id) => {
                        let c = Condition::new(id.clone());
                        spec.mixture(&c)?;
                        Some(c)
                    }
                    None => None,
                };
                let default_rewards = if cond.target.is_some() {
                    vec![RewardSpec::framewise(FrameScorer::NegDistance { target: None })]
                } else {
                    Vec::new()
                };
                let span = (model.frames * model.dims) as f64;
                Ok(Scenario {
                    name: "custom",
                    spec,
                    condition: cond,
                    classifier_condition,
                    default_rewards,
                    probe: None,
                    reward_range: (-span, 0.0),
                })
            }
        }
    }

    /// Draws a ground-truth sample from the prior.
    pub fn sample_truth(&self, seed: u64) -> Result<LatentVideo> {
        let mut rng = NoiseStreams::new(seed).rng(StreamKey::Init);
        self.spec.sample_prior(Some(&self.condition), &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minor_mode_probe() {
        let s = Scenario::build(&ScenarioSpec::GmmMinorMode {
            frames: 4,
            dims: 2,
            offset: 1.0,
            variance: 0.1,
            minor_weight: 0.2,
        })
        .unwrap();
        let p = s.probe.unwrap();
        assert!(p.hit(&LatentVideo::filled(4, 2, 0.3)));
        assert!(!p.hit(&LatentVideo::filled(4, 2, -0.3)));
        assert_eq!(s.spec.mixture(&s.condition).unwrap().weights(), &[0.8, 0.2]);
    }

    #[test]
    fn scenario_json_defaults() {
        let s: ScenarioSpec = serde_json::from_str(r#"{"kind": "inverse-gmm", "components": 3}"#).unwrap();
        assert_eq!(
            s,
            ScenarioSpec::InverseGmm {
                frames: 4,
                dims: 8,
                components: 3,
                spread: 1.5,
                variance: 0.05,
                seed: 0
            }
        );
        let built = Scenario::build(&s).unwrap();
        assert_eq!(built.spec.unconditional().components(), 3);
    }

    #[test]
    fn custom_condition_must_exist() {
        let model: ModelConfig = serde_json::from_str(
            r#"{"frames": 2, "dims": 1, "conditions": {"a": [{"weight": 1, "mean": [0], "variance": 1}]}}"#,
        )
        .unwrap();
        let bad = ScenarioSpec::Custom {
            model,
            condition: "b".into(),
            prompt: None,
            target: None,
            classifier_condition: None,
        };
        assert!(Scenario::build(&bad).is_err());
    }
}
