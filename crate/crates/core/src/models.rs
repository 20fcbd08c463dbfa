//! Closed-form score models.
//!
//! Each condition owns a Gaussian mixture over the full `F x D` latent.
//! Component `i` has mean `mu_i` and covariance `s_i^2 (K_rho (x) I_D)`,
//! where `K_rho` is the AR(1) frame correlation `rho^|f - g|` (identity when
//! `rho = 0`). The time-`t` marginal of a component under the forward
//! process is Gaussian with mean `sqrt(abar_t) mu_i` and frame covariance
//! `abar_t s_i^2 K_rho + (1 - abar_t) I`, so the noise prediction
//! `eps = -sqrt(1 - abar_t) grad log p_t(z)` is exact.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::math::{self, sqrt};
use crate::schedule::NoiseSchedule;
use crate::{Error, FrameSequence, LatentVideo, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Condition {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Parameter block for built-in rewards: `D` values (applied to every
    /// frame) or `F * D` values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

impl Condition {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Self::default()
        }
    }

    pub fn with_target(mut self, target: Vec<f64>) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = Some(prompt.into());
        self
    }
}

/// Classifier-free guidance scale `w`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GuidanceScale(f64);

impl GuidanceScale {
    pub const UNCONDITIONAL: Self = Self(0.0);
    pub const CONDITIONAL: Self = Self(1.0);

    pub fn new(w: f64) -> Result<Self> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidConfig {
                field: "cfg_w",
                reason: format!("{w} must be finite and >= 0"),
            });
        }
        Ok(Self(w))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for GuidanceScale {
    type Error = Error;
    fn try_from(w: f64) -> Result<Self> {
        Self::new(w)
    }
}

impl From<GuidanceScale> for f64 {
    fn from(w: GuidanceScale) -> f64 {
        w.0
    }
}

/// Config form of one mixture component. `mean` holds either `D` values
/// (shared by all frames) or `F * D` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub frames: usize,
    pub dims: usize,
    pub conditions: BTreeMap<String, Vec<ComponentConfig>>,
    /// Defaults to an equal-weight mixture over all conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconditional: Option<Vec<ComponentConfig>>,
    #[serde(default)]
    pub temporal_rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<LatentVideo>,
    variances: Vec<f64>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, means: Vec<LatentVideo>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidModel("mixture needs matching, nonempty weights/means/variances".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidModel("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("mixture weights sum to {total}, expected 1")));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidModel("mixture variances must be positive".into()));
        }
        let shape = means[0].shape();
        if means.iter().any(|m| m.shape() != shape) {
            return Err(Error::InvalidModel("mixture means differ in shape".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|&w| math::ln(w)).collect();
        Ok(Self {
            weights,
            log_weights,
            means,
            variances,
        })
    }

    fn from_config(cfg: &[ComponentConfig], frames: usize, dims: usize) -> Result<Self> {
        let means = cfg
            .iter()
            .map(|c| broadcast_mean(&c.mean, frames, dims))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            cfg.iter().map(|c| c.weight).collect(),
            means,
            cfg.iter().map(|c| c.variance).collect(),
        )
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[LatentVideo] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `(log p_t(z), grad_z log p_t(z))` at noise level `abar`.
    fn log_density_and_score(&self, z: &LatentVideo, abar: f64, rho: f64) -> (f64, LatentVideo) {
        let (frames, dims) = z.shape();
        let scale = sqrt(abar);
        let mut log_terms = Vec::with_capacity(self.components());
        let mut solves = Vec::with_capacity(self.components());
        for i in 0..self.components() {
            let cov = FrameCov::new(frames, abar * self.variances[i], 1.0 - abar, rho);
            let diff = z.zip_map(&self.means[i], |x, m| x - scale * m);
            let sol = cov.solve(&diff);
            let quad = math::dot(diff.as_slice(), sol.as_slice());
            let log_norm = (frames * dims) as f64 * math::LN_2PI + dims as f64 * cov.log_det();
            log_terms.push(self.log_weights[i] - 0.5 * (log_norm + quad));
            solves.push(sol);
        }
        let log_p = math::log_sum_exp(&log_terms);
        let mut grad = LatentVideo::zeros(frames, dims);
        for (lt, sol) in log_terms.iter().zip(&solves) {
            let r = math::exp(lt - log_p);
            if r == 0.0 {
                continue;
            }
            for (g, s) in grad.as_mut_slice().iter_mut().zip(sol.as_slice()) {
                *g -= r * s;
            }
        }
        (log_p, grad)
    }

    fn sample(&self, rng: &mut impl Rng, rho: f64) -> LatentVideo {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        let mean = &self.means[pick];
        let (frames, dims) = mean.shape();
        let sd = sqrt(self.variances[pick]);
        let innov = sqrt(1.0 - rho * rho);
        let mut out = LatentVideo::zeros(frames, dims);
        let mut prev = vec![0.0; dims];
        for f in 0..frames {
            for d in 0..dims {
                let e: f64 = rng.sample(StandardNormal);
                let y = if f == 0 { e } else { rho * prev[d] + innov * e };
                prev[d] = y;
                out.as_mut_slice()[f * dims + d] = mean.frame(f)[d] + sd * y;
            }
        }
        out
    }
}

fn broadcast_mean(mean: &[f64], frames: usize, dims: usize) -> Result<LatentVideo> {
    if mean.len() == dims {
        let data = (0..frames).flat_map(|_| mean.iter().copied()).collect();
        LatentVideo::from_vec(frames, dims, data)
    } else if mean.len() == frames * dims {
        LatentVideo::from_vec(frames, dims, mean.to_vec())
    } else {
        Err(Error::InvalidModel(format!(
            "mean has {} values, expected D = {dims} or F*D = {}",
            mean.len(),
            frames * dims
        )))
    }
}

/// Frame covariance `a K_rho + b I` of one component, shared by all `D`
/// columns.
enum FrameCov {
    Isotropic { var: f64, frames: usize },
    Dense { chol: Vec<f64>, frames: usize },
}

impl FrameCov {
    fn new(frames: usize, a: f64, b: f64, rho: f64) -> Self {
        if rho == 0.0 || frames == 1 {
            return FrameCov::Isotropic { var: a + b, frames };
        }
        let mut m = vec![0.0; frames * frames];
        for i in 0..frames {
            for j in 0..frames {
                let lag = i.abs_diff(j) as i32;
                m[i * frames + j] = a * libm::pow(rho, lag as f64) + if i == j { b } else { 0.0 };
            }
        }
        // Cholesky, lower triangle; the matrix is SPD for |rho| < 1.
        for j in 0..frames {
            let mut d = m[j * frames + j];
            for k in 0..j {
                d -= m[j * frames + k] * m[j * frames + k];
            }
            let d = sqrt(d);
            m[j * frames + j] = d;
            for i in j + 1..frames {
                let mut s = m[i * frames + j];
                for k in 0..j {
                    s -= m[i * frames + k] * m[j * frames + k];
                }
                m[i * frames + j] = s / d;
            }
        }
        FrameCov::Dense { chol: m, frames }
    }

    fn log_det(&self) -> f64 {
        match self {
            FrameCov::Isotropic { var, frames } => *frames as f64 * math::ln(*var),
            FrameCov::Dense { chol, frames } => {
                (0..*frames).map(|i| 2.0 * math::ln(chol[i * frames + i])).sum()
            }
        }
    }

    /// Applies the inverse covariance to every column of `x`.
    fn solve(&self, x: &LatentVideo) -> LatentVideo {
        match self {
            FrameCov::Isotropic { var, .. } => x.map(|v| v / var),
            FrameCov::Dense { chol, frames } => {
                let f = *frames;
                let dims = x.dims();
                let mut out = x.clone();
                let data = out.as_mut_slice();
                for d in 0..dims {
                    // forward: L y = x
                    for i in 0..f {
                        let mut s = data[i * dims + d];
                        for k in 0..i {
                            s -= chol[i * f + k] * data[k * dims + d];
                        }
                        data[i * dims + d] = s / chol[i * f + i];
                    }
                    // backward: L^T w = y
                    for i in (0..f).rev() {
                        let mut s = data[i * dims + d];
                        for k in i + 1..f {
                            s -= chol[k * f + i] * data[k * dims + d];
                        }
                        data[i * dims + d] = s / chol[i * f + i];
                    }
                }
                out
            }
        }
    }
}

/// Conditional Gaussian-mixture prior with closed-form scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModelSpec {
    frames: usize,
    dims: usize,
    conditions: BTreeMap<String, Mixture>,
    unconditional: Mixture,
    rho: f64,
}

impl ScoreModelSpec {
    pub fn new(
        frames: usize,
        dims: usize,
        conditions: BTreeMap<String, Mixture>,
        unconditional: Mixture,
        rho: f64,
    ) -> Result<Self> {
        if frames == 0 || dims == 0 {
            return Err(Error::InvalidModel("frames and dims must be positive".into()));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidModel(format!("temporal rho = {rho} outside (-1, 1)")));
        }
        for m in conditions.values().chain(core::iter::once(&unconditional)) {
            if m.means[0].shape() != (frames, dims) {
                return Err(Error::InvalidModel("component mean shape differs from F x D".into()));
            }
        }
        Ok(Self {
            frames,
            dims,
            conditions,
            unconditional,
            rho,
        })
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        let (f, d) = (cfg.frames, cfg.dims);
        if f == 0 || d == 0 {
            return Err(Error::InvalidModel("frames and dims must be positive".into()));
        }
        if cfg.conditions.is_empty() {
            return Err(Error::InvalidModel("at least one condition is required".into()));
        }
        let mut conditions = BTreeMap::new();
        for (id, comps) in &cfg.conditions {
            conditions.insert(id.clone(), Mixture::from_config(comps, f, d)?);
        }
        let unconditional = match &cfg.unconditional {
            Some(comps) => Mixture::from_config(comps, f, d)?,
            None => {
                let share = 1.0 / cfg.conditions.len() as f64;
                let pooled: Vec<ComponentConfig> = cfg
                    .conditions
                    .values()
                    .flat_map(|comps| {
                        comps.iter().map(move |c| ComponentConfig {
                            weight: c.weight * share,
                            ..c.clone()
                        })
                    })
                    .collect();
                Mixture::from_config(&pooled, f, d)?
            }
        };
        Self::new(f, d, conditions, unconditional, cfg.temporal_rho)
    }

    /// Single condition `"c"` whose prior equals the unconditional one.
    pub fn single(mixture: Mixture) -> Result<Self> {
        let (f, d) = mixture.means[0].shape();
        let mut conditions = BTreeMap::new();
        conditions.insert(String::from("c"), mixture.clone());
        Self::new(f, d, conditions, mixture, 0.0)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn temporal_rho(&self) -> f64 {
        self.rho
    }

    pub fn unconditional(&self) -> &Mixture {
        &self.unconditional
    }

    pub fn mixture(&self, cond: &Condition) -> Result<&Mixture> {
        self.conditions
            .get(&cond.id)
            .ok_or_else(|| Error::UnknownCondition(cond.id.clone()))
    }

    fn check_shape(&self, z: &LatentVideo) -> Result<()> {
        if z.shape() != (self.frames, self.dims) {
            return Err(Error::ShapeMismatch {
                expected: (self.frames, self.dims),
                found: z.shape(),
            });
        }
        Ok(())
    }

    /// `log p_t(z | c)`, or the unconditional density for `cond = None`.
    pub fn log_marginal(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: Option<&Condition>,
        sched: &NoiseSchedule,
    ) -> Result<f64> {
        let (lp, _) = self.density(z, t, cond, sched)?;
        Ok(lp)
    }

    /// `grad_z log p_t(z | c)`, or unconditional for `cond = None`.
    pub fn score(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: Option<&Condition>,
        sched: &NoiseSchedule,
    ) -> Result<LatentVideo> {
        let (_, g) = self.density(z, t, cond, sched)?;
        Ok(g)
    }

    fn density(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: Option<&Condition>,
        sched: &NoiseSchedule,
    ) -> Result<(f64, LatentVideo)> {
        sched.check_t(t, 0)?;
        self.check_shape(z)?;
        let mixture = match cond {
            Some(c) => self.mixture(c)?,
            None => &self.unconditional,
        };
        Ok(mixture.log_density_and_score(z, sched.alphabar(t), self.rho))
    }

    /// Draws `z_0` from the prior of `cond` (unconditional for `None`).
    pub fn sample_prior(&self, cond: Option<&Condition>, rng: &mut impl Rng) -> Result<LatentVideo> {
        let mixture = match cond {
            Some(c) => self.mixture(c)?,
            None => &self.unconditional,
        };
        Ok(mixture.sample(rng, self.rho))
    }
}

fn eps_from_score(score: LatentVideo, t: usize, sched: &NoiseSchedule) -> LatentVideo {
    let c = -sqrt(1.0 - sched.alphabar(t));
    score.scaled(c)
}

/// Exact conditional noise prediction `eps(z_t, t, c)`.
pub fn eps_predict(
    spec: &ScoreModelSpec,
    z_t: &LatentVideo,
    t: usize,
    cond: &Condition,
    sched: &NoiseSchedule,
) -> Result<LatentVideo> {
    Ok(eps_from_score(spec.score(z_t, t, Some(cond), sched)?, t, sched))
}

/// Exact unconditional noise prediction.
pub fn eps_predict_unconditional(
    spec: &ScoreModelSpec,
    z_t: &LatentVideo,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentVideo> {
    Ok(eps_from_score(spec.score(z_t, t, None, sched)?, t, sched))
}

/// `eps_u + w (eps_c - eps_u)`.
pub fn cfg_mix(eps_c: &LatentVideo, eps_u: &LatentVideo, w: GuidanceScale) -> Result<LatentVideo> {
    eps_c.ensure_same_shape(eps_u)?;
    let w = w.get();
    Ok(if w == 0.0 {
        eps_u.clone()
    } else if w == 1.0 {
        eps_c.clone()
    } else {
        eps_u.zip_map(eps_c, |u, c| u + w * (c - u))
    })
}

/// `grad log p_t(c | z) = grad log p_t(z | c) - grad log p_t(z)`.
pub fn grad_log_likelihood(
    spec: &ScoreModelSpec,
    z_t: &LatentVideo,
    t: usize,
    cond: &Condition,
    sched: &NoiseSchedule,
) -> Result<LatentVideo> {
    let gc = spec.score(z_t, t, Some(cond), sched)?;
    let gu = spec.score(z_t, t, None, sched)?;
    gc.lincomb(1.0, &gu, -1.0)
}

/// A score model bound to one condition and CFG scale: one call is one
/// network function evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Denoiser<'a> {
    pub spec: &'a ScoreModelSpec,
    pub cond: &'a Condition,
    pub scale: GuidanceScale,
}

impl<'a> Denoiser<'a> {
    pub fn new(spec: &'a ScoreModelSpec, cond: &'a Condition, scale: GuidanceScale) -> Result<Self> {
        spec.mixture(cond)?;
        Ok(Self { spec, cond, scale })
    }

    pub fn eps(&self, z: &LatentVideo, t: usize, sched: &NoiseSchedule) -> Result<LatentVideo> {
        let w = self.scale.get();
        if w == 1.0 {
            return eps_predict(self.spec, z, t, self.cond, sched);
        }
        let eps_u = eps_predict_unconditional(self.spec, z, t, sched)?;
        if w == 0.0 {
            return Ok(eps_u);
        }
        let eps_c = eps_predict(self.spec, z, t, self.cond, sched)?;
        cfg_mix(&eps_c, &eps_u, self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DecoderSpec {
    #[default]
    Identity,
    /// Per-frame linear map; `matrix` has one row of `D` values per output
    /// coordinate.
    Linear { matrix: Vec<Vec<f64>> },
}

impl DecoderSpec {
    pub fn output_dims(&self, latent_dims: usize) -> usize {
        match self {
            DecoderSpec::Identity => latent_dims,
            DecoderSpec::Linear { matrix } => matrix.len(),
        }
    }

    pub fn validate(&self, latent_dims: usize) -> Result<()> {
        if let DecoderSpec::Linear { matrix } = self {
            if matrix.is_empty() || matrix.iter().any(|row| row.len() != latent_dims) {
                return Err(Error::ShapeMismatch {
                    expected: (matrix.len(), latent_dims),
                    found: (matrix.len(), matrix.first().map_or(0, Vec::len)),
                });
            }
        }
        Ok(())
    }
}

/// Latent -> frames.
pub fn decode(z0: &LatentVideo, decoder: &DecoderSpec) -> Result<FrameSequence> {
    decoder.validate(z0.dims())?;
    match decoder {
        DecoderSpec::Identity => Ok(z0.clone()),
        DecoderSpec::Linear { matrix } => {
            let out_dims = matrix.len();
            let mut data = Vec::with_capacity(z0.frames() * out_dims);
            for frame in z0.rows() {
                data.extend(matrix.iter().map(|row| math::dot(row, frame)));
            }
            LatentVideo::from_vec(z0.frames(), out_dims, data)
        }
    }
}
