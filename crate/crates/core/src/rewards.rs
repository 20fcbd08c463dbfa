//! Black-box reward contract and the built-in reward constructions:
//! frame-wise sums over key frames, stitched key-frame grids scored as a
//! sequence, integer quantization and the pooled-degradation reward.
//!
//! Rewards only ever see decoded frames and a condition. Nothing here asks
//! for a derivative.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::math::{self, sqrt};
use crate::models::Condition;
use crate::{Error, FrameSequence, LatentVideo, Result, RewardError};

/// Strictly increasing, nonempty, 1-based frame indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct KeyFrameSet(Vec<usize>);

impl KeyFrameSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidKeyFrames("key frame set is empty".into()));
        }
        if indices[0] == 0 {
            return Err(Error::InvalidKeyFrames("key frames are 1-based".into()));
        }
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidKeyFrames(format!(
                "indices {indices:?} are not strictly increasing"
            )));
        }
        Ok(Self(indices))
    }

    /// `count` indices spread evenly over `1..=frames`, first and last
    /// included. Sixteen frames with four keys give `{1, 6, 11, 16}`.
    pub fn evenly_spaced(frames: usize, count: usize) -> Result<Self> {
        if frames == 0 || count == 0 || count > frames {
            return Err(Error::InvalidKeyFrames(format!(
                "cannot pick {count} key frames out of {frames}"
            )));
        }
        if count == 1 {
            return Self::new(alloc::vec![1]);
        }
        let span = (frames - 1) as f64;
        let idx = (0..count)
            .map(|j| 1 + math::round(j as f64 * span / (count - 1) as f64) as usize)
            .collect();
        Self::new(idx)
    }

    pub fn default_for(frames: usize) -> Result<Self> {
        Self::evenly_spaced(frames, frames.min(4))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate_for(&self, frames: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last <= frames => Ok(()),
            _ => Err(Error::InvalidKeyFrames(format!(
                "key frame {:?} exceeds frame count {frames}",
                self.0.last()
            ))),
        }
    }
}

impl TryFrom<Vec<usize>> for KeyFrameSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KeyFrameSet> for Vec<usize> {
    fn from(k: KeyFrameSet) -> Vec<usize> {
        k.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreReport {
    pub value: f64,
    /// Per-key-frame addends for frame-wise rewards.
    pub components: Option<Vec<f64>>,
    /// Round-trip time; remote rewards only.
    pub latency: Option<Duration>,
    pub raw: Option<String>,
}

impl ScoreReport {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            ..Self::default()
        }
    }
}

/// Per-call metadata handed to a reward.
#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    pub run_id: &'a str,
    /// Unique within a run; see [`candidate_id`].
    pub candidate_id: u64,
    /// Step whose candidates are being scored (0 for final outputs).
    pub t: usize,
    pub key_frames: &'a KeyFrameSet,
}

/// Identifier of candidate `index` at step `t`: `t * 2^20 + index`.
pub fn candidate_id(t: usize, index: usize) -> u64 {
    ((t as u64) << 20) | index as u64
}

/// A gradient-free scorer of decoded frames.
pub trait Reward: Sync {
    fn score(
        &self,
        frames: &FrameSequence,
        cond: &Condition,
        ctx: &ScoreContext<'_>,
    ) -> Result<ScoreReport, RewardError>;
}

fn resolve_target<'a>(
    own: &'a Option<Vec<f64>>,
    cond: &'a Condition,
    frame_count: usize,
    width: usize,
) -> Result<&'a [f64], RewardError> {
    let target = own.as_deref().or(cond.target.as_deref()).ok_or_else(|| {
        RewardError::Incompatible(format!("no target for condition `{}`", cond.id))
    })?;
    if target.len() != width && target.len() != frame_count * width {
        return Err(RewardError::Incompatible(format!(
            "target has {} values, frames are {frame_count} x {width}",
            target.len()
        )));
    }
    Ok(target)
}

/// Target row for frame `index` (1-based).
fn target_row(target: &[f64], index: usize, width: usize) -> &[f64] {
    if target.len() == width {
        target
    } else {
        &target[(index - 1) * width..index * width]
    }
}

/// Image-level scorer applied to single frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FrameScorer {
    Zero,
    /// `-||x - a||^2`.
    NegSqDistance {
        #[serde(default)]
        target: Option<Vec<f64>>,
    },
    /// `-||x - a||`.
    NegDistance {
        #[serde(default)]
        target: Option<Vec<f64>>,
    },
    /// Cosine similarity to the target direction, in `[-1, 1]`.
    Cosine {
        #[serde(default)]
        target: Option<Vec<f64>>,
    },
}

/// Scores frame `index` (1-based) of a sequence.
pub trait FrameScore {
    fn score_frame(
        &self,
        frames: &FrameSequence,
        index: usize,
        cond: &Condition,
    ) -> Result<f64, RewardError>;
}

impl<F> FrameScore for F
where
    F: Fn(&[f64], &Condition) -> Result<f64, RewardError>,
{
    fn score_frame(&self, frames: &FrameSequence, index: usize, cond: &Condition) -> Result<f64, RewardError> {
        self(frames.frame(index - 1), cond)
    }
}

impl FrameScore for FrameScorer {
    fn score_frame(&self, frames: &FrameSequence, index: usize, cond: &Condition) -> Result<f64, RewardError> {
        let x = frames.frame(index - 1);
        let (f, w) = frames.shape();
        Ok(match self {
            FrameScorer::Zero => 0.0,
            FrameScorer::NegSqDistance { target } => {
                -math::sq_dist(x, target_row(resolve_target(target, cond, f, w)?, index, w))
            }
            FrameScorer::NegDistance { target } => {
                -sqrt(math::sq_dist(x, target_row(resolve_target(target, cond, f, w)?, index, w)))
            }
            FrameScorer::Cosine { target } => {
                let a = target_row(resolve_target(target, cond, f, w)?, index, w);
                let denom = math::norm(x) * math::norm(a);
                if denom == 0.0 {
                    0.0
                } else {
                    math::dot(x, a) / denom
                }
            }
        })
    }
}

fn check_keys(frames: &FrameSequence, keys: &KeyFrameSet) -> Result<(), RewardError> {
    keys.validate_for(frames.frames())
        .map_err(|e| RewardError::Incompatible(format!("{e}")))
}

/// Sum of `per_frame` over the key frames; `components` holds each addend.
pub fn framewise_reward(
    frames: &FrameSequence,
    cond: &Condition,
    keys: &KeyFrameSet,
    per_frame: &impl FrameScore,
) -> Result<ScoreReport, RewardError> {
    check_keys(frames, keys)?;
    let mut parts = Vec::with_capacity(keys.len());
    for &k in keys.indices() {
        let v = per_frame.score_frame(frames, k, cond).map_err(|e| match e {
            e @ RewardError::Frame { .. } => e,
            other => RewardError::Frame {
                frame: k,
                detail: format!("{other}"),
            },
        })?;
        parts.push(v);
    }
    Ok(ScoreReport {
        value: parts.iter().sum(),
        components: Some(parts),
        ..ScoreReport::default()
    })
}

/// Key frames arranged row-major in a grid with `ceil(sqrt(|k|))` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchedImage {
    pub rows: usize,
    pub cols: usize,
    /// `rows * cols` cells; trailing cells past the last key frame are `None`.
    pub cells: Vec<Option<Vec<f64>>>,
    pub frame_labels: Vec<usize>,
}

impl StitchedImage {
    /// Labeled frames in grid (= temporal) order.
    pub fn labeled(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.frame_labels
            .iter()
            .copied()
            .zip(self.cells.iter().flatten().map(Vec::as_slice))
    }

    pub fn width(&self) -> usize {
        self.cells.iter().flatten().next().map_or(0, Vec::len)
    }
}

pub fn stitch(frames: &FrameSequence, keys: &KeyFrameSet) -> Result<StitchedImage> {
    if keys.is_empty() {
        return Err(Error::InvalidKeyFrames("key frame set is empty".into()));
    }
    keys.validate_for(frames.frames())?;
    let k = keys.len();
    let mut cols = 1;
    while cols * cols < k {
        cols += 1;
    }
    let rows = k.div_ceil(cols);
    let mut cells: Vec<Option<Vec<f64>>> = keys
        .indices()
        .iter()
        .map(|&i| Some(frames.frame(i - 1).to_vec()))
        .collect();
    cells.resize(rows * cols, None);
    Ok(StitchedImage {
        rows,
        cols,
        cells,
        frame_labels: keys.indices().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Statistic {
    #[default]
    Mean,
    Coordinate {
        index: usize,
    },
    Norm,
}

impl Statistic {
    fn eval(&self, frame: &[f64]) -> Result<f64, RewardError> {
        match *self {
            Statistic::Mean => Ok(frame.iter().sum::<f64>() / frame.len() as f64),
            Statistic::Norm => Ok(math::norm(frame)),
            Statistic::Coordinate { index } => frame.get(index).copied().ok_or_else(|| {
                RewardError::Incompatible(format!("coordinate {index} outside frame width {}", frame.len()))
            }),
        }
    }
}

/// Scorer over a whole stitched grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SequenceScorer {
    /// Counts labeled-frame increments of `statistic` that are positive
    /// (or sums them when `magnitude` is set).
    MonotoneProgress {
        #[serde(default)]
        statistic: Statistic,
        #[serde(default)]
        magnitude: bool,
    },
    /// `-||last - a||` for the last labeled frame.
    TerminalTarget {
        #[serde(default)]
        target: Option<Vec<f64>>,
    },
    /// `-sum ||x_{k+1} - x_k||^2` over consecutive labeled frames.
    Smoothness,
}

pub fn sequence_reward(
    st: &StitchedImage,
    cond: &Condition,
    scorer: &SequenceScorer,
) -> Result<ScoreReport, RewardError> {
    let frames: Vec<&[f64]> = st.labeled().map(|(_, f)| f).collect();
    let value = match scorer {
        SequenceScorer::MonotoneProgress { statistic, magnitude } => {
            let stats = frames.iter().map(|f| statistic.eval(f)).collect::<Result<Vec<_>, _>>()?;
            stats
                .windows(2)
                .map(|w| w[1] - w[0])
                .filter(|d| *d > 0.0)
                .map(|d| if *magnitude { d } else { 1.0 })
                .sum()
        }
        SequenceScorer::TerminalTarget { target } => {
            let last = frames.last().ok_or_else(|| RewardError::Incompatible("empty grid".into()))?;
            let width = last.len();
            let a = own_or_condition(target, cond)?;
            if a.len() != width {
                return Err(RewardError::Incompatible(format!(
                    "terminal target has {} values, frames have {width}",
                    a.len()
                )));
            }
            -sqrt(math::sq_dist(last, a))
        }
        SequenceScorer::Smoothness => -frames.windows(2).map(|w| math::sq_dist(w[0], w[1])).sum::<f64>(),
    };
    Ok(ScoreReport::new(value))
}

fn own_or_condition<'a>(own: &'a Option<Vec<f64>>, cond: &'a Condition) -> Result<&'a [f64], RewardError> {
    own.as_deref()
        .or(cond.target.as_deref())
        .ok_or_else(|| RewardError::Incompatible(format!("no target for condition `{}`", cond.id)))
}

/// Strictly increasing map applied before rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Calibration {
    #[default]
    Identity,
    /// `scale * x + offset`, `scale > 0`.
    Affine { scale: f64, offset: f64 },
    /// Linear interpolation through `(x, y)` knots, extrapolated linearly
    /// past both ends. Both coordinates must be strictly increasing.
    PiecewiseLinear { points: Vec<[f64; 2]> },
}

impl Calibration {
    fn validate(&self) -> Result<()> {
        match self {
            Calibration::Identity => Ok(()),
            Calibration::Affine { scale, offset } => {
                if !(scale.is_finite() && *scale > 0.0 && offset.is_finite()) {
                    return Err(Error::InvalidQuantizer(format!(
                        "affine calibration needs a finite positive scale, got {scale}"
                    )));
                }
                Ok(())
            }
            Calibration::PiecewiseLinear { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidQuantizer("piecewise calibration needs 2+ points".into()));
                }
                let monotone = points
                    .windows(2)
                    .all(|w| w[1][0] > w[0][0] && w[1][1] > w[0][1]);
                if !monotone || points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidQuantizer("calibration is not strictly increasing".into()));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Calibration::Identity => x,
            Calibration::Affine { scale, offset } => scale * x + offset,
            Calibration::PiecewiseLinear { points } => {
                let seg = points
                    .windows(2)
                    .position(|w| x <= w[1][0])
                    .unwrap_or(points.len() - 2);
                let ([x0, y0], [x1, y1]) = (points[seg], points[seg + 1]);
                y0 + (x - x0) * (y1 - y0) / (x1 - x0)
            }
        }
    }
}

/// `clamp(round(calib(value)), lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuantizerConfig", into = "QuantizerConfig")]
pub struct Quantizer {
    lo: i64,
    hi: i64,
    calib: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    #[serde(default = "default_lo")]
    pub lo: i64,
    #[serde(default = "default_hi")]
    pub hi: i64,
    #[serde(default)]
    pub calib: Calibration,
}

fn default_lo() -> i64 {
    1
}

fn default_hi() -> i64 {
    9
}

impl TryFrom<QuantizerConfig> for Quantizer {
    type Error = Error;
    fn try_from(c: QuantizerConfig) -> Result<Self> {
        Quantizer::new(c.lo, c.hi, c.calib)
    }
}

impl From<Quantizer> for QuantizerConfig {
    fn from(q: Quantizer) -> Self {
        QuantizerConfig {
            lo: q.lo,
            hi: q.hi,
            calib: q.calib,
        }
    }
}

impl Quantizer {
    pub fn new(lo: i64, hi: i64, calib: Calibration) -> Result<Self> {
        if lo >= hi {
            return Err(Error::InvalidQuantizer(format!("scale [{lo}, {hi}] is empty")));
        }
        calib.validate()?;
        Ok(Self { lo, hi, calib })
    }

    /// The 1-9 rating scale.
    pub fn rating(calib: Calibration) -> Result<Self> {
        Self::new(1, 9, calib)
    }

    /// The yes/no (0/1) scale.
    pub fn binary(calib: Calibration) -> Result<Self> {
        Self::new(0, 1, calib)
    }

    pub fn bounds(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn apply(&self, value: f64) -> f64 {
        let v = math::round(self.calib.apply(value));
        v.clamp(self.lo as f64, self.hi as f64)
    }
}

pub fn quantize(report: &ScoreReport, q: &Quantizer) -> ScoreReport {
    ScoreReport {
        value: q.apply(report.value),
        ..report.clone()
    }
}

/// Per-frame average pooling of consecutive coordinates in groups of
/// `pool`; a trailing partial group is averaged over its own length.
pub fn avg_pool(frames: &FrameSequence, pool: usize) -> Result<FrameSequence> {
    if pool == 0 {
        return Err(Error::InvalidConfig {
            field: "pool",
            reason: "pooling factor must be positive".into(),
        });
    }
    let (f, d) = frames.shape();
    let out_w = d.div_ceil(pool);
    let mut data = Vec::with_capacity(f * out_w);
    for row in frames.rows() {
        data.extend(row.chunks(pool).map(|c| c.iter().sum::<f64>() / c.len() as f64));
    }
    LatentVideo::from_vec(f, out_w, data)
}

/// `-||avgpool(frames, pool) - observation||^2`.
pub fn degradation_reward(
    frames: &FrameSequence,
    observation: &FrameSequence,
    pool: usize,
) -> Result<ScoreReport, RewardError> {
    let pooled = avg_pool(frames, pool).map_err(|e| RewardError::Incompatible(format!("{e}")))?;
    let d = pooled
        .sq_dist(observation)
        .map_err(|e| RewardError::Incompatible(format!("after pooling: {e}")))?;
    Ok(ScoreReport::new(-d))
}

/// Frame-wise reward summed over the context's key frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FramewiseReward(pub FrameScorer);

impl Reward for FramewiseReward {
    fn score(&self, frames: &FrameSequence, cond: &Condition, ctx: &ScoreContext<'_>) -> Result<ScoreReport, RewardError> {
        framewise_reward(frames, cond, ctx.key_frames, &self.0)
    }
}

/// Sequence scorer over the stitched key-frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchedReward(pub SequenceScorer);

impl Reward for StitchedReward {
    fn score(&self, frames: &FrameSequence, cond: &Condition, ctx: &ScoreContext<'_>) -> Result<ScoreReport, RewardError> {
        check_keys(frames, ctx.key_frames)?;
        let st = stitch(frames, ctx.key_frames).map_err(|e| RewardError::Incompatible(format!("{e}")))?;
        sequence_reward(&st, cond, &self.0)
    }
}

/// Distance to a pooled observation; ignores key frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationReward {
    pub observation: FrameSequence,
    pub pool: usize,
}

impl Reward for DegradationReward {
    fn score(&self, frames: &FrameSequence, _cond: &Condition, _ctx: &ScoreContext<'_>) -> Result<ScoreReport, RewardError> {
        degradation_reward(frames, &self.observation, self.pool)
    }
}

/// Wraps any reward with a quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized<R> {
    pub inner: R,
    pub quantizer: Quantizer,
}

impl<R: Reward> Reward for Quantized<R> {
    fn score(&self, frames: &FrameSequence, cond: &Condition, ctx: &ScoreContext<'_>) -> Result<ScoreReport, RewardError> {
        let r = self.inner.score(frames, cond, ctx)?;
        Ok(quantize(&r, &self.quantizer))
    }
}

impl<R: Reward + ?Sized> Reward for &R {
    fn score(&self, frames: &FrameSequence, cond: &Condition, ctx: &ScoreContext<'_>) -> Result<ScoreReport, RewardError> {
        (**self).score(frames, cond, ctx)
    }
}

impl<R: Reward + ?Sized> Reward for alloc::boxed::Box<R> {
    fn score(&self, frames: &FrameSequence, cond: &Condition, ctx: &ScoreContext<'_>) -> Result<ScoreReport, RewardError> {
        (**self).score(frames, cond, ctx)
    }
}
