use alloc::string::String;

/// Failure raised by a reward model while scoring one candidate.
///
/// Every variant that can originate from a remote backend carries the
/// candidate identifier so the sampler can apply its fallback policy.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("candidate {candidate}: reward request timed out after {timeout_ms} ms")]
    Timeout { candidate: u64, timeout_ms: u64 },
    #[error("candidate {candidate}: malformed reward response, field `{field}`: {detail}")]
    Protocol {
        candidate: u64,
        field: String,
        detail: String,
    },
    #[error("candidate {candidate}: transport failure after {attempts} attempt(s): {detail}")]
    Transport {
        candidate: u64,
        attempts: u32,
        detail: String,
    },
    #[error("frame {frame}: {detail}")]
    Frame { frame: usize, detail: String },
    #[error("incompatible scorer: {0}")]
    Incompatible(String),
}

impl RewardError {
    /// Remote failures are recoverable by dropping the candidate; local
    /// scorer failures always indicate a configuration problem.
    pub fn is_remote(&self) -> bool {
        matches!(
            self,
            RewardError::Timeout { .. } | RewardError::Protocol { .. } | RewardError::Transport { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} outside [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },
    #[error("degenerate schedule at t={t}: alphabar_t = 1")]
    DegenerateSchedule { t: usize },
    #[error("negative DDIM radicand {value:e} at t={t}")]
    NegativeRadicand { t: usize, value: f64 },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid key frames: {0}")]
    InvalidKeyFrames(String),
    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(String),
    #[error("invalid scores: {0}")]
    InvalidScores(String),
    #[error("invalid `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("empty score vector")]
    EmptyScores,
    #[error("degenerate control weights: every reward is -inf or NaN")]
    DegenerateWeights,
    #[error("t={t}: every candidate was dropped by reward failures")]
    AllCandidatesDropped { t: usize },
    #[error(transparent)]
    Reward(#[from] RewardError),
}
