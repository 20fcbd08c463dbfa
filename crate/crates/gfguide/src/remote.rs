//! HTTP client for black-box scorers.
//!
//! Wire format: `POST <endpoint>/score` with a [`ScoreRequest`] body, answered
//! by `200 {"score": <number>}`. Connection failures and 5xx responses are
//! retried with exponential backoff; timeouts, malformed bodies and 4xx
//! responses are not.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use gfguide_core::models::Condition;
use gfguide_core::rewards::{Reward, ScoreContext, ScoreReport};
use gfguide_core::{FrameSequence, RewardError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scale {
    pub lo: i64,
    pub hi: i64,
}

impl Default for Scale {
    fn default() -> Self {
        Scale { lo: 1, hi: 9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub run_id: String,
    pub candidate_id: u64,
    pub prompt: String,
    pub key_frames: Vec<usize>,
    /// One row per key frame, in grid order.
    pub frames: Vec<Vec<f64>>,
    pub scale: Scale,
}

fn default_timeout() -> u64 {
    2000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    50
}
fn default_inflight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSpec {
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Extra attempts after the first, transport errors only.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default)]
    pub scale: Scale,
}

impl RemoteSpec {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteSpec {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            max_inflight: default_inflight(),
            scale: Scale::default(),
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Retry(String),
    Fatal(RewardError),
}

pub struct RemoteReward {
    spec: RemoteSpec,
    url: String,
    agent: ureq::Agent,
    gate: Semaphore,
    memo: Mutex<HashMap<(String, u64, u64), ScoreReport>>,
}

impl std::fmt::Debug for RemoteReward {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteReward").field("spec", &self.spec).finish()
    }
}

impl RemoteReward {
    pub fn new(spec: RemoteSpec) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(spec.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/score", spec.endpoint.trim_end_matches('/'));
        let gate = Semaphore {
            free: Mutex::new(spec.max_inflight.max(1)),
            cv: Condvar::new(),
        };
        RemoteReward {
            spec,
            url,
            agent,
            gate,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &RemoteSpec {
        &self.spec
    }

    /// Sends one request, retrying transport failures.
    pub fn send(&self, req: &ScoreRequest) -> Result<ScoreReport, RewardError> {
        let body = serde_json::to_string(req).expect("request serializes");
        let key = {
            let mut h = DefaultHasher::new();
            body.hash(&mut h);
            (req.run_id.clone(), req.candidate_id, h.finish())
        };
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }

        let _permit = self.gate.acquire();
        let attempts = self.spec.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.spec.backoff_ms << (attempt - 1).min(16)));
            }
            match self.attempt(&body, req.candidate_id) {
                Ok(report) => {
                    self.memo.lock().unwrap().insert(key, report.clone());
                    return Ok(report);
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(detail)) => last = detail,
            }
        }
        Err(RewardError::Transport {
            candidate: req.candidate_id,
            attempts,
            detail: last,
        })
    }

    fn attempt(&self, body: &str, candidate: u64) -> Result<ScoreReport, Failure> {
        let started = Instant::now();
        let sent = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body);
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => return Err(self.classify(e, candidate)),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.classify(e, candidate))?;
        let latency = started.elapsed();
        if status >= 500 {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(Failure::Fatal(RewardError::Protocol {
                candidate,
                field: "status".into(),
                detail: format!("HTTP {status}"),
            }));
        }
        let value = parse_score(&text).map_err(|(field, detail)| {
            Failure::Fatal(RewardError::Protocol {
                candidate,
                field,
                detail,
            })
        })?;
        Ok(ScoreReport {
            value,
            components: None,
            latency: Some(latency),
            raw: Some(text),
        })
    }

    fn classify(&self, e: ureq::Error, candidate: u64) -> Failure {
        match e {
            ureq::Error::Timeout(_) => Failure::Fatal(RewardError::Timeout {
                candidate,
                timeout_ms: self.spec.timeout_ms,
            }),
            ureq::Error::Io(ref io)
                if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) =>
            {
                Failure::Fatal(RewardError::Timeout {
                    candidate,
                    timeout_ms: self.spec.timeout_ms,
                })
            }
            other => Failure::Retry(other.to_string()),
        }
    }
}

/// Accepts exactly `{"score": <finite number>}`.
pub fn parse_score(text: &str) -> Result<f64, (String, String)> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ("body".to_string(), format!("not JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| ("body".to_string(), format!("expected an object, got {v}")))?;
    if let Some(extra) = obj.keys().find(|k| *k != "score") {
        return Err((extra.clone(), "unexpected field".into()));
    }
    let score = obj
        .get("score")
        .ok_or_else(|| ("score".to_string(), "missing".into()))?;
    match score.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(("score".to_string(), format!("expected a number, got {score}"))),
    }
}

impl Reward for RemoteReward {
    fn score(&self, frames: &FrameSequence, cond: &Condition, ctx: &ScoreContext<'_>) -> Result<ScoreReport, RewardError> {
        let keys = ctx.key_frames.indices();
        if let Some(&k) = keys.iter().find(|&&k| k > frames.frames()) {
            return Err(RewardError::Incompatible(format!(
                "key frame {k} outside a {}-frame video",
                frames.frames()
            )));
        }
        let req = ScoreRequest {
            run_id: ctx.run_id.to_string(),
            candidate_id: ctx.candidate_id,
            prompt: cond.prompt.clone().unwrap_or_else(|| cond.id.clone()),
            key_frames: keys.to_vec(),
            frames: keys.iter().map(|&k| frames.frame(k - 1).to_vec()).collect(),
            scale: self.spec.scale,
        };
        self.send(&req)
    }
}
