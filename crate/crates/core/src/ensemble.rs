//! Multi-reward combiners and the argmax selection rule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Raw scores: one row per reward model, one column per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    rows: Vec<Vec<f64>>,
}

impl CandidateScores {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || n == 0 {
            return Err(Error::InvalidScores("need at least one reward row and one candidate".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidScores("reward rows differ in length".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidScores("non-finite score".into()));
        }
        Ok(Self { rows })
    }

    pub fn candidates(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnsembleSpec {
    /// One reward; its raw scores are the combined scores.
    #[default]
    Single,
    WeightedSum { beta: f64 },
    NormalizedSum,
    Consensus,
}

impl EnsembleSpec {
    pub fn validate(&self, reward_count: usize) -> Result<()> {
        let bad = |reason: alloc::string::String| Err(Error::InvalidConfig { field: "ensemble", reason });
        match *self {
            EnsembleSpec::Single if reward_count != 1 => {
                bad(format!("single needs exactly 1 reward, got {reward_count}"))
            }
            EnsembleSpec::WeightedSum { beta } => {
                if !(0.0..=1.0).contains(&beta) {
                    return Err(Error::InvalidConfig {
                        field: "beta",
                        reason: format!("{beta} outside [0, 1]"),
                    });
                }
                if reward_count != 2 {
                    return bad(format!("weighted-sum needs exactly 2 rewards, got {reward_count}"));
                }
                Ok(())
            }
            _ if reward_count == 0 => bad("at least one reward is required".into()),
            _ => Ok(()),
        }
    }

    pub fn combine(&self, scores: &CandidateScores) -> Result<Vec<f64>> {
        match *self {
            EnsembleSpec::Single => {
                if scores.rows.len() != 1 {
                    return Err(Error::InvalidScores("single ensemble needs exactly one row".into()));
                }
                Ok(scores.rows[0].clone())
            }
            EnsembleSpec::WeightedSum { beta } => weighted_sum(scores, beta),
            EnsembleSpec::NormalizedSum => Ok(normalized_sum(scores)),
            EnsembleSpec::Consensus => Ok(consensus(scores)),
        }
    }
}

/// `beta r1 + (1 - beta) r2`, on raw scores.
pub fn weighted_sum(scores: &CandidateScores, beta: f64) -> Result<Vec<f64>> {
    if scores.rows.len() != 2 {
        return Err(Error::InvalidScores(format!(
            "weighted sum needs 2 reward rows, got {}",
            scores.rows.len()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig {
            field: "beta",
            reason: format!("{beta} outside [0, 1]"),
        });
    }
    let (r1, r2) = (&scores.rows[0], &scores.rows[1]);
    Ok(r1
        .iter()
        .zip(r2)
        .map(|(&a, &b)| {
            // a + (1 - beta)(b - a): exact at beta = 1 and whenever a == b
            if beta == 0.0 {
                b
            } else {
                a + (1.0 - beta) * (b - a)
            }
        })
        .collect())
}

/// Sum over rows of per-row min-max normalized scores. A constant row
/// contributes 0.5 to every candidate.
pub fn normalized_sum(scores: &CandidateScores) -> Vec<f64> {
    let mut out = vec![0.0; scores.candidates()];
    for row in &scores.rows {
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for (o, &r) in out.iter_mut().zip(row) {
            *o += if span > 0.0 { (r - lo) / span } else { 0.5 };
        }
    }
    out
}

/// Borda count: per row, rank `j` (1-based, best first) earns `n - j + 1`
/// points. Equal scores rank by ascending candidate index.
pub fn consensus(scores: &CandidateScores) -> Vec<f64> {
    let n = scores.candidates();
    let mut out = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for row in &scores.rows {
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for (rank, &idx) in order.iter().enumerate() {
            out[idx] += (n - rank) as f64;
        }
    }
    out
}

/// Index of the maximum, lowest index on ties.
pub fn select(combined: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in combined.iter().enumerate() {
        match best {
            Some(b) if !(v > combined[b]) => {}
            _ => best = Some(i),
        }
    }
    best.ok_or(Error::EmptyScores)
}
