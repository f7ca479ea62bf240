//! Hierarchical attribution reward and group-relative advantages.
//!
//! Each prediction earns credit from the first branch that applies: exact
//! pair, then a not-yet-rewarded faulty agent, then a not-yet-rewarded error
//! mode, else a false-positive penalty. Repeated pairs pay a duplicate
//! penalty and earn nothing; outputs longer than twice the label pay a
//! length penalty.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{AttributionMap, ErrorMode, ParsedPrediction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("group {0:?} has no rewards")]
    EmptyGroup(String),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub c_pair: f64,
    pub c_agent: f64,
    pub c_error: f64,
    pub c_bonus: f64,
    pub p_fp: f64,
    pub d_dup: f64,
    pub q_quant: f64,
    pub r_mal: f64,
    pub clamp: Option<(f64, f64)>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            c_pair: 1.0,
            c_agent: 0.5,
            c_error: 0.25,
            c_bonus: 0.1,
            p_fp: 0.25,
            d_dup: 0.25,
            q_quant: 0.25,
            r_mal: -1.0,
            clamp: Some((-1.0, 1.0)),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |msg: String| Err(RewardError::InvalidConfig(msg));
        let fields = [
            ("c_pair", self.c_pair),
            ("c_agent", self.c_agent),
            ("c_error", self.c_error),
            ("c_bonus", self.c_bonus),
            ("p_fp", self.p_fp),
            ("d_dup", self.d_dup),
            ("q_quant", self.q_quant),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.c_pair > self.c_agent && self.c_agent >= self.c_error && self.c_error > 0.0) {
            return bad(format!(
                "need c_pair > c_agent >= c_error > 0, got {} / {} / {}",
                self.c_pair, self.c_agent, self.c_error
            ));
        }
        if !(self.r_mal.is_finite() && self.r_mal < 0.0) {
            return bad(format!("r_mal must be negative, got {}", self.r_mal));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("clamp range [{lo}, {hi}] is invalid"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Pair,
    Agent,
    Error,
    FalsePositive,
    Duplicate,
}

/// One scored prediction. Duplicates carry `-d_dup` and are accounted in
/// `s_dup`, not in the credit sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Credit {
    pub agent_name: String,
    pub mode: ErrorMode,
    pub branch: Branch,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub well_formed: bool,
    pub credits: Vec<Credit>,
    pub s_dup: f64,
    pub s_quant: f64,
    pub s_raw: f64,
    pub s_max: f64,
    pub r: f64,
}

impl RewardBreakdown {
    /// Sum of non-duplicate credits, false-positive penalties included.
    pub fn credit_sum(&self) -> f64 {
        self.credits.iter().filter(|c| c.branch != Branch::Duplicate).map(|c| c.amount).sum()
    }
}

pub fn score_prediction(
    parsed: &ParsedPrediction,
    gt: &AttributionMap,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    if gt.is_empty() {
        return Err(RewardError::EmptyGroundTruth);
    }
    let gt_pairs: BTreeSet<(String, ErrorMode)> = gt.pairs().into_iter().collect();
    let gt_agents: BTreeSet<&str> = gt.agents().collect();
    let gt_modes: BTreeSet<ErrorMode> = gt_pairs.iter().map(|(_, m)| *m).collect();
    let s_max = gt_pairs.len() as f64 * cfg.c_pair + cfg.c_bonus;

    if !parsed.well_formed {
        return Ok(RewardBreakdown {
            well_formed: false,
            credits: Vec::new(),
            s_dup: 0.0,
            s_quant: 0.0,
            s_raw: 0.0,
            s_max,
            r: cfg.r_mal,
        });
    }

    let mut seen: BTreeSet<(&str, ErrorMode)> = BTreeSet::new();
    let mut rewarded_agents: BTreeSet<&str> = BTreeSet::new();
    let mut rewarded_modes: BTreeSet<ErrorMode> = BTreeSet::new();
    let mut credits = Vec::with_capacity(parsed.pairs.len());
    let mut s_dup = 0.0;
    for (agent, mode) in &parsed.pairs {
        let (agent, mode) = (agent.as_str(), *mode);
        let (branch, amount) = if !seen.insert((agent, mode)) {
            s_dup += cfg.d_dup;
            (Branch::Duplicate, -cfg.d_dup)
        } else if gt_pairs.contains(&(agent.to_string(), mode)) {
            rewarded_agents.insert(agent);
            rewarded_modes.insert(mode);
            (Branch::Pair, cfg.c_pair)
        } else if gt_agents.contains(agent) && !rewarded_agents.contains(agent) {
            rewarded_agents.insert(agent);
            (Branch::Agent, cfg.c_agent)
        } else if gt_modes.contains(&mode) && !rewarded_modes.contains(&mode) {
            rewarded_modes.insert(mode);
            (Branch::Error, cfg.c_error)
        } else {
            (Branch::FalsePositive, -cfg.p_fp)
        };
        credits.push(Credit { agent_name: agent.to_string(), mode, branch, amount });
    }

    let excess = parsed.pairs.len().saturating_sub(2 * gt_pairs.len());
    let s_quant = cfg.q_quant * excess as f64;
    let mut out = RewardBreakdown { well_formed: true, credits, s_dup, s_quant, s_raw: 0.0, s_max, r: 0.0 };
    out.s_raw = cfg.c_bonus + out.credit_sum() - s_dup - s_quant;
    let ratio = out.s_raw / s_max;
    out.r = match cfg.clamp {
        Some((lo, hi)) => ratio.clamp(lo, hi),
        None => ratio,
    };
    Ok(out)
}

/// Advantages for one group: `(r - mean) / (std + eps)` with population std.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, RewardError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(RewardError::InvalidEpsilon(epsilon));
    }
    if rewards.is_empty() {
        return Err(RewardError::EmptyGroup(String::new()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Advantages for rewards tagged with a group id; groups are normalized
/// independently and the output follows input order.
pub fn grouped_advantages(rewards: &[(String, f64)], epsilon: f64) -> Result<Vec<f64>, RewardError> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (group, _)) in rewards.iter().enumerate() {
        groups.entry(group).or_default().push(i);
    }
    let mut out = vec![0.0; rewards.len()];
    for members in groups.values() {
        let values: Vec<f64> = members.iter().map(|&i| rewards[i].1).collect();
        for (&i, a) in members.iter().zip(group_advantages(&values, epsilon)?) {
            out[i] = a;
        }
    }
    Ok(out)
}
