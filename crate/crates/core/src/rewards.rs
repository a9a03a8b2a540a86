//! Verifiable rewards for structured responses and group-relative advantages.
//!
//! A response earns three independent components:
//!
//! * format: 1 when the `<seg>/<think>/<answer>` layout is followed, else 0;
//! * detection: on a normal image, 1 for an empty prediction and 0 otherwise;
//!   on an anomalous image, `alpha * F1` between predicted and true patches;
//! * answer: `correct_reward` for the right option letter, otherwise
//!   `incorrect_reward`.
//!
//! The total is their unweighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_grid::PatchLabelGrid;
use crate::metrics::{confusion, f1_score};
use crate::response_parser::{extract_answer_letter, parse_response, AnswerLetter};
use crate::tam_codec::decode;

/// Number of sampled responses per prompt.
pub const DEFAULT_GROUP_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Scale applied to the detection F1 on anomalous images.
    pub alpha: f64,
    pub correct_reward: f64,
    pub incorrect_reward: f64,
    /// Added to the group standard deviation before dividing.
    pub eps: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            correct_reward: 1.0,
            incorrect_reward: 0.1,
            eps: 1e-8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Config(format!("eps must be non-negative, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub detection: f64,
    pub answer: f64,
    pub total: f64,
}

pub fn format_reward(text: &str) -> f64 {
    if parse_response(text).well_formed {
        1.0
    } else {
        0.0
    }
}

/// Detection reward for an already-extracted seg region. `None` stands for a
/// missing region and is scored like an undecodable one.
pub fn detection_reward_for(seg: Option<&str>, gt: &PatchLabelGrid, cfg: &RewardConfig) -> f64 {
    let pred = seg.and_then(|s| decode(s, gt.spec()).ok());
    if gt.is_normal() {
        return match pred {
            Some(p) if p.is_normal() => 1.0,
            _ => 0.0,
        };
    }
    match pred {
        Some(p) => {
            let c = confusion(p.labels(), gt.labels()).expect("prediction decoded on the ground-truth grid");
            cfg.alpha * f1_score(&c)
        }
        None => 0.0,
    }
}

/// Scores the text of a `<seg>` region against the ground-truth patches.
pub fn detection_reward(seg_text: &str, gt: &PatchLabelGrid, cfg: &RewardConfig) -> f64 {
    detection_reward_for(Some(seg_text), gt, cfg)
}

pub fn answer_reward(pred: Option<AnswerLetter>, gt: Option<AnswerLetter>, cfg: &RewardConfig) -> Result<f64> {
    let gt = gt.ok_or_else(|| Error::Config("ground-truth answer is missing".into()))?;
    Ok(if pred == Some(gt) {
        cfg.correct_reward
    } else {
        cfg.incorrect_reward
    })
}

pub fn total_reward(
    response: &str,
    gt_grid: &PatchLabelGrid,
    gt_answer: AnswerLetter,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let parsed = parse_response(response);
    let format = if parsed.well_formed { 1.0 } else { 0.0 };
    let detection = detection_reward_for(parsed.seg.as_deref(), gt_grid, cfg);
    let pred = parsed.answer.as_deref().and_then(extract_answer_letter);
    let answer = if pred == Some(gt_answer) {
        cfg.correct_reward
    } else {
        cfg.incorrect_reward
    };
    RewardBreakdown {
        format,
        detection,
        answer,
        total: format + detection + answer,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// `(r_i - mean) / (std + eps)` with the population standard deviation. A
/// group whose rewards are all equal gets all-zero advantages.
pub fn group_advantages(rewards: &[f64], cfg: &RewardConfig) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Argument("advantages of an empty group".into()));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::Argument(format!("non-finite reward {bad}")));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + cfg.eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

pub fn group_scores(rewards: Vec<f64>, cfg: &RewardConfig) -> Result<GroupScores> {
    let advantages = group_advantages(&rewards, cfg)?;
    Ok(GroupScores { rewards, advantages })
}
