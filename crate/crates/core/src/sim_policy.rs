//! Deterministic stand-in for policy rollouts: corrupts the perfect response
//! for a ground truth in seeded ways and scores the resulting group.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_grid::PatchLabelGrid;
use crate::response_parser::{AnswerLetter, OPTION_LETTERS};
use crate::rewards::{group_scores, total_reward, GroupScores, RewardBreakdown, RewardConfig};
use crate::tam_codec::encode;

/// Derives the seed of member `index` from a group seed with the SplitMix64
/// output function applied to `seed + (index + 1) * 0x9E3779B97F4A7C15`.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-patch probability of flipping the label.
    pub p_flip_patch: f64,
    /// Probability of breaking the tag structure.
    pub p_drop_tag: f64,
    /// Probability of answering with a different letter.
    pub p_wrong_answer: f64,
    /// Upper bound on spurious horizontal runs added to the prediction.
    pub max_extra_runs: usize,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_flip_patch", self.p_flip_patch),
            ("p_drop_tag", self.p_drop_tag),
            ("p_wrong_answer", self.p_wrong_answer),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

// Independent streams per corruption kind, so changing one probability does
// not reshuffle the draws of the others.
const STREAM_PATCHES: u64 = 0;
const STREAM_EXTRA_RUNS: u64 = 1;
const STREAM_ANSWER: u64 = 2;
const STREAM_TAGS: u64 = 3;

fn stream(seed: u64, kind: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(seed, kind))
}

fn think_text(grid: &PatchLabelGrid) -> String {
    let n = grid.anomalous_count();
    if n == 0 {
        "No anomalous patches were detected, so the object appears normal.".to_string()
    } else {
        format!("{n} anomalous patches were detected; the answer follows from their location and extent.")
    }
}

/// Corrupted version of the ideal response for `(gt_grid, gt_answer)`.
pub fn perturb(gt_grid: &PatchLabelGrid, gt_answer: AnswerLetter, spec: &NoiseSpec, seed: u64) -> String {
    let mut grid = gt_grid.clone();
    let (rows, cols) = (grid.rows(), grid.cols());

    let mut rng = stream(seed, STREAM_PATCHES);
    for r in 0..rows {
        for c in 0..cols {
            if rng.gen::<f64>() < spec.p_flip_patch {
                let v = grid.get(r, c);
                grid.set(r, c, !v);
            }
        }
    }

    if spec.max_extra_runs > 0 {
        let mut rng = stream(seed, STREAM_EXTRA_RUNS);
        for _ in 0..rng.gen_range(0..=spec.max_extra_runs) {
            let r = rng.gen_range(0..rows);
            let start = rng.gen_range(0..cols);
            let len = rng.gen_range(1..=(cols - start).min(3));
            for c in start..start + len {
                grid.set(r, c, true);
            }
        }
    }

    let mut answer = gt_answer;
    let mut rng = stream(seed, STREAM_ANSWER);
    if rng.gen::<f64>() < spec.p_wrong_answer {
        let others: Vec<char> = OPTION_LETTERS[..4]
            .iter()
            .copied()
            .filter(|&c| c != gt_answer.as_char())
            .collect();
        answer = AnswerLetter::new(*others.choose(&mut rng).expect("other letters exist")).expect("valid letter");
    }

    let seg = format!("<seg>{}</seg>", encode(&grid));
    let think = format!("<think>{}</think>", think_text(&grid));
    let ans = format!("<answer>{answer}</answer>");

    let mut rng = stream(seed, STREAM_TAGS);
    if rng.gen::<f64>() < spec.p_drop_tag {
        // 0..6 drops one of the six tags, 6 swaps the seg and think blocks
        match rng.gen_range(0..7) {
            6 => return format!("{think}{seg}{ans}"),
            k => {
                let tag = ["<seg>", "</seg>", "<think>", "</think>", "<answer>", "</answer>"][k];
                let full = format!("{seg}{think}{ans}");
                return full.replacen(tag, "", 1);
            }
        }
    }
    format!("{seg}{think}{ans}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub responses: Vec<String>,
    pub scores: GroupScores,
    pub breakdowns: Vec<RewardBreakdown>,
}

/// Scores a group of responses to the same prompt, preserving input order.
pub fn score_group(
    responses: Vec<String>,
    gt_grid: &PatchLabelGrid,
    gt_answer: AnswerLetter,
    cfg: &RewardConfig,
) -> Result<GroupResult> {
    cfg.validate()?;
    let breakdowns: Vec<RewardBreakdown> = responses
        .par_iter()
        .map(|r| total_reward(r, gt_grid, gt_answer, cfg))
        .collect();
    let scores = group_scores(breakdowns.iter().map(|b| b.total).collect(), cfg)?;
    Ok(GroupResult {
        responses,
        scores,
        breakdowns,
    })
}

/// `n` perturbations seeded with `split_seed(seed, i)`, scored as a group.
pub fn simulate_group(
    gt_grid: &PatchLabelGrid,
    gt_answer: AnswerLetter,
    n: usize,
    spec: &NoiseSpec,
    seed: u64,
    cfg: &RewardConfig,
) -> Result<GroupResult> {
    if n == 0 {
        return Err(Error::Argument("group size must be at least 1".into()));
    }
    spec.validate()?;
    let responses: Vec<String> = (0..n as u64)
        .into_par_iter()
        .map(|i| perturb(gt_grid, gt_answer, spec, split_seed(seed, i)))
        .collect();
    score_group(responses, gt_grid, gt_answer, cfg)
}
