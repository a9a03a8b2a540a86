//! Detection and understanding metrics.
//!
//! Threshold-free evaluation treats an image as anomalous exactly when its
//! decoded patch grid is nonempty. Baselines that emit continuous scores go
//! through [`sweep_threshold`], which picks the single threshold maximizing
//! the harmonic mean of dataset-level pixel F1 and image F1.

use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{Label, Manifest, ManifestEntry, Split, Subtask};
use crate::error::{Error, Result};
use crate::mask_grid::{rasterize, resize_mask_nearest, BinaryMask, GridSpec, DEFAULT_NORMALIZE_SIZE};
use crate::score_map::ScoreMap;
use crate::tam_codec::decode;

/// Binary confusion counts with "anomalous" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
            tn: self.tn + rhs.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

pub fn confusion(pred: &[bool], gt: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} units, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        c.record(p, g);
    }
    Ok(c)
}

pub fn confusion_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    confusion(pred.bits(), gt.bits())
}

/// `2tp / (2tp + fp + fn)`, zero when nothing was predicted or present.
pub fn f1_score(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::Argument("accuracy of zero classified units".into())),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// Mean of the per-class recalls over the classes that occur.
pub fn balanced_accuracy(c: &ConfusionCounts) -> Result<f64> {
    let mut recalls = Vec::with_capacity(2);
    if c.tp + c.fn_ > 0 {
        recalls.push(c.tp as f64 / (c.tp + c.fn_) as f64);
    }
    if c.tn + c.fp > 0 {
        recalls.push(c.tn as f64 / (c.tn + c.fp) as f64);
    }
    if recalls.is_empty() {
        return Err(Error::Argument("accuracy of zero classified units".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub spec: GridSpec,
    /// Side length both ground truth and predictions are compared at.
    pub normalize_size: usize,
    /// Report class-balanced accuracy instead of plain accuracy.
    pub balanced_accuracy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            spec: GridSpec::default(),
            normalize_size: DEFAULT_NORMALIZE_SIZE,
            balanced_accuracy: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub pixel_f1: f64,
    pub pixel_acc: f64,
    pub image_f1: f64,
    pub image_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    #[serde(flatten)]
    pub metrics: CategoryMetrics,
    pub images: usize,
    pub pixel_counts: ConfusionCounts,
    pub image_counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub per_category: BTreeMap<String, CategoryReport>,
    /// Unweighted mean over categories.
    pub mean: CategoryMetrics,
    pub images: usize,
    /// Test images with no prediction; scored as empty.
    pub missing_predictions: usize,
    /// Predictions whose seg text failed to decode; scored as empty.
    pub undecodable_predictions: usize,
}

impl DetectionReport {
    /// `category,pixel_f1,pixel_acc,image_f1,image_acc` with a trailing mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,pixel_f1,pixel_acc,image_f1,image_acc\n");
        let rows = self
            .per_category
            .iter()
            .map(|(k, v)| (k.as_str(), &v.metrics))
            .chain(std::iter::once(("mean", &self.mean)));
        for (name, m) in rows {
            out.push_str(&format!(
                "{name},{},{},{},{}\n",
                m.pixel_f1, m.pixel_acc, m.image_f1, m.image_acc
            ));
        }
        out
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct ImageTally {
    pixel: ConfusionCounts,
    image: ConfusionCounts,
    missing: bool,
    undecodable: bool,
}

fn score_entry<F>(
    entry: &ManifestEntry,
    prediction: Option<Option<&str>>,
    cfg: &EvalConfig,
    load_gt: &F,
) -> Result<ImageTally>
where
    F: Fn(&ManifestEntry) -> Result<BinaryMask>,
{
    let size = cfg.normalize_size;
    let gt_mask = match entry.label {
        Label::Anomalous => resize_mask_nearest(&load_gt(entry)?, size, size)?,
        Label::Normal => BinaryMask::zeros(size, size)?,
    };
    let mut tally = ImageTally {
        missing: prediction.is_none(),
        ..Default::default()
    };
    let grid = match prediction.map(|seg| seg.map(|text| decode(text, &cfg.spec))) {
        Some(Some(Ok(g))) => g,
        Some(Some(Err(_)) | None) => {
            tally.undecodable = true;
            crate::mask_grid::PatchLabelGrid::zeros(cfg.spec)?
        }
        None => crate::mask_grid::PatchLabelGrid::zeros(cfg.spec)?,
    };
    let pred_mask = rasterize(&grid, size, size)?;
    tally.pixel = confusion_masks(&pred_mask, &gt_mask)?;
    tally
        .image
        .record(!grid.is_normal(), entry.label == Label::Anomalous);
    Ok(tally)
}

/// Scores every test entry of `manifest` against `predictions` (image id to
/// TAM string, `None` for a response that had no seg region). `load_gt`
/// supplies the ground-truth mask of anomalous entries at any resolution.
pub fn evaluate<F>(
    predictions: &HashMap<String, Option<String>>,
    manifest: &Manifest,
    cfg: &EvalConfig,
    load_gt: F,
) -> Result<DetectionReport>
where
    F: Fn(&ManifestEntry) -> Result<BinaryMask> + Sync,
{
    cfg.spec.validate()?;
    for id in predictions.keys() {
        if manifest.get(id).is_none() {
            return Err(Error::Dataset(format!("prediction for unknown image id '{id}'")));
        }
    }
    let entries: Vec<&ManifestEntry> = manifest
        .entries()
        .iter()
        .filter(|e| e.split == Split::Test)
        .collect();
    if entries.is_empty() {
        return Err(Error::Dataset("manifest has no test images".into()));
    }

    let tallies = entries
        .par_iter()
        .map(|e| {
            let prediction = predictions.get(&e.image_id).map(Option::as_deref);
            score_entry(e, prediction, cfg, &load_gt)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_category: BTreeMap<&str, (ConfusionCounts, ConfusionCounts, usize)> = BTreeMap::new();
    let (mut missing, mut undecodable) = (0, 0);
    for (entry, t) in entries.iter().zip(&tallies) {
        let slot = by_category.entry(entry.category.as_str()).or_default();
        slot.0 += t.pixel;
        slot.1 += t.image;
        slot.2 += 1;
        missing += usize::from(t.missing);
        undecodable += usize::from(t.undecodable);
    }
    if missing > 0 {
        log::warn!("{missing} test images have no prediction; scored as empty");
    }
    if undecodable > 0 {
        log::warn!("{undecodable} predictions could not be decoded; scored as empty");
    }

    let acc = |c: &ConfusionCounts| {
        if cfg.balanced_accuracy {
            balanced_accuracy(c)
        } else {
            accuracy(c)
        }
    };
    let mut per_category = BTreeMap::new();
    for (name, (pixel, image, images)) in by_category {
        let metrics = CategoryMetrics {
            pixel_f1: f1_score(&pixel),
            pixel_acc: acc(&pixel)?,
            image_f1: f1_score(&image),
            image_acc: acc(&image)?,
        };
        per_category.insert(
            name.to_string(),
            CategoryReport {
                metrics,
                images,
                pixel_counts: pixel,
                image_counts: image,
            },
        );
    }
    let n = per_category.len() as f64;
    let mean_of = |f: fn(&CategoryMetrics) -> f64| per_category.values().map(|c| f(&c.metrics)).sum::<f64>() / n;
    let mean = CategoryMetrics {
        pixel_f1: mean_of(|m| m.pixel_f1),
        pixel_acc: mean_of(|m| m.pixel_acc),
        image_f1: mean_of(|m| m.image_f1),
        image_acc: mean_of(|m| m.image_acc),
    };
    Ok(DetectionReport {
        per_category,
        mean,
        images: entries.len(),
        missing_predictions: missing,
        undecodable_predictions: undecodable,
    })
}

/// Continuous anomaly scores for one image plus its ground truth.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub pixel_scores: ScoreMap,
    pub image_score: f64,
    /// Same dimensions as `pixel_scores`.
    pub gt_mask: BinaryMask,
    pub gt_anomalous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 100.0,
            steps: 1001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub f1: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub best_threshold: f64,
    pub pixel: MetricPair,
    pub image: MetricPair,
    /// Harmonic mean of pixel and image F1 at `best_threshold`.
    pub objective: f64,
    pub thresholds_evaluated: usize,
}

// Sorted scores with a suffix count of positives, answering "how many units
// score strictly above t, and how many of those are positive" in O(log n).
struct SortedScores {
    scores: Vec<f64>,
    positives_from: Vec<u64>,
}

impl SortedScores {
    fn new(mut pairs: Vec<(f64, bool)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut positives_from = vec![0u64; pairs.len() + 1];
        for i in (0..pairs.len()).rev() {
            positives_from[i] = positives_from[i + 1] + u64::from(pairs[i].1);
        }
        Self {
            scores: pairs.into_iter().map(|(s, _)| s).collect(),
            positives_from,
        }
    }

    fn counts_above(&self, t: f64) -> ConfusionCounts {
        let n = self.scores.len() as u64;
        let positives = self.positives_from[0];
        let idx = self.scores.partition_point(|&s| s <= t);
        let predicted = n - idx as u64;
        let tp = self.positives_from[idx];
        let fp = predicted - tp;
        let fn_ = positives - tp;
        ConfusionCounts {
            tp,
            fp,
            fn_,
            tn: n - positives - fp,
        }
    }
}

/// Units scoring strictly above the threshold are predicted anomalous. The
/// same threshold applies at pixel and image level. Candidates are `steps`
/// evenly spaced values over `[lo, hi]`, plus every distinct score inside
/// that range when there are at most `steps` of them. Ties go to the smaller
/// threshold.
pub fn sweep_threshold(samples: &[ScoredSample], cfg: &SweepConfig) -> Result<ThresholdResult> {
    if samples.is_empty() {
        return Err(Error::Dataset("threshold sweep over an empty dataset".into()));
    }
    if cfg.steps < 2 {
        return Err(Error::Argument(format!("steps must be at least 2, got {}", cfg.steps)));
    }
    if !(cfg.lo.is_finite() && cfg.hi.is_finite() && cfg.lo <= cfg.hi) {
        return Err(Error::Argument(format!("invalid sweep range [{}, {}]", cfg.lo, cfg.hi)));
    }

    let mut pixel_pairs = Vec::new();
    let mut image_pairs = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if (s.pixel_scores.width(), s.pixel_scores.height()) != (s.gt_mask.width(), s.gt_mask.height()) {
            return Err(Error::Dimension(format!(
                "sample {i}: score map {}x{} vs mask {}x{}",
                s.pixel_scores.width(),
                s.pixel_scores.height(),
                s.gt_mask.width(),
                s.gt_mask.height()
            )));
        }
        if !s.image_score.is_finite() || s.pixel_scores.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("sample {i}: non-finite score")));
        }
        pixel_pairs.extend(
            s.pixel_scores
                .values()
                .iter()
                .zip(s.gt_mask.bits())
                .map(|(&v, &g)| (f64::from(v), g)),
        );
        image_pairs.push((s.image_score, s.gt_anomalous));
    }
    let pixels = SortedScores::new(pixel_pairs);
    let images = SortedScores::new(image_pairs);

    let span = cfg.hi - cfg.lo;
    let mut candidates: Vec<f64> = (0..cfg.steps)
        .map(|i| {
            if i + 1 == cfg.steps {
                cfg.hi
            } else {
                cfg.lo + span * i as f64 / (cfg.steps - 1) as f64
            }
        })
        .collect();
    let mut distinct: Vec<f64> = pixels
        .scores
        .iter()
        .chain(&images.scores)
        .copied()
        .filter(|v| (cfg.lo..=cfg.hi).contains(v))
        .collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= cfg.steps {
        candidates.extend(distinct);
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best: Option<(f64, f64, ConfusionCounts, ConfusionCounts)> = None;
    for &t in &candidates {
        let pc = pixels.counts_above(t);
        let ic = images.counts_above(t);
        let objective = harmonic_mean(f1_score(&pc), f1_score(&ic));
        if best.is_none_or(|(_, b, _, _)| objective > b) {
            best = Some((t, objective, pc, ic));
        }
    }
    let (t, objective, pc, ic) = best.expect("at least two candidates");
    Ok(ThresholdResult {
        best_threshold: t,
        pixel: MetricPair {
            f1: f1_score(&pc),
            acc: accuracy(&pc)?,
        },
        image: MetricPair {
            f1: f1_score(&ic),
            acc: accuracy(&ic)?,
        },
        objective,
        thresholds_evaluated: candidates.len(),
    })
}

/// One graded multiple-choice answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaOutcome {
    pub subtask: Subtask,
    pub is_normal_image: bool,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderstandingReport {
    /// Accuracy per subtask with at least one record. Anomaly discrimination
    /// is the mean of its normal-image and abnormal-image accuracies.
    pub per_subtask: BTreeMap<Subtask, f64>,
    pub discrimination_normal_acc: Option<f64>,
    pub discrimination_abnormal_acc: Option<f64>,
    /// Unweighted mean over `per_subtask`.
    pub average: f64,
    /// Subtasks without records, excluded from `average`.
    pub missing_subtasks: Vec<Subtask>,
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn mmad_score(records: &[QaOutcome]) -> Result<UnderstandingReport> {
    if records.is_empty() {
        return Err(Error::Argument("no QA records to score".into()));
    }
    // (correct, total) per subtask, split by normal / abnormal image for discrimination
    let mut plain: BTreeMap<Subtask, (usize, usize)> = BTreeMap::new();
    let mut disc = [(0usize, 0usize); 2];
    for r in records {
        if r.subtask == Subtask::AnomalyDiscrimination {
            let slot = &mut disc[usize::from(!r.is_normal_image)];
            slot.0 += usize::from(r.correct);
            slot.1 += 1;
        } else {
            let slot = plain.entry(r.subtask).or_default();
            slot.0 += usize::from(r.correct);
            slot.1 += 1;
        }
    }

    let mut per_subtask = BTreeMap::new();
    let normal_acc = fraction(disc[0].0, disc[0].1);
    let abnormal_acc = fraction(disc[1].0, disc[1].1);
    let class_accs: Vec<f64> = [normal_acc, abnormal_acc].into_iter().flatten().collect();
    if !class_accs.is_empty() {
        if class_accs.len() == 1 {
            log::warn!("anomaly discrimination has only one image class; using its accuracy alone");
        }
        per_subtask.insert(
            Subtask::AnomalyDiscrimination,
            class_accs.iter().sum::<f64>() / class_accs.len() as f64,
        );
    }
    for (task, (hits, total)) in plain {
        per_subtask.insert(task, hits as f64 / total as f64);
    }
    let missing_subtasks: Vec<Subtask> = Subtask::ALL
        .into_iter()
        .filter(|t| !per_subtask.contains_key(t))
        .collect();
    for t in &missing_subtasks {
        log::warn!("subtask {t:?} has no records; excluded from the average");
    }
    let average = per_subtask.values().sum::<f64>() / per_subtask.len() as f64;
    Ok(UnderstandingReport {
        per_subtask,
        discrimination_normal_acc: normal_acc,
        discrimination_abnormal_acc: abnormal_acc,
        average,
        missing_subtasks,
    })
}
