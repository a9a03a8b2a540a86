//! Dataset manifests, MVTec-style directory ingestion, 1-shot reference
//! sampling and prompt assembly.
//!
//! The manifest is a JSONL file with one image per line:
//!
//! ```text
//! {"image_id":"bottle/test/broken_large/000","category":"bottle",
//!  "image_path":"bottle/test/broken_large/000.png",
//!  "mask_path":"bottle/ground_truth/broken_large/000_mask.png",
//!  "label":"anomalous","split":"test"}
//! ```
//!
//! `mask_path` is present exactly for anomalous entries. Relative paths are
//! resolved against a data root chosen by the caller.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_grid::{mask_to_grid, BinaryMask, GridSpec};
use crate::response_parser::AnswerLetter;
use crate::tam_codec::encode;

/// System prompt that asks for the `<seg>/<think>/<answer>` response layout.
pub const SYSTEM_PROMPT: &str = "You are a special assistant for analysis image. The user asks a question, and you answer with the option's letter from the given choices directly. Firstly, you should detect anomalies in patches within <seg></seg> tags. Then think about the reasoning process in the mind and then provide the user with the answer. The reasoning process and answer are enclosed within <think> </think> and <answer> </answer> tags, respectively, i.e., <seg>segmentation results here</seg><think> reasoning process here </think><answer> answer letter here </answer>";

/// Placeholder the chat template replaces with image embeddings.
pub const IMAGE_TOKEN: &str = "<image>";

/// Prefix introducing the normal reference image in 1-shot prompts.
pub const ONE_SHOT_PREFIX: &str = "<image> This is an image of a normal object.";

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub category: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub label: Label,
    pub split: Split,
}

impl ManifestEntry {
    fn check(&self) -> std::result::Result<(), String> {
        if self.image_id.is_empty() {
            return Err("empty image_id".into());
        }
        match (self.label, &self.mask_path) {
            (Label::Anomalous, None) => Err(format!("anomalous image '{}' has no mask_path", self.image_id)),
            (Label::Normal, Some(_)) => Err(format!("normal image '{}' has a mask_path", self.image_id)),
            _ => Ok(()),
        }
    }
}

/// Validated, immutable list of images with a by-id index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    index: HashMap<String, usize>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            e.check().map_err(Error::Dataset)?;
            if index.insert(e.image_id.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate image_id '{}'", e.image_id)));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.index.get(image_id).map(|&i| &self.entries[i])
    }

    /// Distinct categories in sorted order.
    pub fn categories(&self) -> Vec<&str> {
        let mut cats: Vec<&str> = self.entries.iter().map(|e| e.category.as_str()).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }
}

/// `path` itself if absolute, otherwise `root/path`.
pub fn resolve_path(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

/// Reads a JSONL file, skipping blank lines. Items are paired with their
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<(usize, T)>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl_from(BufReader::new(file), path)
}

/// Like [`read_jsonl`] over any reader; `origin` only labels errors.
pub fn read_jsonl_from<T: DeserializeOwned, R: BufRead>(reader: R, origin: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::schema(origin, i + 1, e.to_string()))?;
        out.push((i + 1, item));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>, mut out: impl Write) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let rows: Vec<(usize, ManifestEntry)> = read_jsonl(path)?;
    let mut seen = HashMap::new();
    for (line, e) in &rows {
        e.check().map_err(|m| Error::schema(path, *line, m))?;
        if let Some(first) = seen.insert(e.image_id.clone(), *line) {
            return Err(Error::schema(
                path,
                *line,
                format!("duplicate image_id '{}' (first on line {first})", e.image_id),
            ));
        }
    }
    Manifest::new(rows.into_iter().map(|(_, e)| e).collect())
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_jsonl(manifest.entries(), &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        out.push(entry.map_err(|e| Error::io(path, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Ingests an MVTec-AD style tree:
///
/// ```text
/// <category>/train/good/*.png
/// <category>/test/<defect>/*.png          (defect "good" = normal)
/// <category>/ground_truth/<defect>/<stem>_mask.png   (or <stem>.png)
/// ```
///
/// Emits every test image plus the normal train images (the pool 1-shot
/// references are drawn from). Paths are stored relative to `root`.
pub fn scan_mvtec(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    for cat_dir in sorted_dir(root)? {
        if !cat_dir.join("test").is_dir() {
            continue;
        }
        let category = file_name(&cat_dir);
        for defect_dir in sorted_dir(&cat_dir.join("test"))? {
            if !defect_dir.is_dir() {
                continue;
            }
            let defect = file_name(&defect_dir);
            for img in sorted_dir(&defect_dir)?.into_iter().filter(|p| is_image(p)) {
                let stem = file_stem(&img);
                let rel_img = PathBuf::from(&category).join("test").join(&defect).join(file_name(&img));
                let (label, mask_path) = if defect == "good" {
                    (Label::Normal, None)
                } else {
                    let gt_dir = PathBuf::from(&category).join("ground_truth").join(&defect);
                    let mask = [format!("{stem}_mask.png"), format!("{stem}.png")]
                        .into_iter()
                        .map(|n| gt_dir.join(n))
                        .find(|p| root.join(p).is_file())
                        .ok_or_else(|| {
                            Error::Dataset(format!("missing ground-truth mask for {}", root.join(&rel_img).display()))
                        })?;
                    (Label::Anomalous, Some(mask))
                };
                entries.push(ManifestEntry {
                    image_id: format!("{category}/test/{defect}/{stem}"),
                    category: category.clone(),
                    image_path: rel_img,
                    mask_path,
                    label,
                    split: Split::Test,
                });
            }
        }
        let train_good = cat_dir.join("train").join("good");
        if train_good.is_dir() {
            for img in sorted_dir(&train_good)?.into_iter().filter(|p| is_image(p)) {
                entries.push(ManifestEntry {
                    image_id: format!("{category}/train/good/{}", file_stem(&img)),
                    category: category.clone(),
                    image_path: PathBuf::from(&category).join("train").join("good").join(file_name(&img)),
                    mask_path: None,
                    label: Label::Normal,
                    split: Split::Train,
                });
            }
        }
    }
    if entries.is_empty() {
        log::warn!("no images found under {}", root.display());
    }
    Manifest::new(entries)
}

/// Seeded uniform choice among the category's normal train images (sorted by
/// id, so the result does not depend on manifest order).
pub fn pick_reference(manifest: &Manifest, category: &str, seed: u64) -> Result<String> {
    let mut pool: Vec<&str> = manifest
        .entries()
        .iter()
        .filter(|e| e.category == category && e.label == Label::Normal && e.split == Split::Train)
        .map(|e| e.image_id.as_str())
        .collect();
    if pool.is_empty() {
        return Err(Error::Dataset(format!(
            "category '{category}' has no normal train image to use as reference"
        )));
    }
    pool.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pool[rng.gen_range(0..pool.len())].to_string())
}

/// The seven multiple-choice question families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtask {
    #[serde(alias = "Anomaly Discrimination")]
    AnomalyDiscrimination,
    #[serde(alias = "Defect Classification")]
    DefectClassification,
    #[serde(alias = "Defect Localization")]
    DefectLocalization,
    #[serde(alias = "Defect Description")]
    DefectDescription,
    #[serde(alias = "Defect Analysis")]
    DefectAnalysis,
    #[serde(alias = "Object Classification")]
    ObjectClassification,
    #[serde(alias = "Object Analysis")]
    ObjectAnalysis,
}

impl Subtask {
    pub const ALL: [Subtask; 7] = [
        Subtask::AnomalyDiscrimination,
        Subtask::DefectClassification,
        Subtask::DefectLocalization,
        Subtask::DefectDescription,
        Subtask::DefectAnalysis,
        Subtask::ObjectClassification,
        Subtask::ObjectAnalysis,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShotMode {
    #[serde(rename = "0-shot")]
    ZeroShot,
    #[serde(rename = "1-shot")]
    OneShot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question_id: String,
    pub image_id: String,
    pub subtask: Subtask,
    pub question: String,
    pub options: BTreeMap<AnswerLetter, String>,
    pub gt_answer: AnswerLetter,
    pub mode: ShotMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image_id: Option<String>,
}

impl QaItem {
    pub fn validate(&self) -> Result<()> {
        if !self.options.contains_key(&self.gt_answer) {
            return Err(Error::Dataset(format!(
                "question '{}': answer {} is not among the options",
                self.question_id, self.gt_answer
            )));
        }
        Ok(())
    }
}

pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QaItem>> {
    let path = path.as_ref();
    let rows: Vec<(usize, QaItem)> = read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, item)| {
            item.validate().map_err(|e| Error::schema(path, line, e.to_string()))?;
            Ok(item)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub user_prompt: String,
    /// One per image token in `user_prompt`, in order.
    pub images: Vec<ImageRef>,
}

fn lookup<'m>(manifest: &'m Manifest, id: &str) -> Result<&'m ManifestEntry> {
    manifest
        .get(id)
        .ok_or_else(|| Error::Dataset(format!("image id '{id}' is not in the manifest")))
}

pub fn build_prompt(item: &QaItem, manifest: &Manifest) -> Result<PromptBundle> {
    item.validate()?;
    let query = lookup(manifest, &item.image_id)?;
    let mut images = Vec::with_capacity(2);
    let mut user = String::new();
    if item.mode == ShotMode::OneShot {
        let ref_id = item.reference_image_id.as_deref().ok_or_else(|| {
            Error::Dataset(format!("1-shot question '{}' has no reference image", item.question_id))
        })?;
        let reference = lookup(manifest, ref_id)?;
        if reference.label != Label::Normal {
            return Err(Error::Dataset(format!("reference image '{ref_id}' is not normal")));
        }
        if reference.category != query.category {
            return Err(Error::Dataset(format!(
                "reference '{ref_id}' is from '{}', query from '{}'",
                reference.category, query.category
            )));
        }
        images.push(ImageRef {
            image_id: reference.image_id.clone(),
            path: reference.image_path.clone(),
        });
        user.push_str(ONE_SHOT_PREFIX);
        user.push('\n');
    }
    images.push(ImageRef {
        image_id: query.image_id.clone(),
        path: query.image_path.clone(),
    });
    user.push_str(IMAGE_TOKEN);
    user.push('\n');
    user.push_str(item.question.trim());
    for (letter, text) in &item.options {
        user.push_str(&format!("\n{letter}. {}", text.trim()));
    }
    Ok(PromptBundle {
        system_prompt: SYSTEM_PROMPT.to_string(),
        user_prompt: user,
        images,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub spec: GridSpec,
    pub normalize_size: Option<usize>,
    /// Seed for references of 1-shot items that do not name one.
    pub seed: u64,
}

/// Training / inference record: the prompt plus the verifiable targets the
/// rewards are computed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedExample {
    pub question_id: String,
    pub image_id: String,
    pub subtask: Subtask,
    pub prompt: PromptBundle,
    pub gt_seg: String,
    pub gt_answer: AnswerLetter,
}

/// Fills missing 1-shot references (seed mixed with the question index),
/// builds the prompt and encodes the ground-truth mask.
pub fn prepare_examples<F>(
    items: &[QaItem],
    manifest: &Manifest,
    cfg: &PrepConfig,
    load_mask: F,
) -> Result<Vec<PreparedExample>>
where
    F: Fn(&ManifestEntry) -> Result<BinaryMask>,
{
    let mut seg_cache: HashMap<&str, String> = HashMap::new();
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let mut item = item.clone();
        let query = lookup(manifest, &item.image_id)?;
        if item.mode == ShotMode::OneShot && item.reference_image_id.is_none() {
            let seed = crate::sim_policy::split_seed(cfg.seed, i as u64);
            item.reference_image_id = Some(pick_reference(manifest, &query.category, seed)?);
        }
        let prompt = build_prompt(&item, manifest)?;
        let gt_seg = match seg_cache.get(query.image_id.as_str()) {
            Some(s) => s.clone(),
            None => {
                let seg = match query.label {
                    Label::Normal => String::new(),
                    Label::Anomalous => encode(&mask_to_grid(&load_mask(query)?, &cfg.spec, cfg.normalize_size)?).text,
                };
                seg_cache.insert(query.image_id.as_str(), seg.clone());
                seg
            }
        };
        out.push(PreparedExample {
            question_id: item.question_id,
            image_id: item.image_id,
            subtask: item.subtask,
            prompt,
            gt_seg,
            gt_answer: item.gt_answer,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, cat: &str, label: Label, split: Split) -> ManifestEntry {
        ManifestEntry {
            image_id: id.into(),
            category: cat.into(),
            image_path: format!("{id}.png").into(),
            mask_path: (label == Label::Anomalous).then(|| format!("{id}_mask.png").into()),
            label,
            split,
        }
    }

    fn sample_manifest() -> Manifest {
        Manifest::new(vec![
            entry("bottle/test/good/0", "bottle", Label::Normal, Split::Test),
            entry("bottle/test/crack/0", "bottle", Label::Anomalous, Split::Test),
            entry("bottle/train/good/0", "bottle", Label::Normal, Split::Train),
            entry("bottle/train/good/1", "bottle", Label::Normal, Split::Train),
            entry("bottle/train/good/2", "bottle", Label::Normal, Split::Train),
            entry("cable/train/good/0", "cable", Label::Normal, Split::Train),
            entry("cable/test/bent/0", "cable", Label::Anomalous, Split::Test),
        ])
        .unwrap()
    }

    fn item(mode: ShotMode, reference: Option<&str>) -> QaItem {
        let mut options = BTreeMap::new();
        for (l, t) in [('D', "four"), ('B', "two"), ('A', "one"), ('C', "three")] {
            options.insert(AnswerLetter::new(l).unwrap(), t.to_string());
        }
        QaItem {
            question_id: "q1".into(),
            image_id: "bottle/test/crack/0".into(),
            subtask: Subtask::DefectClassification,
            question: "What kind of defect is visible?".into(),
            options,
            gt_answer: AnswerLetter::new('B').unwrap(),
            mode,
            reference_image_id: reference.map(str::to_string),
        }
    }

    #[test]
    fn manifest_invariants() {
        let mut bad = entry("a", "c", Label::Anomalous, Split::Test);
        bad.mask_path = None;
        assert!(Manifest::new(vec![bad]).is_err());
        let mut bad = entry("a", "c", Label::Normal, Split::Test);
        bad.mask_path = Some("m.png".into());
        assert!(Manifest::new(vec![bad]).is_err());
        let e = entry("a", "c", Label::Normal, Split::Test);
        assert!(Manifest::new(vec![e.clone(), e]).is_err());
        assert_eq!(sample_manifest().categories(), vec!["bottle", "cable"]);
    }

    #[test]
    fn manifest_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = sample_manifest();
        save_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn manifest_errors_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(
            &path,
            "{\"image_id\":\"a\",\"category\":\"c\",\"image_path\":\"a.png\",\"label\":\"normal\",\"split\":\"test\"}\n\n{\"category\":\"c\",\"image_path\":\"b.png\",\"label\":\"normal\",\"split\":\"test\"}\n",
        )
        .unwrap();
        match load_manifest(&path) {
            Err(Error::Schema { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("image_id"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "").unwrap();
        assert!(load_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn reference_selection() {
        let m = sample_manifest();
        for seed in 0..20 {
            assert_eq!(pick_reference(&m, "cable", seed).unwrap(), "cable/train/good/0");
        }
        assert_eq!(pick_reference(&m, "bottle", 7).unwrap(), pick_reference(&m, "bottle", 7).unwrap());
        assert!(pick_reference(&m, "screw", 0).is_err());

        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for seed in 0..1000 {
            let id = pick_reference(&m, "bottle", seed).unwrap();
            let e = m.get(&id).unwrap();
            assert_eq!((e.label, e.split, e.category.as_str()), (Label::Normal, Split::Train, "bottle"));
            *freq.entry(id).or_default() += 1;
        }
        assert_eq!(freq.len(), 3);
        assert!(freq.values().all(|&n| n > 250), "{freq:?}");
    }

    #[test]
    fn zero_shot_prompt() {
        let m = sample_manifest();
        let p = build_prompt(&item(ShotMode::ZeroShot, None), &m).unwrap();
        assert_eq!(p.system_prompt, SYSTEM_PROMPT);
        assert_eq!(p.user_prompt.matches(IMAGE_TOKEN).count(), 1);
        assert_eq!(p.images.len(), 1);
        assert_eq!(
            p.user_prompt,
            "<image>\nWhat kind of defect is visible?\nA. one\nB. two\nC. three\nD. four"
        );
    }

    #[test]
    fn one_shot_prompt() {
        let m = sample_manifest();
        let p = build_prompt(&item(ShotMode::OneShot, Some("bottle/train/good/1")), &m).unwrap();
        assert!(p.user_prompt.starts_with("<image> This is an image of a normal object."));
        assert_eq!(p.user_prompt.matches(IMAGE_TOKEN).count(), 2);
        assert_eq!(p.images[0].image_id, "bottle/train/good/1");
        assert_eq!(p.images[1].image_id, "bottle/test/crack/0");
    }

    #[test]
    fn prompt_errors() {
        let m = sample_manifest();
        assert!(build_prompt(&item(ShotMode::OneShot, None), &m).is_err());
        assert!(build_prompt(&item(ShotMode::OneShot, Some("cable/train/good/0")), &m).is_err());
        assert!(build_prompt(&item(ShotMode::OneShot, Some("bottle/test/crack/0")), &m).is_err());
        let mut unknown = item(ShotMode::ZeroShot, None);
        unknown.image_id = "nope".into();
        assert!(build_prompt(&unknown, &m).is_err());
        let mut bad_answer = item(ShotMode::ZeroShot, None);
        bad_answer.gt_answer = AnswerLetter::new('E').unwrap();
        assert!(build_prompt(&bad_answer, &m).is_err());
    }

    #[test]
    fn qa_item_serde() {
        let json = r#"{"question_id":"q","image_id":"i","subtask":"Anomaly Discrimination","question":"Is there a defect?","options":{"B":"No","A":"Yes"},"gt_answer":"a","mode":"1-shot"}"#;
        let q: QaItem = serde_json::from_str(json).unwrap();
        assert_eq!(q.subtask, Subtask::AnomalyDiscrimination);
        assert_eq!(q.mode, ShotMode::OneShot);
        assert_eq!(q.gt_answer.as_char(), 'A');
        let back = serde_json::to_string(&q).unwrap();
        assert!(back.contains(r#""options":{"A":"Yes","B":"No"}"#), "{back}");
        assert!(back.contains(r#""subtask":"anomaly_discrimination""#));
    }

    #[test]
    fn prepared_examples_fill_reference_and_target() {
        let m = sample_manifest();
        let spec = GridSpec::square(2).unwrap();
        let cfg = PrepConfig {
            spec,
            normalize_size: Some(8),
            seed: 3,
        };
        let load = |_: &ManifestEntry| {
            let mut mask = BinaryMask::zeros(4, 4)?;
            mask.set(3, 0, true);
            Ok(mask)
        };
        let out = prepare_examples(&[item(ShotMode::OneShot, None)], &m, &cfg, load).unwrap();
        assert_eq!(out[0].gt_seg, "(0,1)");
        assert_eq!(out[0].prompt.images.len(), 2);
        let again = prepare_examples(&[item(ShotMode::OneShot, None)], &m, &cfg, load).unwrap();
        assert_eq!(out, again);
    }
}
