use std::collections::HashMap;
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tamask::dataset_io::{
    load_manifest, load_qa, prepare_examples, read_jsonl, read_jsonl_from, resolve_path, scan_mvtec,
    write_jsonl, Label, Manifest, ManifestEntry, PrepConfig, Split,
};
use tamask::mask_grid::{mask_to_grid, rasterize, resize_mask_nearest, BinaryMask};
use tamask::metrics::{evaluate, mmad_score, sweep_threshold, EvalConfig, QaOutcome, ScoredSample, SweepConfig};
use tamask::response_parser::{extract_answer_letter, parse_response, AnswerLetter};
use tamask::rewards::{group_advantages, total_reward, RewardBreakdown};
use tamask::score_map::ScoreMap;
use tamask::sim_policy::{simulate_group, NoiseSpec};
use tamask::tam_codec::{decode as decode_tam, encode as encode_tam};

use crate::{GridArgs, RewardArgs, SizeArgs};

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(io::BufWriter::new(
            fs::File::create(p).map_err(|e| tamask::Error::Io { path: p.to_path_buf(), source: e })?,
        )),
        _ => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    if path == Path::new("-") {
        io::stdin().read_to_string(&mut s)?;
    } else {
        s = fs::read_to_string(path).map_err(|e| tamask::Error::Io { path: path.to_path_buf(), source: e })?;
    }
    Ok(s)
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    if path == Path::new("-") {
        Ok(read_jsonl_from(BufReader::new(io::stdin().lock()), Path::new("<stdin>"))?)
    } else {
        Ok(read_jsonl(path)?)
    }
}

fn data_root(explicit: Option<&Path>, manifest: &Path) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn mask_loader(root: PathBuf) -> impl Fn(&ManifestEntry) -> tamask::Result<BinaryMask> + Sync {
    move |entry| {
        let rel = entry
            .mask_path
            .as_ref()
            .ok_or_else(|| tamask::Error::Dataset(format!("'{}' has no mask_path", entry.image_id)))?;
        BinaryMask::load_png(resolve_path(&root, rel))
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Mask image; any nonzero pixel is anomalous.
    #[arg(long)]
    mask: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    size: SizeArgs,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn encode(args: EncodeArgs) -> Result<()> {
    let spec = args.grid.spec()?;
    let mask = BinaryMask::load_png(&args.mask)?;
    let grid = mask_to_grid(&mask, &spec, args.size.normalize())?;
    let mut out = open_output(args.out.as_deref())?;
    writeln!(out, "{}", encode_tam(&grid))?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// TAM string to decode.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    seg: Option<String>,
    /// File holding the TAM string ("-" for standard input).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    /// Width of the rasterized mask.
    #[arg(long, default_value_t = 512)]
    width: usize,
    /// Height of the rasterized mask.
    #[arg(long, default_value_t = 512)]
    height: usize,
    /// Write a PNG mask here; otherwise print the patch grid as rows of 0/1.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn decode(args: DecodeArgs) -> Result<()> {
    let spec = args.grid.spec()?;
    let text = match (&args.seg, &args.input) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => read_text(p)?,
        (None, None) => bail!("either --seg or --in is required"),
    };
    let grid = decode_tam(&text, &spec).map_err(tamask::Error::from)?;
    match &args.out {
        Some(path) => rasterize(&grid, args.width, args.height)?.save_png(path)?,
        None => {
            let mut out = open_output(None)?;
            for r in 0..grid.rows() {
                let line: String = grid.row(r).iter().map(|&b| if b { '1' } else { '0' }).collect();
                writeln!(out, "{line}")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// JSONL of {image_id?, question_id?, response} ("-" for standard input).
    #[arg(long = "in", default_value = "-")]
    input: PathBuf,
    /// Treat the whole input as a single raw response.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct ResponseRecord {
    #[serde(default)]
    image_id: Option<String>,
    #[serde(default)]
    question_id: Option<String>,
    response: String,
}

#[derive(Debug, Serialize)]
struct ParsedRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    image_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    question_id: Option<String>,
    seg: Option<String>,
    think: Option<String>,
    answer: Option<String>,
    well_formed: bool,
    letter: Option<AnswerLetter>,
}

fn parsed_record(image_id: Option<String>, question_id: Option<String>, text: &str) -> ParsedRecord {
    let r = parse_response(text);
    let letter = r.answer.as_deref().and_then(extract_answer_letter);
    ParsedRecord {
        image_id,
        question_id,
        seg: r.seg,
        think: r.think,
        answer: r.answer,
        well_formed: r.well_formed,
        letter,
    }
}

pub fn parse(args: ParseArgs) -> Result<()> {
    let records: Vec<ParsedRecord> = if args.raw {
        vec![parsed_record(None, None, &read_text(&args.input)?)]
    } else {
        read_records::<ResponseRecord>(&args.input)?
            .into_iter()
            .map(|(_, r)| parsed_record(r.image_id, r.question_id, &r.response))
            .collect()
    };
    let mut out = open_output(args.out.as_deref())?;
    write_jsonl(&records, &mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct RewardCmdArgs {
    /// JSONL of {response, gt_seg, gt_answer} ("-" for standard input).
    #[arg(long = "in", default_value = "-")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    reward: RewardArgs,
    /// Also emit group-relative advantages over consecutive blocks of this many lines.
    #[arg(long)]
    group_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct RewardInput {
    response: String,
    gt_seg: String,
    gt_answer: AnswerLetter,
}

#[derive(Debug, Serialize)]
struct RewardOutput {
    #[serde(flatten)]
    breakdown: RewardBreakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    advantage: Option<f64>,
}

pub fn reward(args: RewardCmdArgs) -> Result<()> {
    let spec = args.grid.spec()?;
    let cfg = args.reward.config();
    cfg.validate()?;
    let origin = args.input.clone();
    let rows: Vec<(usize, RewardInput)> = read_records(&args.input)?;
    let breakdowns = rows
        .par_iter()
        .map(|(line, row)| {
            let gt = decode_tam(&row.gt_seg, &spec)
                .map_err(|e| tamask::Error::Schema { path: origin.clone(), line: *line, message: format!("gt_seg: {e}") })?;
            Ok(total_reward(&row.response, &gt, row.gt_answer, &cfg))
        })
        .collect::<tamask::Result<Vec<_>>>()?;

    let advantages: Vec<Option<f64>> = match args.group_size {
        None => vec![None; breakdowns.len()],
        Some(0) => bail!(tamask::Error::Argument("--group-size must be positive".into())),
        Some(n) => {
            if breakdowns.len() % n != 0 {
                bail!(tamask::Error::Argument(format!(
                    "{} records do not split into groups of {n}",
                    breakdowns.len()
                )));
            }
            let mut adv = Vec::with_capacity(breakdowns.len());
            for chunk in breakdowns.chunks(n) {
                let totals: Vec<f64> = chunk.iter().map(|b| b.total).collect();
                adv.extend(group_advantages(&totals, &cfg)?.into_iter().map(Some));
            }
            adv
        }
    };

    let mut out = open_output(args.out.as_deref())?;
    write_jsonl(
        breakdowns
            .into_iter()
            .zip(advantages)
            .map(|(breakdown, advantage)| RewardOutput { breakdown, advantage }),
        &mut out,
    )?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest JSONL.
    #[arg(long)]
    manifest: PathBuf,
    /// Detection predictions: JSONL of {image_id, seg} or {image_id, response}.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// QA items JSONL, for multiple-choice scoring.
    #[arg(long, requires = "qa_pred")]
    qa: Option<PathBuf>,
    /// QA responses: JSONL of {question_id, response}.
    #[arg(long, requires = "qa")]
    qa_pred: Option<PathBuf>,
    /// Directory relative mask paths are resolved against (default: the manifest's directory).
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    /// Resolution pixel metrics are computed at.
    #[arg(long, default_value_t = 512)]
    size: usize,
    /// Report class-balanced instead of plain accuracy in the detection table.
    #[arg(long)]
    balanced_acc: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    image_id: String,
    #[serde(default)]
    seg: Option<String>,
    #[serde(default)]
    response: Option<String>,
}

#[derive(Debug, Deserialize)]
struct QaResponse {
    question_id: String,
    response: String,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    detection: Option<tamask::metrics::DetectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    understanding: Option<tamask::metrics::UnderstandingReport>,
}

fn load_predictions(path: &Path) -> Result<HashMap<String, Option<String>>> {
    let mut out = HashMap::new();
    for (line, rec) in read_records::<PredictionRecord>(path)? {
        let seg = match (rec.seg, rec.response) {
            (Some(seg), _) => Some(seg),
            (None, Some(resp)) => parse_response(&resp).seg,
            (None, None) => {
                return Err(tamask::Error::Schema {
                    path: path.to_path_buf(),
                    line,
                    message: "record needs a seg or response field".into(),
                }
                .into())
            }
        };
        if out.insert(rec.image_id.clone(), seg).is_some() {
            return Err(tamask::Error::Schema {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate prediction for '{}'", rec.image_id),
            }
            .into());
        }
    }
    Ok(out)
}

fn score_qa(manifest: &Manifest, qa: &Path, responses: &Path) -> Result<tamask::metrics::UnderstandingReport> {
    let items = load_qa(qa)?;
    let mut answers: HashMap<String, Option<AnswerLetter>> = HashMap::new();
    for (_, r) in read_records::<QaResponse>(responses)? {
        let letter = parse_response(&r.response).answer.as_deref().and_then(extract_answer_letter);
        answers.insert(r.question_id, letter);
    }
    let mut unanswered = 0usize;
    let mut outcomes = Vec::with_capacity(items.len());
    for item in &items {
        let entry = manifest
            .get(&item.image_id)
            .ok_or_else(|| tamask::Error::Dataset(format!("QA image '{}' is not in the manifest", item.image_id)))?;
        let pred = answers.get(&item.question_id).copied().unwrap_or_else(|| {
            unanswered += 1;
            None
        });
        outcomes.push(QaOutcome {
            subtask: item.subtask,
            is_normal_image: entry.label == Label::Normal,
            correct: pred == Some(item.gt_answer),
        });
    }
    if unanswered > 0 {
        log::warn!("{unanswered} questions have no response; scored as incorrect");
    }
    Ok(mmad_score(&outcomes)?)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if args.pred.is_none() && args.qa.is_none() {
        bail!(tamask::Error::Argument("nothing to evaluate: pass --pred and/or --qa".into()));
    }
    let manifest = load_manifest(&args.manifest)?;
    let root = data_root(args.data_root.as_deref(), &args.manifest);

    let detection = match &args.pred {
        Some(pred) => {
            let predictions = load_predictions(pred)?;
            let cfg = EvalConfig {
                spec: args.grid.spec()?,
                normalize_size: args.size,
                balanced_accuracy: args.balanced_acc,
            };
            Some(evaluate(&predictions, &manifest, &cfg, mask_loader(root))?)
        }
        None => None,
    };
    let understanding = match (&args.qa, &args.qa_pred) {
        (Some(qa), Some(resp)) => Some(score_qa(&manifest, qa, resp)?),
        _ => None,
    };

    let mut out = open_output(args.out.as_deref())?;
    match args.format {
        ReportFormat::Json => {
            serde_json::to_writer(&mut out, &EvalReport { detection, understanding })?;
            writeln!(out)?;
        }
        ReportFormat::Csv => {
            if let Some(d) = &detection {
                out.write_all(d.to_csv().as_bytes())?;
            }
            if let Some(u) = &understanding {
                if detection.is_some() {
                    writeln!(out)?;
                }
                writeln!(out, "subtask,accuracy")?;
                for (task, acc) in &u.per_subtask {
                    writeln!(out, "{},{acc}", serde_json::to_value(task)?.as_str().unwrap_or_default())?;
                }
                writeln!(out, "average,{}", u.average)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of score maps, one `<image_id>.pfm` per test image.
    #[arg(long)]
    scores: PathBuf,
    /// Optional JSONL of {image_id, score}; defaults to the maximum of each map.
    #[arg(long)]
    image_scores: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    lo: f64,
    #[arg(long, default_value_t = 100.0)]
    hi: f64,
    #[arg(long, default_value_t = 1001)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct ImageScore {
    image_id: String,
    score: f64,
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let root = data_root(args.data_root.as_deref(), &args.manifest);
    let load_mask = mask_loader(root);
    let image_scores: Option<HashMap<String, f64>> = match &args.image_scores {
        Some(p) => Some(
            read_records::<ImageScore>(p)?
                .into_iter()
                .map(|(_, s)| (s.image_id, s.score))
                .collect(),
        ),
        None => None,
    };
    let entries: Vec<&ManifestEntry> = manifest.entries().iter().filter(|e| e.split == Split::Test).collect();
    let samples = entries
        .par_iter()
        .map(|e| -> tamask::Result<ScoredSample> {
            let map = ScoreMap::load(args.scores.join(format!("{}.pfm", e.image_id)))?;
            let gt_mask = match e.label {
                Label::Anomalous => resize_mask_nearest(&load_mask(e)?, map.width(), map.height())?,
                Label::Normal => BinaryMask::zeros(map.width(), map.height())?,
            };
            let image_score = match &image_scores {
                Some(m) => *m
                    .get(&e.image_id)
                    .ok_or_else(|| tamask::Error::Dataset(format!("no image score for '{}'", e.image_id)))?,
                None => f64::from(map.max()),
            };
            Ok(ScoredSample {
                pixel_scores: map,
                image_score,
                gt_mask,
                gt_anomalous: e.label == Label::Anomalous,
            })
        })
        .collect::<tamask::Result<Vec<_>>>()?;
    let result = sweep_threshold(
        &samples,
        &SweepConfig {
            lo: args.lo,
            hi: args.hi,
            steps: args.steps,
        },
    )?;
    let mut out = open_output(args.out.as_deref())?;
    serde_json::to_writer(&mut out, &result)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground-truth TAM string (empty = normal image).
    #[arg(long, default_value = "")]
    seg: String,
    /// Ground-truth option letter.
    #[arg(long, default_value = "A")]
    answer: AnswerLetter,
    /// Group size.
    #[arg(long, default_value_t = tamask::rewards::DEFAULT_GROUP_SIZE)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    p_flip: f64,
    #[arg(long, default_value_t = 0.0)]
    p_drop_tag: f64,
    #[arg(long, default_value_t = 0.0)]
    p_wrong_answer: f64,
    #[arg(long, default_value_t = 0)]
    max_extra_runs: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    reward: RewardArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let spec = args.grid.spec()?;
    let gt = decode_tam(&args.seg, &spec).map_err(tamask::Error::from)?;
    let noise = NoiseSpec {
        p_flip_patch: args.p_flip,
        p_drop_tag: args.p_drop_tag,
        p_wrong_answer: args.p_wrong_answer,
        max_extra_runs: args.max_extra_runs,
    };
    let result = simulate_group(&gt, args.answer, args.n, &noise, args.seed, &args.reward.config())?;
    let mut out = open_output(args.out.as_deref())?;
    serde_json::to_writer(&mut out, &result)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Dataset root holding one directory per category.
    #[arg(long)]
    root: PathBuf,
    /// Manifest path (default: standard output). Paths inside are relative to --root.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn scan(args: ScanArgs) -> Result<()> {
    let manifest = scan_mvtec(&args.root)?;
    let mut out = open_output(args.out.as_deref())?;
    write_jsonl(manifest.entries(), &mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// QA items JSONL.
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Seed for 1-shot references not fixed in the QA file.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    size: SizeArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn prep_data(args: PrepArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let items = load_qa(&args.qa).with_context(|| format!("loading {}", args.qa.display()))?;
    let cfg = PrepConfig {
        spec: args.grid.spec()?,
        normalize_size: args.size.normalize(),
        seed: args.seed,
    };
    let root = data_root(args.data_root.as_deref(), &args.manifest);
    let examples = prepare_examples(&items, &manifest, &cfg, mask_loader(root))?;
    let mut out = open_output(args.out.as_deref())?;
    write_jsonl(&examples, &mut out)?;
    out.flush()?;
    Ok(())
}
