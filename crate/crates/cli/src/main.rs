//! `tamask` command-line entry point.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tamask::mask_grid::{GridSpec, DEFAULT_NORMALIZE_SIZE};

const EXIT_INTERNAL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_SCHEMA: u8 = 4;
const EXIT_DATA: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "tamask", version, about = "Text-as-Mask encoding, response rewards and anomaly detection evaluation")]
struct Cli {
    /// Worker threads for parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct GridArgs {
    /// Patch grid as ROWSxCOLS.
    #[arg(long, default_value = "24x24", value_parser = parse_grid)]
    grid: (usize, usize),

    /// Minimum anomalous fraction of a patch for it to be labeled anomalous (0 = any pixel).
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
}

impl GridArgs {
    pub fn spec(&self) -> tamask::Result<GridSpec> {
        GridSpec::new(self.grid.0, self.grid.1, self.tau)
    }
}

#[derive(Debug, Args, Clone, Copy)]
pub struct SizeArgs {
    /// Side length masks are resized to (nearest neighbor) before labeling.
    #[arg(long, default_value_t = DEFAULT_NORMALIZE_SIZE)]
    size: usize,

    /// Label masks at their native resolution.
    #[arg(long)]
    no_normalize: bool,
}

impl SizeArgs {
    pub fn normalize(&self) -> Option<usize> {
        (!self.no_normalize).then_some(self.size)
    }
}

#[derive(Debug, Args, Clone, Copy)]
pub struct RewardArgs {
    /// Scale of the detection F1 reward on anomalous images.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,

    #[arg(long, default_value_t = 1.0)]
    correct_reward: f64,

    #[arg(long, default_value_t = 0.1)]
    incorrect_reward: f64,

    /// Added to the group standard deviation when normalizing advantages.
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
}

impl RewardArgs {
    pub fn config(&self) -> tamask::RewardConfig {
        tamask::RewardConfig {
            alpha: self.alpha,
            correct_reward: self.correct_reward,
            incorrect_reward: self.incorrect_reward,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a mask image (PNG, nonzero = anomalous) as a TAM string.
    Encode(commands::EncodeArgs),
    /// Decode a TAM string to a patch grid or mask image.
    Decode(commands::DecodeArgs),
    /// Parse structured <seg>/<think>/<answer> responses.
    Parse(commands::ParseArgs),
    /// Score responses with the format, detection and answer rewards.
    Reward(commands::RewardCmdArgs),
    /// Threshold-free detection metrics and multiple-choice accuracy.
    Eval(commands::EvalArgs),
    /// Harmonic-mean threshold sweep over baseline score maps.
    Sweep(commands::SweepArgs),
    /// Score a simulated group of perturbed responses.
    Simulate(commands::SimulateArgs),
    /// Build a manifest from an MVTec-style directory tree.
    Scan(commands::ScanArgs),
    /// Assemble prompts and reward targets from QA items.
    PrepData(commands::PrepArgs),
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got '{s}'"))?;
    let r: usize = r.trim().parse().map_err(|_| format!("bad row count in '{s}'"))?;
    let c: usize = c.trim().parse().map_err(|_| format!("bad column count in '{s}'"))?;
    if r == 0 || c == 0 {
        return Err(format!("grid dimensions must be positive, got '{s}'"));
    }
    Ok((r, c))
}

fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tamask::Error>() {
            let code = match e {
                tamask::Error::Io { .. } => EXIT_IO,
                tamask::Error::Schema { .. } | tamask::Error::Parse(_) | tamask::Error::Image { .. } => EXIT_SCHEMA,
                _ => EXIT_DATA,
            };
            return (code, e.kind());
        }
        if cause.downcast_ref::<tamask::ParseError>().is_some() {
            return (EXIT_SCHEMA, "parse");
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return (EXIT_SCHEMA, "schema");
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (EXIT_IO, "io");
        }
    }
    (EXIT_INTERNAL, "internal")
}

// Library errors already embed their source in Display; skip causes whose
// text the previous link repeats.
fn message(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if parts.last().is_none_or(|prev| !prev.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn report(kind: &str, code: u8, message: String) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "exit_code": code, "message": message });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return report("usage", EXIT_USAGE, e.to_string().trim_end().to_string());
        }
    };

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => return report("internal", EXIT_INTERNAL, e.to_string()),
    };
    let result = pool.install(|| match cli.command {
        Command::Encode(a) => commands::encode(a),
        Command::Decode(a) => commands::decode(a),
        Command::Parse(a) => commands::parse(a),
        Command::Reward(a) => commands::reward(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Scan(a) => commands::scan(a),
        Command::PrepData(a) => commands::prep_data(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            report(kind, code, message(&err))
        }
    }
}
