#![allow(dead_code)]

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tamask::mask_grid::{rasterize, BinaryMask, GridSpec, PatchLabelGrid};

pub const CATEGORIES: [&str; 3] = ["bottle", "cable", "screw"];
pub const MASK_SIZE: usize = 512;

pub fn tamask(args: &[&str]) -> Output {
    tamask_stdin(args, "")
}

pub fn tamask_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_tamask"))
        .args(args)
        .env("RUST_LOG", "error")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn tamask");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

pub fn random_nonempty_grid(spec: GridSpec, rng: &mut ChaCha8Rng) -> PatchLabelGrid {
    loop {
        let density = rng.gen_range(0.02..0.3);
        let labels = (0..spec.cells()).map(|_| rng.gen_bool(density)).collect();
        let g = PatchLabelGrid::new(spec, labels).unwrap();
        if !g.is_normal() {
            return g;
        }
    }
}

fn save(root: &Path, rel: &str, mask: &BinaryMask) {
    let path = root.join(rel);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    mask.save_png(path).unwrap();
}

/// MVTec-style tree with patch-aligned masks: per category two train images,
/// two good test images and three defective ones. Returns the ground-truth
/// grid of every defective image, keyed by image id.
pub fn build_dataset(root: &Path, seed: u64) -> Vec<(String, PatchLabelGrid)> {
    let spec = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blank = BinaryMask::zeros(16, 16).unwrap();
    let mut grids = Vec::new();
    for cat in CATEGORIES {
        for i in 0..2 {
            save(root, &format!("{cat}/train/good/{i:03}.png"), &blank);
            save(root, &format!("{cat}/test/good/{i:03}.png"), &blank);
        }
        for i in 0..3 {
            let g = random_nonempty_grid(spec, &mut rng);
            save(root, &format!("{cat}/test/defect/{i:03}.png"), &blank);
            save(
                root,
                &format!("{cat}/ground_truth/defect/{i:03}_mask.png"),
                &rasterize(&g, MASK_SIZE, MASK_SIZE).unwrap(),
            );
            grids.push((format!("{cat}/test/defect/{i:03}"), g));
        }
    }
    grids
}

pub fn good_ids() -> Vec<String> {
    CATEGORIES
        .iter()
        .flat_map(|c| (0..2).map(move |i| format!("{c}/test/good/{i:03}")))
        .collect()
}
