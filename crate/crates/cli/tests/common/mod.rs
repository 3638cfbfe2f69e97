//! Helpers shared by the CLI tests and the acceptance harness.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use densescan::synth::{generate_corpus, SynthConfig, SynthImage};

/// Set to regenerate the files under `tests/golden`.
pub const UPDATE_ENV: &str = "DENSESCAN_UPDATE_GOLDEN";

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn densescan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densescan")).args(args).output().expect("spawn densescan")
}

/// Runs a command that must succeed and returns its standard output.
pub fn densescan_ok(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = densescan(args);
    if !out.status.success() {
        return Err(format!(
            "densescan {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out.stdout)
}

pub fn rect_annotations(images: &[SynthImage]) -> String {
    let mut s = String::new();
    for img in images {
        for b in &img.faces {
            let _ = writeln!(s, "{} {} {} {} {}", img.id, b.x, b.y, b.width, b.height);
        }
    }
    s
}

/// Writes `count` synthetic images as `dir/<id>.pgm` plus `dir/gt.txt`.
pub fn write_corpus(dir: &Path, count: usize, seed: u64) -> Vec<SynthImage> {
    std::fs::create_dir_all(dir).unwrap();
    let images = generate_corpus(&SynthConfig::default(), count, seed);
    for img in &images {
        img.image.save(dir.join(format!("{}.pgm", img.id))).unwrap();
    }
    std::fs::write(dir.join("gt.txt"), rect_annotations(&images)).unwrap();
    images
}

/// Compares `actual` with `tests/golden/<name>`, or rewrites the golden
/// file when [`UPDATE_ENV`] is set.
pub fn check_golden(name: &str, actual: &[u8]) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os(UPDATE_ENV).is_some() {
        std::fs::write(&path, actual).map_err(|e| format!("{}: {e}", path.display()))?;
        return Ok(());
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected != actual {
        return Err(format!("{name} differs from its golden file ({} vs {} bytes)", actual.len(), expected.len()));
    }
    Ok(())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Named output files of one pipeline run.
pub struct PipelineRun {
    pub files: Vec<(&'static str, Vec<u8>)>,
}

/// Train, detect and eval on a small synthetic corpus, all seeded.
pub fn run_pipeline(work: &Path) -> Result<PipelineRun, String> {
    let train_dir = work.join("train");
    write_corpus(&train_dir, 8, 21);
    // a training image: the short run is far from converged on unseen data
    let mut probe = generate_corpus(&SynthConfig::default(), 8, 21).remove(0);
    probe.id = "probe".to_string();
    let probe_path = work.join("probe.pgm");
    probe.image.save(&probe_path).unwrap();
    std::fs::write(work.join("probe_gt.txt"), rect_annotations(std::slice::from_ref(&probe))).unwrap();

    let model = work.join("model");
    densescan_ok(&[
        "train",
        "--init",
        "random",
        "--images",
        s(&train_dir),
        "--gt",
        s(&train_dir.join("gt.txt")),
        "--iterations",
        "150",
        "--seed",
        "5",
        "--out",
        s(&model),
        "--risk-out",
        s(&work.join("risk.csv")),
    ])?;
    let dets = work.join("dets.jsonl");
    densescan_ok(&[
        "detect",
        "--model",
        s(&model),
        "--image",
        s(&probe_path),
        "--out",
        s(&dets),
        "--score-floor",
        "0.3",
    ])?;
    let summary = densescan_ok(&[
        "eval",
        "--dets",
        s(&dets),
        "--gt",
        s(&work.join("probe_gt.txt")),
        "--format",
        "rect",
        "--pr-out",
        s(&work.join("pr.csv")),
    ])?;
    let read = |name: &str| std::fs::read(work.join(name)).unwrap();
    Ok(PipelineRun {
        files: vec![
            ("train_gt.txt", read("train/gt.txt")),
            ("model.manifest", read("model.manifest")),
            ("model.weights", read("model.weights")),
            ("risk.csv", read("risk.csv")),
            ("dets.jsonl", read("dets.jsonl")),
            ("eval.txt", summary),
            ("pr.csv", read("pr.csv")),
        ],
    })
}

/// Two fresh pipeline runs, byte-compared with each other and with the
/// golden files.
pub fn check_pipeline_determinism() -> Result<(), String> {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_pipeline(a.path())?;
    let second = run_pipeline(b.path())?;
    for ((name, x), (_, y)) in first.files.iter().zip(&second.files) {
        if x != y {
            return Err(format!("{name} differs between two runs"));
        }
        check_golden(name, x)?;
    }
    Ok(())
}
