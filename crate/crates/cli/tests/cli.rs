use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tinyppg::data::{load_dataset, write_raw_dump, RawRecording, SAMPLE_RATE_HZ};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tinyppg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert_eq!(code(&o), 0, "{args:?} failed: {}", stderr(&o));
    String::from_utf8(o.stdout).unwrap()
}

/// A small dataset plus a BCE-only model trained on it for one epoch.
fn fixture() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "d.tppg", "--segments", "6", "--subjects", "2", "--seed", "3"]);
    ok(d, &[
        "train", "--data", "d.tppg", "--out", "m.tpml", "--epochs", "1", "--batch-size", "3",
        "--contrastive", "off", "--quiet",
    ]);
    let p = d.to_path_buf();
    (tmp, p)
}

#[test]
fn eval_prints_pooled_counts_and_dice() {
    let (_tmp, d) = fixture();
    let out = ok(&d, &["eval", "--model", "m.tpml", "--data", "d.tppg", "--out", "report.tsv"]);
    let keys: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(keys, ["segments", "tp", "fp", "fn", "tn", "dice"]);
    let total: u64 = out.lines().skip(1).take(4).map(|l| l.split('\t').nth(1).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 6 * 1920);
    let report = std::fs::read_to_string(d.join("report.tsv")).unwrap();
    assert_eq!(report.lines().count(), 6 + 1 + 6);
}

#[test]
fn missing_data_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["train", "--data", "missing.tppg", "--out", "m.tpml"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing.tppg"));
}

#[test]
fn ratio_guard_runs_before_loading() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["prune", "--model", "nowhere.tpml", "--out", "p.tpml", "--ratio", "1.5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("ratio"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    for args in [
        &["eval", "--bogus"][..],
        &["frobnicate"],
        &["train", "--data", "d", "--out", "m", "--contrastive", "sideways"],
    ] {
        let o = run(tmp.path(), args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(stderr(&o).contains("Usage") || stderr(&o).contains("usage") || stderr(&o).contains("invalid"));
    }
}

#[test]
fn bad_settings_exit_two() {
    let (_tmp, d) = fixture();
    let o = run(&d, &["train", "--data", "d.tppg", "--out", "x.tpml", "--tau", "0", "--quiet"]);
    assert_eq!(code(&o), 2);
    let o = run(&d, &["infer", "--model", "m.tpml", "--data", "d.tppg", "--hop", "4000"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn training_is_byte_for_byte_deterministic() {
    let (_tmp, d) = fixture();
    let args = |out: &'static str| {
        vec![
            "train", "--data", "d.tppg", "--out", out, "--epochs", "1", "--batch-size", "3", "--seed", "5",
            "--quiet",
        ]
    };
    ok(&d, &args("a.tpml"));
    ok(&d, &args("b.tpml"));
    assert_eq!(std::fs::read(d.join("a.tpml")).unwrap(), std::fs::read(d.join("b.tpml")).unwrap());
}

#[test]
fn prune_finetune_plan_pipeline() {
    let (_tmp, d) = fixture();
    ok(&d, &["prune", "--model", "m.tpml", "--out", "p.tpml", "--ratio", "0.5"]);
    ok(&d, &[
        "finetune", "--model", "p.tpml", "--data", "d.tppg", "--out", "f.tpml", "--epochs", "1", "--batch-size", "3",
        "--contrastive", "off", "--compact", "--quiet",
    ]);
    let full = ok(&d, &["plan-memory", "--model", "m.tpml"]);
    let small = ok(&d, &["plan-memory", "--model", "f.tpml"]);
    let field = |text: &str, key: &str| -> usize {
        text.lines().find_map(|l| l.strip_prefix(&format!("{key}\t"))).unwrap().parse().unwrap()
    };
    assert_eq!(field(&full, "peak_bytes"), 614_400);
    assert!(full.contains("fits_budget\tno"));
    assert!(field(&small, "peak_bytes") < 614_400);
    assert!(field(&small, "weight_bytes") < field(&full, "weight_bytes"));
    assert!(small.lines().any(|l| l.starts_with("buffer\tchannels\tlength\tbytes\toffset")));
}

#[test]
fn infer_reports_windows_and_respects_budget() {
    let (_tmp, d) = fixture();
    let out = ok(&d, &["infer", "--model", "m.tpml", "--data", "d.tppg", "--hop", "960"]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("window\tstart\tartifact_runs"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), (6 * 1920 - 1920) / 960 + 1);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        assert_eq!(r[1], (i * 960).to_string());
        for run in r[2].split(',').filter(|s| *s != "-") {
            let (s, l) = run.split_once('+').unwrap();
            let (s, l): (usize, usize) = (s.parse().unwrap(), l.parse().unwrap());
            assert!(s >= i * 960 && s + l <= i * 960 + 1920 && l > 0);
        }
    }
    let o = run(&d, &["infer", "--model", "m.tpml", "--data", "d.tppg", "--budget-bytes", "524288"]);
    assert_eq!(code(&o), 1, "unpruned model must not fit");
    assert!(stderr(&o).contains("arena"));
}

#[test]
fn infer_reads_raw_float_streams() {
    let (_tmp, d) = fixture();
    let segs = load_dataset(d.join("d.tppg")).unwrap();
    let bytes: Vec<u8> = segs[..2].iter().flat_map(|s| s.samples.iter().flat_map(|v| v.to_le_bytes())).collect();
    std::fs::write(d.join("s.f32"), &bytes[..bytes.len() - 40]).unwrap();
    let out = ok(&d, &["infer", "--model", "m.tpml", "--data", "s.f32", "--out", "masks.tsv"]);
    assert!(out.is_empty());
    let masks = std::fs::read_to_string(d.join("masks.tsv")).unwrap();
    assert_eq!(masks.lines().count(), 1 + 1, "trailing partial window dropped");
    std::fs::write(d.join("odd.f32"), [0u8; 7]).unwrap();
    assert_eq!(code(&run(&d, &["infer", "--model", "m.tpml", "--data", "odd.f32"])), 1);
}

#[test]
fn export_needs_projection_head() {
    let (_tmp, d) = fixture();
    let o = run(&d, &["export-embeddings", "--model", "m.tpml", "--data", "d.tppg", "--out", "e.csv"]);
    assert_eq!(code(&o), 1);
    ok(&d, &[
        "train", "--data", "d.tppg", "--out", "c.tpml", "--epochs", "1", "--batch-size", "3", "--quiet",
    ]);
    ok(&d, &["export-embeddings", "--model", "c.tpml", "--data", "d.tppg", "--out", "e.csv", "--max-points", "7"]);
    let csv = std::fs::read_to_string(d.join("e.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    assert!(csv.starts_with("subject_id,segment_index,position,label,e0"));
}

#[test]
fn preprocess_turns_raw_dumps_into_segments() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let fs = SAMPLE_RATE_HZ as f64;
    for (id, secs) in [(4u16, 65usize), (9, 95)] {
        let n = secs * SAMPLE_RATE_HZ as usize;
        let samples = (0..n).map(|i| (std::f64::consts::TAU * 1.3 * i as f64 / fs).sin()).collect();
        let labels = (0..n).map(|i| u8::from(i % 500 < 100)).collect();
        let rec = RawRecording::new(id, fs, samples, labels).unwrap();
        write_raw_dump(&rec, d.join(format!("s{id}.bin"))).unwrap();
    }
    ok(d, &["preprocess", "--raw", "4:s4.bin", "--raw", "9:s9.bin", "--out", "p.tppg"]);
    let segs = load_dataset(d.join("p.tppg")).unwrap();
    let per: Vec<u16> = segs.iter().map(|s| s.subject_id).collect();
    assert_eq!(per, [4, 4, 9, 9, 9]);
    let o = run(d, &["preprocess", "--raw", "nocolon", "--out", "p.tppg"]);
    assert_eq!(code(&o), 2);
}
