use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = ["--width", "96", "--height", "64", "--frames", "12"];
const ONLINE: [&str; 12] = [
    "--iterations",
    "1",
    "--batch",
    "1",
    "--buffer-len",
    "2",
    "--train-interval",
    "5",
    "--crop",
    "64x48",
    "--cues",
    "texture,motion",
];

fn thermoseg(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_thermoseg"))
        .args(args)
        .env("THERMOSEG_SEED", "5")
        .env_remove("RUST_LOG")
        .output()
        .unwrap();
    if !out.status.success() {
        panic!("thermoseg {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn masks(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn synth(dir: &Path, mode: &str) {
    let d = dir.to_str().unwrap();
    thermoseg(&[&["synth", "--mode", mode, "--out", d], &SMALL[..]].concat());
}

#[test]
fn synth_preprocess_cues() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "coast");
    assert!(seq.join("sequence.txt").exists() && seq.join("imu.csv").exists());
    let pre = tmp.path().join("pre");
    thermoseg(&["preprocess", "--input", seq.to_str().unwrap(), "--out", pre.to_str().unwrap()]);
    assert_eq!(masks(&pre).len(), 12);
    let cues = tmp.path().join("cues");
    let out = thermoseg(&[
        "cues",
        "--input",
        seq.to_str().unwrap(),
        "--out",
        cues.to_str().unwrap(),
        "--cues",
        "texture",
    ]);
    assert_eq!(masks(&cues.join("texture")).len(), 12);
    assert!(String::from_utf8_lossy(&out.stdout).contains("12 texture maps"));
}

#[test]
fn run_is_deterministic_and_matches_sequential() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "river");
    let mut outs = Vec::new();
    for (name, extra) in [("a", None), ("b", None), ("c", Some("--sequential"))] {
        let out = tmp.path().join(name);
        let mut args = vec!["run", "--input", seq.to_str().unwrap(), "--out", out.to_str().unwrap(), "--overlay"];
        args.extend(ONLINE);
        args.extend(extra);
        thermoseg(&args);
        outs.push(masks(&out.join("masks")));
        let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
        assert_eq!(diag.lines().count(), 13);
        assert_eq!(masks(&out.join("overlay")).len(), 12);
    }
    assert_eq!(outs[0].len(), 12);
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
}

#[test]
fn eval_prints_full_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("r.csv");
    let mut args = vec![
        "eval",
        "--synth",
        "river",
        "--annotate-first",
        "4",
        "--annotate-every",
        "4",
        "--csv",
        csv.to_str().unwrap(),
    ];
    args.extend(SMALL);
    args.extend(ONLINE);
    let out = thermoseg(&args);
    let table = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5, "{table}");
    assert!(lines[0].contains("PT+All"));
    assert!(lines[3].starts_with("river") && !lines[3].contains(" -"));
    // 12 settings x 2 annotated frames
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 24);
}

#[test]
fn pretrain_writes_loadable_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let w = tmp.path().join("w.bin");
    thermoseg(&[
        "pretrain",
        "--synth",
        "lake",
        "--scenes",
        "1",
        "--width",
        "64",
        "--height",
        "48",
        "--frames",
        "2",
        "--epochs",
        "1",
        "--batch",
        "2",
        "--crop",
        "32",
        "--out",
        w.to_str().unwrap(),
    ]);
    assert!(thermoseg::segnet::read_weights(&w).is_ok());
}

#[test]
fn bench_rejects_short_input_and_bad_flags() {
    let out = Command::new(env!("CARGO_BIN_EXE_thermoseg"))
        .args(["bench", "--frames", "20", "--width", "96", "--height", "64"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 100 frames"));
    let out = Command::new(env!("CARGO_BIN_EXE_thermoseg"))
        .args(["run", "--input", ".", "--out", ".", "--horizon", "moon"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
