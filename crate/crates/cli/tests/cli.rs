use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "steps = 10\ntrain_images = 4\nepochs = 3\nL = 4\nseq_stride = 2\nsegments = 6\n";

fn lsf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run lsf")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = lsf(dir, args);
    assert!(
        out.status.success(),
        "lsf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    std::fs::write(path.join("small.cfg"), SMALL).unwrap();
    (dir, path)
}

#[test]
fn ingest_is_deterministic_and_dump_returns_the_samples() {
    let (_t, d) = workspace();
    ok(&d, &["-c", "small.cfg", "synth", "-o", "s.csv"]);
    ok(&d, &["-c", "small.cfg", "ingest", "-i", "s.csv", "-o", "a.lsfd"]);
    ok(&d, &["-c", "small.cfg", "ingest", "-i", "s.csv", "-o", "b.lsfd"]);
    let a = std::fs::read(d.join("a.lsfd")).unwrap();
    assert_eq!(&a[..4], b"LSFD");
    assert_eq!(a, std::fs::read(d.join("b.lsfd")).unwrap());

    // First 128 raw ECG samples, read straight from the CSV.
    let mut raw = csv::Reader::from_path(d.join("s.csv")).unwrap();
    let col = raw.headers().unwrap().iter().position(|h| h == "ECG").unwrap();
    let expected: Vec<f32> = raw
        .records()
        .take(128)
        .map(|r| r.unwrap()[col].parse::<f64>().unwrap() as f32)
        .collect();

    let out = ok(&d, &["dump", "-i", "a.lsfd"]);
    let mut dump = csv::Reader::from_reader(out.stdout.as_slice());
    let first_ecg = dump
        .records()
        .map(Result::unwrap)
        .find(|r| &r[0] == "ECG" && &r[1] == "0")
        .expect("ECG window at 0");
    let got: Vec<f32> = first_ecg.iter().skip(3).map(|v| v.parse().unwrap()).collect();
    assert_eq!(got, expected);
}

#[test]
fn bad_schema_names_the_column() {
    let (_t, d) = workspace();
    ok(&d, &["-c", "small.cfg", "synth", "-o", "s.csv"]);
    std::fs::write(d.join("bad.cfg"), format!("{SMALL}columns = ECG,Pulse\n")).unwrap();
    let out = lsf(&d, &["-c", "bad.cfg", "ingest", "-i", "s.csv", "-o", "x.lsfd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Pulse"));
    assert!(!d.join("x.lsfd").exists());
}

#[test]
fn eval_of_perfect_scores() {
    let (_t, d) = workspace();
    std::fs::write(d.join("scores.csv"), "score,label\n0.9,1\n0.8,1\n0.2,0\n0.1,0\n").unwrap();
    let out = ok(&d, &["eval", "--scores", "scores.csv", "-t", "0.5", "-o", "m.json"]);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["accuracy"], 1.0);
    assert_eq!(m["f1"], 1.0);
    assert_eq!(m["auc"], 1.0);
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(file, m);
}

#[test]
fn exit_codes() {
    let (_t, d) = workspace();
    std::fs::write(d.join("unknown.cfg"), "sed = 3\n").unwrap();
    std::fs::write(d.join("nan.cfg"), "steps = 3\ntrain_images = 4\nlr = 1e30\n").unwrap();
    let cases: &[(&[&str], i32)] = &[
        (&["--help"], 0),
        (&["cost", "-p", "2"], 0),
        (&["bogus"], 1),
        (&["ingest", "-i", "only-input.csv"], 1),
        (&["-c", "unknown.cfg", "cost"], 1),
        (&["cost", "-p", "7"], 1),
        (&["eval"], 1),
        (&["encode", "-e", "missing.lsfw", "-w", "missing.lsfd", "-o", "x"], 2),
        (&["dump", "-i", "small.cfg"], 2),
        (&["-c", "nan.cfg", "train-encoder", "-o", "x.lsfw"], 3),
    ];
    for (args, code) in cases {
        assert_eq!(lsf(&d, args).status.code(), Some(*code), "lsf {args:?}");
    }
}

#[test]
fn resolved_config_is_logged() {
    let (_t, d) = workspace();
    let out = ok(&d, &["-c", "small.cfg", "cost"]);
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("steps = 10") && log.contains("K = 32"), "{log}");
}

#[test]
fn cost_breakdown_sums_to_summary() {
    let (_t, d) = workspace();
    let out = ok(&d, &["-q", "cost", "--system", "baseline", "-p", "3", "-o", "b.csv"]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["encoder_loads"], 3);
    let mut rdr = csv::Reader::from_path(d.join("b.csv")).unwrap();
    let macs: u64 = rdr.records().map(|r| r.unwrap()[2].parse::<u64>().unwrap()).sum();
    assert_eq!(summary["macs"], macs);
}

#[test]
fn synthetic_bench_writes_six_rows_per_file() {
    let (_t, d) = workspace();
    ok(&d, &["-c", "small.cfg", "-q", "bench", "--synthetic", "--no-metrics", "--repeats", "2", "-o", "out"]);
    for f in ["scaling_table.csv", "fig3_runtime.csv", "fig5_macs.csv"] {
        let text = std::fs::read_to_string(d.join("out").join(f)).unwrap();
        assert_eq!(text.lines().count(), 7, "{f}");
    }
    let runs = std::fs::read_to_string(d.join("out/fig3_runtime_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 6 * 2 * 2);
    let mut rdr = csv::Reader::from_path(d.join("out/scaling_table.csv")).unwrap();
    let loads: Vec<(u32, u32)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[5].parse().unwrap(), r[6].parse().unwrap())
        })
        .collect();
    assert_eq!(loads, (1..=6).map(|m| (1, m)).collect::<Vec<_>>());
    assert_eq!(lsf(&d, &["bench", "-o", "x"]).status.code(), Some(1));
}
