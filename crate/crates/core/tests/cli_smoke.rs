use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn morphogate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphogate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = morphogate(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_one() {
    let out = morphogate(&[]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr) + String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"));
}

#[test]
fn data_errors_exit_two_and_log_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = morphogate(&[
        "predict",
        "--manifest",
        s(&dir.path().join("none.jsonl")),
        "--model",
        s(&dir.path().join("none.ckpt")),
        "--out",
        s(&dir.path().join("p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert_eq!(v["kind"], "data");
    assert!(v["message"].as_str().unwrap().contains("none.ckpt"));
}

#[test]
fn smoke_pipeline_end_to_end() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    fs::write(
        &spec,
        r#"{"n_subjects": 24, "dims": [16, 16, 16], "m": 4, "effect_regions": [1, 3], "clinical_coupling": true}"#,
    )
    .unwrap();
    let cohort = d.join("cohort");
    ok(&["gen-cohort", "--spec", s(&spec), "--out-dir", s(&cohort), "--seed", "3"]);
    let (atlas, train, test) = (cohort.join("atlas.vol"), cohort.join("train.jsonl"), cohort.join("test.jsonl"));
    assert!(atlas.exists() && train.exists() && test.exists());
    let manifest_before = fs::read(&train).unwrap();

    let prior = d.join("prior.json");
    fs::write(&prior, r#"{"m": 4, "weights": [2.0, 0.5, 2.0, 0.5]}"#).unwrap();
    let model = d.join("model.ckpt");
    let hp = ["--lr", "0.01", "--epochs", "40", "--patience", "10", "--hidden", "8", "--threads", "2"];
    let mut args = vec!["train", "--manifest", s(&train), "--atlas", s(&atlas), "--prior", s(&prior)];
    args.extend(hp);
    args.extend(["--lambda", "0.1", "--seed", "1", "--out", s(&model)]);
    let out = ok(&args);
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));

    let preds = d.join("preds.csv");
    ok(&["predict", "--manifest", s(&test), "--model", s(&model), "--out", s(&preds)]);
    let text = fs::read_to_string(&preds).unwrap();
    assert!(text.starts_with("subject_id,prob,class\n"));
    assert_eq!(text.lines().count(), 1 + fs::read_to_string(&test).unwrap().lines().count());

    let eval = d.join("eval.json");
    ok(&["evaluate", "--preds", s(&preds), "--manifest", s(&test), "--out", s(&eval)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&eval).unwrap()).unwrap();
    assert!(v["metrics"]["acc"].is_object());

    let report = d.join("report.md");
    let internal = format!("internal={}", s(&eval));
    ok(&["report", "--eval", &internal, "--out", s(&report)]);
    let md = fs::read_to_string(&report).unwrap();
    for section in ["## Metrics", "## Calibration", "## Net benefit"] {
        assert!(md.contains(section), "missing {section}");
    }
    assert!(d.join("report.csv").exists());

    let record = d.join("rec.json");
    fs::write(
        &record,
        r#"{"subject_id": "x", "age": 61, "sex": "female", "disease_duration": 12, "updrs3_pre": 44}"#,
    )
    .unwrap();
    let (wmap, wcsv) = (d.join("W.vol"), d.join("w.csv"));
    ok(&[
        "weights", "--record", s(&record), "--prior", s(&prior), "--mlp", s(&model), "--atlas", s(&atlas), "--out",
        s(&wmap), "--report", s(&wcsv),
    ]);
    let w = fs::read_to_string(&wcsv).unwrap();
    assert!(w.starts_with("region_index,prior,delta,gate\n"));
    assert_eq!(w.lines().count(), 5);

    assert_eq!(fs::read(&train).unwrap(), manifest_before);
    assert!(t0.elapsed() < Duration::from_secs(60), "smoke pipeline took {:?}", t0.elapsed());
}

#[test]
fn ablate_emits_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    fs::write(&spec, r#"{"n_subjects": 24, "dims": [16, 16, 16], "m": 4, "effect_regions": [2], "seed": 5}"#).unwrap();
    let cohort = d.join("cohort");
    ok(&["gen-cohort", "--spec", s(&spec), "--out-dir", s(&cohort)]);
    let table = d.join("ablation.csv");
    let out = ok(&[
        "ablate",
        "--manifest",
        s(&cohort.join("train.jsonl")),
        "--test",
        s(&cohort.join("test.jsonl")),
        "--atlas",
        s(&cohort.join("atlas.vol")),
        "--seeds",
        "1,2",
        "--epochs",
        "20",
        "--lr",
        "0.01",
        "--out",
        s(&table),
    ]);
    let csv = fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    let toggles: Vec<String> = rows.iter().map(|r| r.split(',').skip(1).take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(
        toggles,
        ["true,false,false", "true,true,false", "true,false,true", "true,true,true", "false,true,true"]
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 7);
}
