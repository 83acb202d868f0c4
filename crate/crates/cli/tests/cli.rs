use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ews_core::artifacts::PREDICTIONS_DIR;
use ews_monitor::data::DataDir;
use serde_json::Value;

const SMALL: &str = r#"
seed = 5
[synth]
n_stays = 24
min_los_h = 24.0
max_los_h = 30.0
[pao2]
n_train = 1500
n_valid = 300
n_test = 1500
training = { epochs = 2 }
[experiment]
n_splits = 2
[experiment.gbdt]
max_trees = 20
learning_rate = 0.2
max_leaves = 8
min_child_samples = 20
patience = 10
split_method = { kind = "histogram", max_bins = 32 }
"#;

fn ews(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ews")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = ews(&["--run-dir", d.to_str().unwrap(), "synth", "--seed", "1", "--n", "50"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (fa, fb) = (files(&a.join("cohort")), files(&b.join("cohort")));
    assert!(fa.len() >= 50);
    assert_eq!(fa, fb);
    let other = tmp.path().join("c");
    ews(&["--run-dir", other.to_str().unwrap(), "synth", "--seed", "2", "--n", "50"]);
    assert_ne!(files(&other.join("cohort")), fa);
}

#[test]
fn evaluate_without_model_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ews(&["--run-dir", tmp.path().to_str().unwrap(), "evaluate"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("ews_splits.json") && msg.contains("train-ews"), "{msg}");
}

#[test]
fn bad_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, "[features]\nvariables = \"missing.toml\"\n").unwrap();
    let o = ews(&["--config", p.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing.toml"));
}

#[test]
fn downstream_refuses_mismatched_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    let base = ["--config", cfg.to_str().unwrap(), "--run-dir", run.to_str().unwrap()];
    let o = ews(&[&base[..], &["synth"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ews(&[&base[..], &["label", "--seed", "6"]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`synth`"), "{}", stderr(&o));
    let o = ews(&[&base[..], &["label", "--estimator", "spo2nn"]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pao2.json"), "{}", stderr(&o));
    assert!(ews(&[&base[..], &["label"]].concat()).status.success());
}

#[test]
fn results_do_not_depend_on_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let run = tmp.path().join(format!("run{jobs}"));
        for stage in ["synth", "label", "featurize"] {
            let o = ews(&["--config", cfg.to_str().unwrap(), "--run-dir", run.to_str().unwrap(), "--jobs", jobs, stage]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        outputs.push((fs::read(run.join("features/features.csv")).unwrap(), files(&run.join("events"))));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn demo_pipeline_produces_report_and_servable_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("demo");
    let start = Instant::now();
    let o = ews(&["--run-dir", run.to_str().unwrap(), "pipeline"]);
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", stderr(&o));
    eprintln!("demo pipeline: {:.1} s", elapsed.as_secs_f64());
    assert!(elapsed < Duration::from_secs(600));

    let manifest: Value = serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    for stage in ["synth", "train-pao2", "label", "featurize", "train-ews", "evaluate"] {
        let rec = &manifest["stages"][stage];
        assert_eq!(rec["status"], "complete", "{stage}");
        assert_eq!(rec["config_hash"].as_str().unwrap().len(), 64);
        for out in rec["outputs"].as_array().unwrap() {
            assert!(run.join(out.as_str().unwrap()).exists(), "{stage}: {out}");
        }
    }

    let report: Value = serde_json::from_slice(&fs::read(run.join("reports/experiment.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], manifest["stages"]["evaluate"]["config_hash"]);
    for model in ["ews", "baseline_c", "baseline_s", "random"] {
        let r = &report[model];
        assert_eq!(r["model"], model);
        assert_eq!(r["recall_levels"].as_array().unwrap().len(), 101);
        let auprc = r["auprc_mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&auprc), "{model}: {auprc}");
        assert_eq!(r["splits"].as_array().unwrap().len(), 3);
    }
    assert!(report["ews"]["auprc_mean"].as_f64().unwrap() > report["random"]["auprc_mean"].as_f64().unwrap());
    let curve = fs::read_to_string(run.join("reports/event_pr.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 4 * 101);
    for svg in ["pr_curve.svg", "lead_times.svg"] {
        let text = fs::read_to_string(run.join("reports").join(svg)).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"), "{svg}");
    }

    let data = DataDir { root: run.clone(), epoch: chrono::DateTime::UNIX_EPOCH, grid_step: 300 };
    let ids = data.stay_ids().unwrap();
    assert_eq!(ids.len(), 150);
    assert_eq!(fs::read_dir(run.join(PREDICTIONS_DIR)).unwrap().count(), 150);
    for id in ids.iter().take(10) {
        let p = data.predictions(id).unwrap();
        let events = data.events(id).unwrap();
        assert_eq!(p.gaps.len(), events.len(), "{id}");
        assert!(p.points.iter().any(|x| x.score.is_some()));
        assert!(!data.descriptor(id).unwrap().channels.is_empty());
    }
}
