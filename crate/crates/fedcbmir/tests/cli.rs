use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use fedcbmir::cli::{self, Cli, Command};
use fedcbmir::data::{load_manifest, write_manifest, ImageRecord};
use fedcbmir::files::load_model;
use fedcbmir_core::cae::CaeModel;
use fedcbmir_core::eval::{metrics, EvalReport};
use fedcbmir_core::Split;

fn parse(args: &[&str]) -> Command {
    let mut full = vec!["fedcbmir"];
    full.extend_from_slice(args);
    Cli::try_parse_from(full).unwrap().command
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let root = dir.join("data");
    let Command::Synth(a) = parse(&[
        "synth", "--out", s(&root), "--clients", "2", "--train", "12", "--validation", "4", "--test", "4", "--image-size", "16",
    ]) else {
        unreachable!()
    };
    cli::cmd_synth(&a).unwrap();
    root
}

fn train_local(manifest: &Path, out: &Path, extra: &[&str]) -> Vec<f64> {
    let mut args = vec!["train-local", "--manifest", s(manifest), "--out", s(out), "--arch", "tiny", "--image-size", "16"];
    args.extend_from_slice(extra);
    let Command::TrainLocal(a) = parse(&args) else { unreachable!() };
    cli::cmd_train_local(&a).unwrap()
}

fn index(model: &Path, manifests: &[&Path], out: &Path) {
    let mut args = vec!["index", "--model", s(model), "--out", s(out)];
    for m in manifests {
        args.extend_from_slice(&["--manifest", s(m)]);
    }
    let Command::Index(a) = parse(&args) else { unreachable!() };
    cli::cmd_index(&a).unwrap();
}

fn eval(model: &Path, index: &Path, manifest: &Path, out: &Path, k: &str) -> EvalReport {
    let Command::Eval(a) = parse(&["eval", "--model", s(model), "--index", s(index), "--manifest", s(manifest), "--out", s(out), "--k", k])
    else {
        unreachable!()
    };
    cli::cmd_eval(&a).unwrap()
}

#[test]
fn zero_epochs_saves_the_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let out = dir.path().join("m.fcw");
    let trace = train_local(&root.join("client-0/manifest.csv"), &out, &["--epochs", "0", "--seed", "3"]);
    assert!(trace.is_empty());
    let saved = load_model(&out).unwrap();
    let fresh = CaeModel::<f32>::build(saved.config().clone()).unwrap();
    assert_eq!(saved.config().seed, 3);
    assert_eq!(saved.weights(), fresh.weights());
}

#[test]
fn training_reruns_are_byte_identical_and_reduce_loss() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let manifest = root.join("client-0/manifest.csv");
    let (a, b) = (dir.path().join("a.fcw"), dir.path().join("b.fcw"));
    let ta = train_local(&manifest, &a, &["--epochs", "6", "--batch", "4", "--lr", "3e-3"]);
    let tb = train_local(&manifest, &b, &["--epochs", "6", "--batch", "4", "--lr", "3e-3"]);
    assert_eq!(ta, tb);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(ta.last().unwrap() < ta.first().unwrap(), "{ta:?}");
    let log = std::fs::read_to_string(dir.path().join("a.fcw.loss.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(dir.path().join("a.fcw.run.json").exists());
}

#[test]
fn query_prints_k_ranked_hits() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let manifest = root.join("client-0/manifest.csv");
    let model = dir.path().join("m.fcw");
    let idx = dir.path().join("m.fcix");
    train_local(&manifest, &model, &["--epochs", "1"]);
    index(&model, &[&manifest], &idx);
    let test = load_manifest(&manifest).unwrap().split(&[Split::Test]).next().unwrap().clone();
    let mag = test.magnification.unwrap().as_str();
    let Command::Query(a) = parse(&[
        "query", "--model", s(&model), "--index", s(&idx), "--image", s(&test.path), "--magnification", mag, "--true-label", test.label.as_str(),
    ]) else {
        unreachable!()
    };
    let mut out = Vec::new();
    cli::cmd_query(&a, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let hits: Vec<&str> = text.lines().filter(|l| l.contains('✓') || l.contains('✗')).collect();
    assert_eq!(hits.len(), 5, "{text}");
    assert!(hits.iter().all(|l| l.contains(mag)));
    assert!(text.lines().last().unwrap().starts_with("search took"));
}

#[test]
fn duplicated_queries_score_perfectly_and_report_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let source = load_manifest(root.join("client-0/manifest.csv")).unwrap();
    let mut records: Vec<ImageRecord> = source.split(&[Split::Train]).cloned().collect();
    let copies: Vec<ImageRecord> = records
        .iter()
        .map(|r| ImageRecord {
            id: format!("{}-copy", r.id),
            split: Split::Test,
            ..r.clone()
        })
        .collect();
    records.extend(copies);
    let manifest = root.join("dup.csv");
    write_manifest(&manifest, &records).unwrap();
    let model = dir.path().join("m.fcw");
    let idx = dir.path().join("m.fcix");
    train_local(&manifest, &model, &["--epochs", "0"]);
    index(&model, &[&manifest], &idx);
    let out = dir.path().join("eval.txt");
    let report = eval(&model, &idx, &manifest, &out, "1");
    assert_eq!(report.records.len(), 12);
    assert_eq!(report.metrics.accuracy, 1.0);
    assert!(report.records.iter().all(|r| r.nearest_distance == 0.0));
    let parsed = fedcbmir_core::eval::EvalReport::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let cm = parsed.confusion("").unwrap();
    let m = metrics(&cm).unwrap();
    assert_eq!(parsed.value::<f64>("accuracy").unwrap(), m.accuracy);
    assert_eq!(parsed.value::<f64>("f1").unwrap(), m.f1);
    assert_eq!(parsed.records.len(), 12);
}

#[test]
fn single_client_federation_matches_local_training_under_sgd() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let manifest = root.join("client-0/manifest.csv");
    let local = dir.path().join("local.fcw");
    train_local(&manifest, &local, &["--epochs", "4", "--optimizer", "sgd", "--batch", "12", "--lr", "0.05"]);
    let fed = dir.path().join("fed.fcw");
    let Command::FedSim(a) = parse(&[
        "fed-sim", "--manifest", s(&manifest), "--out", s(&fed), "--arch", "tiny", "--image-size", "16", "--rounds", "4",
        "--optimizer", "sgd", "--batch", "12", "--lr", "0.05",
    ]) else {
        unreachable!()
    };
    cli::cmd_fed_sim(&a).unwrap();
    let (l, f) = (load_model(&local).unwrap(), load_model(&fed).unwrap());
    let init = CaeModel::<f32>::build(l.config().clone()).unwrap();
    let mut moved = 0.0f64;
    for ((x, y), z) in l.weights().values.iter().zip(&f.weights().values).zip(&init.weights().values) {
        assert!((x - y).abs() <= 1e-4 + 1e-3 * x.abs(), "{x} vs {y}");
        moved += f64::from((x - z).abs());
    }
    assert!(moved > 0.0);
    let rounds = std::fs::read_to_string(dir.path().join("fed.fcw.rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 4);
}

#[test]
fn missing_roster_client_exits_with_network_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("srv.fcw");
    let status = Process::new(env!("CARGO_BIN_EXE_fedcbmir"))
        .args([
            "fed-server", "--listen", "127.0.0.1:0", "--roster", "a,b", "--timeout-secs", "1", "--out", s(&out), "--arch", "tiny",
            "--image-size", "16",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(!out.exists());
}

#[test]
fn bad_arguments_exit_with_config_code() {
    let status = Process::new(env!("CARGO_BIN_EXE_fedcbmir"))
        .args(["fed-server", "--roster", "a:x", "--out", "/nonexistent/x"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}
