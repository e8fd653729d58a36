// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use vfl_core::config::KvConfig;
use vfl_core::experiment::{run_experiment, ExperimentConfig};
use vfl_core::tree::deserialize_ensemble;

fn vfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfl")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = vfl(args);
    assert!(
        o.status.success(),
        "vfl {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TOY: &str = "dataset = synthetic\ntask = classification\nsynthetic.samples = 120\nsynthetic.features = 4\nhyper.tree_count = 5\nhyper.max_depth = 2\nbucket_count = 8\nrepetitions = 1\n";

#[test]
fn unknown_verb_and_flag_exit_with_usage() {
    let o = vfl(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(vfl(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(vfl(&["train", "--protocol", "xx"]).status.code(), Some(2));
    assert_eq!(vfl(&[]).status.code(), Some(2));
}

#[test]
fn train_writes_documents_and_overrides_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY).unwrap();
    let out = dir.path().join("model");
    ok(&["train", "--config", s(&cfg), "--out", s(&out), "--set", "hyper.tree_count=2", "--protocol", "ls"]);
    for f in ["model.json", "party0_thresholds.json", "party1_thresholds.json", "train_stats.csv", "config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let model = deserialize_ensemble(&std::fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model.trees.len(), 2);
    let saved = KvConfig::load(out.join("config.txt")).unwrap();
    assert_eq!(saved.get("protocol"), Some("ls"));
}

#[test]
fn predicting_the_training_rows_matches_training_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY).unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out), "--seed", "3"]);
    for path in ["task_led", "indicator"] {
        ok(&[
            "predict",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--seed",
            "3",
            "--set",
            "predict_on=train",
            "--set",
            &format!("inference.path={path}"),
        ]);
        let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
        let trained = std::fs::read_to_string(out.join("train_scores.csv")).unwrap();
        let a: Vec<(String, String)> = preds
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].to_string())
            })
            .collect();
        let b: Vec<(String, String)> = trained
            .lines()
            .skip(1)
            .map(|l| {
                let (id, r) = l.split_once(',').unwrap();
                (id.to_string(), r.to_string())
            })
            .collect();
        assert_eq!(a, b, "{path}");
    }
}

#[test]
fn predict_with_a_mismatched_schema_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY).unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let other = dir.path().join("other.csv");
    let mut text = String::from("id,u,v,w,z,label\n");
    for i in 0..10 {
        text += &format!("{i},1,2,3,4,{}\n", i % 2);
    }
    std::fs::write(&other, text).unwrap();
    let o = vfl(&[
        "predict",
        "--out",
        s(&out),
        "--set",
        "dataset=csv",
        "--set",
        &format!("train_path={}", s(&other)),
        "--set",
        &format!("test_path={}", s(&other)),
        "--set",
        "task=classification",
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("error"), "{err}");
    let missing = vfl(&["predict", "--out", s(&dir.path().join("nowhere"))]);
    assert!(!missing.status.success());
}

/// A small file in the raw Adult layout with a learnable income rule.
fn adult_fixture(dir: &Path) {
    let work = ["Private", "State-gov", "Self-emp-not-inc", "Local-gov"];
    let edu = ["Bachelors", "HS-grad", "Masters", "Some-college"];
    let mut train = String::new();
    let mut test = String::from("|1x3 Cross validator\n");
    for i in 0..240u32 {
        let age = 18 + (i * 7919) % 60;
        let hours = 20 + (i * 104729) % 50;
        let rich = age > 40 && hours > 38 || (i % 11 == 0);
        let wc = if i % 37 == 5 { "?" } else { work[(i % 4) as usize] };
        let row = format!(
            "{age}, {wc}, {}, {}, {}, Never-married, Adm-clerical, Not-in-family, White, {}, 0, 0, {hours}, United-States, ",
            100000 + i * 13,
            edu[(i / 3 % 4) as usize],
            9 + i % 6,
            if i % 2 == 0 { "Male" } else { "Female" }
        );
        if i < 180 {
            train += &format!("{row}{}\n", if rich { ">50K" } else { "<=50K" });
        } else {
            test += &format!("{row}{}\n", if rich { ">50K." } else { "<=50K." });
        }
    }
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("adult.data"), train).unwrap();
    std::fs::write(dir.join("adult.test"), test).unwrap();
}

#[test]
fn prepare_then_bench_matches_a_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    adult_fixture(&raw.join("adult"));
    let prepared = dir.path().join("prepared");
    let summary = ok(&["prepare", "--out", s(&prepared), "--set", &format!("raw_dir={}", s(&raw))]);
    assert!(summary.contains("adult,"), "{summary}");
    assert!(prepared.join("adult/train.csv").exists());

    let out = dir.path().join("bench");
    let sets = [
        "dataset=adult".to_string(),
        format!("data_dir={}", s(&prepared)),
        "repetitions=2".into(),
        "hyper.tree_count=3".into(),
        "bucket_count=16".into(),
    ];
    let mut args = vec!["bench", "--out", s(&out), "--model", "xgboost", "--protocol", "ls"];
    for x in &sets {
        args.push("--set");
        args.push(x);
    }
    let text = ok(&args);
    assert!(text.contains("auc"), "{text}");
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();

    let mut kv = KvConfig::default();
    for x in &sets {
        kv.set_override(x).unwrap();
    }
    kv.set("model", "xgboost");
    kv.set("protocol", "ls");
    let direct = run_experiment(&ExperimentConfig::from_kv(&kv).unwrap()).unwrap().to_csv();
    // timing columns differ run to run
    let strip = |t: &str| -> Vec<String> {
        t.lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let n = f.len();
                [&f[..n - 4], &f[n - 1..]].concat().join(",")
            })
            .collect()
    };
    assert_eq!(strip(&csv), strip(&direct));
}

#[test]
fn sweeps_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY).unwrap();
    let out = dir.path().join("sweep");
    ok(&["sweep", "--config", s(&cfg), "--out", s(&out), "--set", "sweep.grid=0.5,1.0"]);
    let ldp = std::fs::read_to_string(out.join("sweep_ldp.csv")).unwrap();
    assert_eq!(ldp.lines().count(), 3);
    ok(&[
        "sweep",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--set",
        "sweep=keysize",
        "--set",
        "sweep.grid=512",
        "--set",
        "hyper.tree_count=1",
    ]);
    let keys = std::fs::read_to_string(out.join("sweep_keysize.csv")).unwrap();
    assert!(keys.starts_with("key_bits,bytes,train_secs,keygen_secs,plain_bytes\n512,"));
    let bad = vfl(&["sweep", "--out", s(&out), "--set", "sweep=nope"]);
    assert!(!bad.status.success());
}
