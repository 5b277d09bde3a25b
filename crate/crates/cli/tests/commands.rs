mod common;

use common::*;
use serde_json::Value;

fn payload(bytes: &[u8]) -> Value {
    let v: Value = serde_json::from_slice(bytes).expect("envelope is JSON");
    v["payload"].clone()
}

#[test]
fn fit_from_file_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let curves = dir.path().join("runs.csv");
    std::fs::write(&curves, pipeline().curves).unwrap();
    let law = dir.path().join("law.json");
    let out = sptlaw(
        &[
            "fit",
            "--curves",
            curves.to_str().unwrap(),
            "--deltas",
            FIT_DELTAS,
            "--seed",
            "7",
            "--out",
            law.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(matches_golden("law.json", &std::fs::read(&law).unwrap()));
}

#[test]
fn percent_and_fraction_give_identical_envelopes() {
    let law = pipeline().law;
    for (cmd, percent, fraction) in [("forecast", "2%", "0.02"), ("onset", "5%", "0.05")] {
        let a = ok(sptlaw(&[cmd, "--delta", percent], Some(&law)));
        let b = ok(sptlaw(&[cmd, "--delta", fraction], Some(&law)));
        assert_eq!(a, b, "{cmd}");
    }
}

#[test]
fn seed_flag_and_environment_agree() {
    let truth = fixture("truth.toml");
    let truth = truth.to_str().unwrap();
    let flag = ok(sptlaw(&["synth", "--truth", truth, "--noise", "0.01", "--seed", "9"], None));
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_sptlaw"));
    let env = cmd.args(["synth", "--truth", truth, "--noise", "0.01"]).env("SPTLAW_SEED", "9").output().unwrap();
    assert_eq!(flag, env.stdout);
    let other = ok(sptlaw(&["synth", "--truth", truth, "--noise", "0.01", "--seed", "10"], None));
    assert_ne!(flag, other);
}

#[test]
fn failed_commands_leave_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("law.json");
    let code = sptlaw(&["fit", "--curves", "/nonexistent.csv", "--out", out.to_str().unwrap()], None).status.code();
    assert_eq!(code, Some(1));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

    // a non-result still writes a complete envelope
    let onset = dir.path().join("onset.json");
    let law = pipeline().law;
    let code = sptlaw(&["onset", "--delta", "0", "--out", onset.to_str().unwrap()], Some(&law)).status.code();
    assert_eq!(code, Some(2));
    assert!(payload(&std::fs::read(&onset).unwrap())["onset_tokens"].is_null());
}

#[test]
fn forecast_reports_the_analytic_onset() {
    let p = payload(&pipeline().forecast);
    let onset = p["onset_tokens"].as_u64().unwrap() as f64;
    // test loss turns upward near 70 units for the fixture truth
    assert!((onset / 70e9 - 1.0).abs() < 0.01, "{onset}");
    assert_eq!(p["points"].as_array().unwrap().len(), 200);
}

#[test]
fn mix_and_breakeven_payloads() {
    let mix = payload(&ok(sptlaw(&["mix", "--T", "200B", "--delta", "5%", "--domain-size", "300M"], None)));
    assert_eq!(mix["epochs_exact"], "100/3");
    assert!((mix["epochs"].as_f64().unwrap() - 100.0 / 3.0).abs() < 1e-12);
    let be = payload(&ok(sptlaw(&["breakeven"], None)));
    assert_eq!(be["break_even_tokens"].as_f64().unwrap(), 2.955e11);
}

#[test]
fn derived_tables_and_charts() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, svg) = (dir.path().join("f.csv"), dir.path().join("f.svg"));
    let law = pipeline().law;
    ok(sptlaw(
        &[
            "forecast",
            "--delta",
            "10%",
            "--grid",
            "1:400:30",
            "--emit-csv",
            csv.to_str().unwrap(),
            "--emit-svg",
            svg.to_str().unwrap(),
        ],
        Some(&law),
    ));
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 31);
    let chart = std::fs::read_to_string(&svg).unwrap();
    assert!(chart.starts_with("<?xml") && chart.contains("<svg") && chart.contains("stroke-dasharray"));
}

#[test]
fn divergence_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    std::fs::write(&a, "the cat sat on the mat").unwrap();
    std::fs::write(&b, "the cat sat on the mat").unwrap();
    let same = payload(&ok(sptlaw(&["jsd", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap(), "--n", "2"], None)));
    assert_eq!(same["jsd_bits"].as_f64().unwrap(), 0.0);

    let emb = dir.path().join("emb.csv");
    let mut text = String::from("label,x,y\n");
    for i in 0..40 {
        text.push_str(&format!("A,{},{}\nB,{},{}\n", i % 7, i % 5, 100 + i % 7, 100 + i % 5));
    }
    std::fs::write(&emb, text).unwrap();
    let c2st = payload(&ok(sptlaw(&["c2st", "--embeddings", emb.to_str().unwrap(), "--folds", "4"], None)));
    assert!(c2st["auc"].as_f64().unwrap() >= 0.99);
}
