mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use quick_xml::events::Event;
use quick_xml::Reader;
use serde_json::Value;

fn smellscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smellscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn assert_error_line(o: &Output) {
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "stderr: {err}");
    let v: Value = serde_json::from_str(err.trim()).unwrap();
    assert!(v["error"].is_string() && v["message"].is_string());
}

fn write_gate_manifest(dir: &Path, rows: &[(usize, u64)]) -> std::path::PathBuf {
    let mut manifest = String::from("app,version,timestamp,report_path,lloc\n");
    for (i, &(cs, lloc)) in rows.iter().enumerate() {
        let mut xml = String::from("<pmd>\n<file name=\"x.php\">\n");
        for j in 0..cs {
            xml.push_str(&format!(
                "<violation beginline=\"{}\" endline=\"{}\" rule=\"ExcessiveMethodLength\" class=\"X\" method=\"m{j}\"/>\n",
                j + 1,
                j + 1
            ));
        }
        xml.push_str("</file>\n</pmd>\n");
        fs::write(dir.join(format!("{i}.xml")), xml).unwrap();
        manifest.push_str(&format!("app,{i},2021-0{}-01,{i}.xml,{lloc}\n", i + 1));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn detect_empty_model_gives_empty_document() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("empty.json");
    fs::write(&model, "{\"entities\": []}").unwrap();
    let o = smellscope(&["detect", "--code-model", s(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["occurrences"], Value::Array(vec![]));
    assert_eq!(v["version_id"], "empty");
}

#[test]
fn detect_long_method() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    fs::write(
        &model,
        r#"{"entities": [{"kind": "method", "name": "run", "parent": "Job", "file": "src/Job.php", "loc": 150, "begin_line": 10, "end_line": 160}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = smellscope(&["detect", "--code-model", s(&model), "--version-id", "1.0", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("occurrences.json")).unwrap()).unwrap();
    let occ = v["occurrences"].as_array().unwrap();
    assert_eq!(occ.len(), 1);
    assert_eq!(occ[0]["rule"], "ExcessiveMethodLength");
    assert_eq!(occ[0]["entity_path"], "Job/run");
    assert_eq!(occ[0]["version_id"], "1.0");
}

#[test]
fn detect_unreadable_path_fails() {
    let o = smellscope(&["detect", "--code-model", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_error_line(&o);
}

#[test]
fn analyze_mini_records_match_hand_derivation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("mini/manifest.csv");
    let o = smellscope(&["analyze", "--manifest", s(&manifest), "--out", s(dir.path()), "--strip-prefix", "/src/mini"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = fs::read_to_string(dir.path().join("survival_records.csv")).unwrap();
    let want = fs::read_to_string(fixture("mini/expected_records.csv")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn analyze_three_apps() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("three_apps/manifest.csv");
    let o = smellscope(&["analyze", "--manifest", s(&manifest), "--out", s(dir.path()), "--formats", "csv,json,svg"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let lr: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("gamma/logrank_timeframe.json")).unwrap()).unwrap();
    assert!(lr["p_value"].as_f64().unwrap() < 0.05, "{lr}");

    let density = fs::read_to_string(dir.path().join("alpha/density.csv")).unwrap();
    assert!(density.contains("increase_50"), "{density}");

    for svg in ["alpha/km_scope.svg", "gamma/km_timeframe.svg", "beta/lifelines.svg", "alpha/density.svg", "km_pooled_scope.svg"] {
        let text = fs::read_to_string(dir.path().join(svg)).unwrap();
        check_svg(&text, svg);
    }
}

/// Well-formed XML, and each survival polyline only moves down the plot.
fn check_svg(text: &str, name: &str) {
    let mut reader = Reader::from_str(text);
    let mut depth = 0i32;
    let mut curves = 0;
    loop {
        match reader.read_event() {
            Ok(Event::Start(_)) => depth += 1,
            Ok(Event::End(_)) => depth -= 1,
            Ok(Event::Empty(e)) if e.name().as_ref() == b"polyline" => {
                let class = e.try_get_attribute("class").unwrap().map(|a| a.unescape_value().unwrap().into_owned());
                if class.as_deref() != Some("km") {
                    continue;
                }
                curves += 1;
                let points = e.try_get_attribute("points").unwrap().unwrap().unescape_value().unwrap().into_owned();
                let ys: Vec<f64> = points
                    .split_whitespace()
                    .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
                    .collect();
                assert!(ys.windows(2).all(|w| w[1] >= w[0]), "{name}: curve rises");
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => panic!("{name}: malformed svg: {e}"),
        }
    }
    assert_eq!(depth, 0, "{name}: unbalanced");
    if name.contains("km") {
        assert!(curves > 0, "{name}: no curves");
    }
}

#[test]
fn analyze_error_is_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    fs::write(&manifest, "app,version,timestamp,report_path,lloc\na,1,2020-01-01,missing.xml,10\na,2,2020-02-01,missing.xml,10\n").unwrap();
    let o = smellscope(&["analyze", "--manifest", s(&manifest), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_error_line(&o);
}

#[test]
fn gate_passes_small_increase() {
    let dir = tempfile::tempdir().unwrap();
    // rho 10/1000 -> 11/1000
    let m = write_gate_manifest(dir.path(), &[(10, 1000), (11, 1000)]);
    let o = smellscope(&["gate", "--manifest", s(&m)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["status"], "pass");
    assert_eq!(v["delta_rho"].as_f64().unwrap(), 0.1);
}

#[test]
fn gate_fails_large_increase() {
    let dir = tempfile::tempdir().unwrap();
    // rho 10/1000 -> 17/1000
    let m = write_gate_manifest(dir.path(), &[(10, 1000), (17, 1000)]);
    let o = smellscope(&["gate", "--manifest", s(&m)]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["flags"][0]["kind"], "increase_50");
    assert_eq!(v["status"], "fail");
}

#[test]
fn gate_single_version_is_insufficient() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_gate_manifest(dir.path(), &[(10, 1000)]);
    let o = smellscope(&["gate", "--manifest", s(&m)]);
    assert_eq!(o.status.code(), Some(3));
    assert_error_line(&o);
}

#[test]
fn bad_thresholds_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_gate_manifest(dir.path(), &[(10, 1000), (11, 1000)]);
    let o = smellscope(&["gate", "--manifest", s(&m), "--up", "2.0", "--up2", "1.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert_error_line(&o);
}
