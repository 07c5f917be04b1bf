mod common;

use std::process::Command;

use common::{get, post, seeded_root, spawn_server};
use insight_cli::server::AppState;
use insight_cli::{commands, CliError, ExitCode};
use insight_core::synthesizer::compose::ComposerBackend;
use insight_core::Config;
use serde_json::json;

fn insight() -> Command {
    Command::new(env!("CARGO_BIN_EXE_insight"))
}

#[test]
fn binary_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let out = insight()
        .args(["datagen", "--seed", "4", "--out"])
        .arg(root)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = insight()
        .args(["run", "--patient", "patient-0004", "--data-dir"])
        .arg(root)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("facts: ") && stdout.contains("session-3.json"),
        "{stdout}"
    );
    let bundle = root.join("patient-0004/bundles/session-3.json");
    let first = std::fs::read(&bundle).unwrap();

    let out = insight().args(["validate"]).arg(&bundle).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = insight()
        .args(["validate"])
        .arg(root.join("patient-0004"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    // Second run overwrites with identical bytes.
    let out = insight()
        .args(["run", "--patient", "patient-0004", "--data-dir"])
        .arg(root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&bundle).unwrap(), first);
}

#[test]
fn exit_codes_by_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (patient, _) = seeded_root(root, 6);

    let out = insight()
        .args([
            "run",
            "--patient",
            &patient,
            "--backend",
            "external",
            "--data-dir",
        ])
        .arg(root)
        .env("INSIGHT_BACKEND_ENDPOINT", "http://127.0.0.1:9/compose")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));

    std::fs::remove_file(root.join(&patient).join("passive.csv")).unwrap();
    let out = insight()
        .args(["run", "--patient", &patient, "--data-dir"])
        .arg(root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("passive.csv"));

    let bad = root.join("bad.json");
    std::fs::write(&bad, "{\"version\": \"1.0\"}").unwrap();
    let out = insight().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"patient\" is a required property"));

    let spec = root.join("spec.json");
    std::fs::write(&spec, r#"{"seed": 1, "n_days": 84, "missing_rate": 0.9}"#).unwrap();
    let out = insight()
        .args(["datagen", "--out"])
        .arg(root)
        .arg("--spec")
        .arg(&spec)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_reports_dangling_references() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, path) = seeded_root(tmp.path(), 8);
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let first_doc = v["documents"]
        .as_object()
        .unwrap()
        .keys()
        .next()
        .unwrap()
        .clone();
    v["documents"].as_object_mut().unwrap().remove(&first_doc);
    std::fs::write(&path, v.to_string()).unwrap();
    match commands::validate(&path, &Config::default()) {
        Err(e @ CliError::Invalid { .. }) => {
            assert_eq!(e.exit_code(), ExitCode::Validation);
            let CliError::Invalid { violations, .. } = e else {
                unreachable!()
            };
            assert!(
                violations.iter().any(|v| v.contains(&first_doc)),
                "{violations:?}"
            );
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn service_endpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let (patient, path) = seeded_root(tmp.path(), 2);
    let state = AppState::new(
        tmp.path(),
        Config::default(),
        ComposerBackend::Deterministic,
    );
    let addr = spawn_server(state.clone());

    let (s, list) = get(addr, "/api/patients");
    assert_eq!(s, 200);
    assert_eq!(list[0]["patient_id"], patient);
    assert!(!list[0]["name"].as_str().unwrap().is_empty());

    let (s, bundle) = get(addr, &format!("/api/patients/{patient}/bundle?session=3"));
    assert_eq!(s, 200);
    let stored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(bundle, stored);
    assert_eq!(
        get(addr, &format!("/api/patients/{patient}/bundle")).1,
        stored
    );
    assert_eq!(
        get(addr, &format!("/api/patients/{patient}/bundle?session=1")).0,
        404
    );
    assert_eq!(get(addr, "/api/patients/nobody/bundle").0, 404);

    let insight = &bundle["sections"]["patient_data_insights"][0];
    let fact_id = insight["fact_ids"][0].as_str().unwrap();
    let (s, d) = get(
        addr,
        &format!("/api/patients/{patient}/facts/{fact_id}/drilldown"),
    );
    assert_eq!(s, 200);
    assert_eq!(d["fact"]["id"], fact_id);
    assert!(d["chart"].is_object());
    assert_eq!(
        get(
            addr,
            &format!("/api/patients/{patient}/facts/f-0000000000000000/drilldown")
        )
        .0,
        404
    );

    let body = json!({ "insight_ids": [insight["id"]], "activity_ids": ["walk"] });
    let (s, msg) = post(
        addr,
        &format!("/api/patients/{patient}/draft-message"),
        body,
    );
    assert_eq!(s, 200);
    assert!(msg["text"]
        .as_str()
        .unwrap()
        .contains("a 20-minute walk on most days"));
    let (s, err) = post(
        addr,
        &format!("/api/patients/{patient}/draft-message"),
        json!({ "insight_ids": ["i-x"] }),
    );
    assert_eq!(s, 400);
    assert!(err["error"].as_str().unwrap().contains("i-x"));
    assert_eq!(
        post(
            addr,
            &format!("/api/patients/{patient}/draft-message"),
            json!({})
        )
        .0,
        400
    );

    let guard = state.begin_recompute(&patient).unwrap();
    assert_eq!(
        post(
            addr,
            &format!("/api/patients/{patient}/recompute"),
            json!({})
        )
        .0,
        409
    );
    drop(guard);
    let (s, r) = post(
        addr,
        &format!("/api/patients/{patient}/recompute"),
        json!({}),
    );
    assert_eq!(s, 200, "{r}");
    assert_eq!(r["session"], 3);
    assert_eq!(
        post(addr, "/api/patients/nobody/recompute", json!({})).0,
        404
    );
}

#[test]
fn cors_allows_configured_origin() {
    let tmp = tempfile::tempdir().unwrap();
    seeded_root(tmp.path(), 2);
    let config = Config::default();
    let origin = config.server.cors_origin.clone();
    let addr = spawn_server(AppState::new(
        tmp.path(),
        config,
        ComposerBackend::Deterministic,
    ));
    let resp = common::agent()
        .get(&format!("http://{addr}/api/patients"))
        .header("Origin", &origin)
        .call()
        .unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        origin.as_str()
    );
}
