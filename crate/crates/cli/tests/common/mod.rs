#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use insight_cli::server::{serve, AppState};
use insight_core::bundle::{to_canonical_json, BundleStore};
use insight_core::datagen::{generate_patient, InjectionSpec};
use insight_core::pipeline::run_dir;
use insight_core::synthesizer::compose::ComposerBackend;
use insight_core::Config;

/// Generates the example patient for `seed` under `root` and stores its bundle.
pub fn seeded_root(root: &Path, seed: u64) -> (String, PathBuf) {
    let config = Config::default();
    let (dir, manifest) = generate_patient(&InjectionSpec::example(seed), &config, root).unwrap();
    let summary = run_dir(&dir, None, &config, &ComposerBackend::Deterministic).unwrap();
    let json = to_canonical_json(&summary.bundle).unwrap();
    let path = BundleStore::new(root)
        .write(&manifest.patient_id, summary.bundle.session_index, &json)
        .unwrap();
    (manifest.patient_id, path)
}

/// Serves `state` on an ephemeral port from a background runtime.
pub fn spawn_server(state: Arc<AppState>) -> SocketAddr {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            serve(listener, state).await.unwrap();
        });
    });
    addr
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn get(addr: SocketAddr, path: &str) -> (u16, serde_json::Value) {
    let mut resp = agent().get(&format!("http://{addr}{path}")).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}

pub fn post(addr: SocketAddr, path: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
    let mut resp = agent()
        .post(&format!("http://{addr}{path}"))
        .send_json(body)
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}
