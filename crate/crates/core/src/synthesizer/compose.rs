//! Text-generation backends: the deterministic lexicon composer and an
//! optional HTTP adapter for a chat-completions style endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// `deterministic` or `external`.
    pub kind: String,
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalBackend {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ComposerBackend {
    #[default]
    Deterministic,
    External(ExternalBackend),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ComposeError {
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("unknown backend kind {0:?}")]
    UnknownKind(String),
}

impl ComposerBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, ComposeError> {
        match config.kind.as_str() {
            "deterministic" => Ok(ComposerBackend::Deterministic),
            "external" => Ok(ComposerBackend::External(ExternalBackend {
                endpoint: config.endpoint.clone(),
                model: config.model.clone(),
                timeout: Duration::from_secs(config.timeout_secs.max(1)),
                max_retries: config.max_retries,
            })),
            other => Err(ComposeError::UnknownKind(other.to_string())),
        }
    }

    pub fn external(&self) -> Option<&ExternalBackend> {
        match self {
            ComposerBackend::External(e) => Some(e),
            ComposerBackend::Deterministic => None,
        }
    }
}

fn agent(backend: &ExternalBackend) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(backend.timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn map_transport(err: ureq::Error, backend: &ExternalBackend) -> ComposeError {
    match err {
        ureq::Error::Timeout(_) => ComposeError::Timeout(backend.timeout),
        ureq::Error::Json(e) => ComposeError::MalformedResponse(e.to_string()),
        other => ComposeError::EndpointUnavailable(format!("{}: {other}", backend.endpoint)),
    }
}

/// Startup probe: the endpoint must accept a connection and answer HTTP.
/// Any status code counts as reachable.
pub fn health_check(backend: &ExternalBackend) -> Result<(), ComposeError> {
    agent(backend)
        .get(&backend.endpoint)
        .call()
        .map(|_| ())
        .map_err(|e| map_transport(e, backend))
}

/// Sends `payload` as the user message and returns the `text` field of the
/// reply. The caller validates the text and decides on fallback.
pub fn compose_external(
    instruction: &str,
    payload: &Value,
    backend: &ExternalBackend,
) -> Result<String, ComposeError> {
    let body = json!({
        "model": backend.model,
        "temperature": 0,
        "messages": [
            { "role": "system", "content": instruction },
            { "role": "user", "content": payload.to_string() },
        ],
    });
    let mut response = agent(backend)
        .post(&backend.endpoint)
        .send_json(&body)
        .map_err(|e| map_transport(e, backend))?;
    let status = response.status().as_u16();
    if status >= 500 || status == 404 {
        return Err(ComposeError::EndpointUnavailable(format!(
            "{}: HTTP {status}",
            backend.endpoint
        )));
    }
    if status >= 400 {
        return Err(ComposeError::MalformedResponse(format!("HTTP {status}")));
    }
    let reply: Value = response
        .body_mut()
        .read_json()
        .map_err(|e| map_transport(e, backend))?;
    match reply.get("text").and_then(Value::as_str) {
        Some(text) if !text.trim().is_empty() => Ok(text.trim().to_string()),
        Some(_) => Err(ComposeError::MalformedResponse("empty text".into())),
        None => Err(ComposeError::MalformedResponse(
            "missing field `text`".into(),
        )),
    }
}

/// Words from `blocklist` present in `text`, case-insensitively. Multi-word
/// entries match as phrases; single words match whole tokens.
pub fn blocked_terms<'a>(text: &str, blocklist: &'a [String]) -> Vec<&'a str> {
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    blocklist
        .iter()
        .filter(|term| {
            let term = term.to_lowercase();
            if term.contains(' ') {
                lower.contains(&term)
            } else {
                tokens.iter().any(|t| *t == term)
            }
        })
        .map(String::as_str)
        .collect()
}

/// Calls the external backend up to `1 + max_retries` times, returning the
/// first reply accepted by `accept`. `None` means the caller should fall back.
pub fn compose_with_retries<T>(
    instruction: &str,
    payload: &Value,
    backend: &ExternalBackend,
    mut accept: impl FnMut(&str) -> Option<T>,
) -> Option<T> {
    for attempt in 0..=backend.max_retries {
        match compose_external(instruction, payload, backend) {
            Ok(text) => {
                if let Some(v) = accept(&text) {
                    return Some(v);
                }
                log::warn!("external reply rejected on attempt {}", attempt + 1);
            }
            Err(e @ ComposeError::EndpointUnavailable(_)) => {
                log::warn!("{e}; falling back to deterministic composition");
                return None;
            }
            Err(e) => log::warn!("attempt {}: {e}", attempt + 1),
        }
    }
    None
}

#[cfg(test)]
pub(crate) mod testing {
    //! One-thread HTTP stub answering every request with a fixed reply.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    use super::ExternalBackend;

    pub struct Stub {
        pub backend: ExternalBackend,
        pub hits: Arc<AtomicUsize>,
    }

    pub fn serve(status: u16, body: &str) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let body = body.to_string();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut buf = vec![0; len];
                let _ = reader.read_exact(&mut buf);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Stub {
            backend: ExternalBackend {
                endpoint: format!("http://{addr}/v1/compose"),
                model: "stub".into(),
                timeout: Duration::from_secs(5),
                max_retries: 2,
            },
            hits,
        }
    }

    /// An endpoint nothing listens on.
    pub fn dead() -> ExternalBackend {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        ExternalBackend {
            endpoint: format!("http://{addr}/v1/compose"),
            model: "stub".into(),
            timeout: Duration::from_secs(2),
            max_retries: 1,
        }
    }
}
