//! Subcommand bodies. Each returns a value for the caller to print.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use insight_core::bundle::{to_canonical_json, validate_bundle_json, BundleError, BundleStore};
use insight_core::datagen::{generate_patient, InjectionSpec, Manifest};
use insight_core::ingest::load_patient_dir;
use insight_core::pipeline::{run_dir, RunSummary};
use insight_core::synthesizer::compose::{health_check, ComposerBackend};
use insight_core::Config;

use crate::CliError;

/// Loads the config and resolves the composer, probing an external endpoint.
pub fn load_config(
    path: Option<&Path>,
    backend: Option<&str>,
) -> Result<(Config, ComposerBackend), CliError> {
    let mut config = Config::load(path)?;
    if let Some(kind) = backend {
        config.backend.kind = kind.to_string();
    }
    let composer = ComposerBackend::from_config(&config.backend)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(ext) = composer.external() {
        health_check(ext).map_err(CliError::Health)?;
    }
    Ok((config, composer))
}

#[derive(Debug)]
pub struct RunOutput {
    pub path: PathBuf,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn report(&self) -> String {
        let s = &self.summary;
        let mut out = format!(
            "facts: {}\nguided insights: {}\nexploratory candidates: {}\nthreaded insights: {}\n",
            s.fact_count,
            s.guided_insights,
            s.exploratory_candidates,
            s.bundle.sections.patient_data_insights.len()
        );
        for skip in &s.skips {
            let _ = writeln!(
                out,
                "skipped {} {:?}: {}",
                skip.feature_id, skip.fact_type, skip.reason
            );
        }
        let _ = writeln!(out, "bundle: {}", self.path.display());
        out
    }
}

/// Runs the pipeline for `<data_dir>/<patient>` and writes the bundle, to
/// `out` if given, else into the bundle store under `data_dir`.
pub fn run(
    data_dir: &Path,
    patient: &str,
    session: Option<usize>,
    config: &Config,
    backend: &ComposerBackend,
    out: Option<&Path>,
) -> Result<RunOutput, CliError> {
    let summary = run_dir(&data_dir.join(patient), session, config, backend)?;
    let json = to_canonical_json(&summary.bundle)?;
    let path = match out {
        Some(path) => {
            std::fs::write(path, &json).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            path.to_path_buf()
        }
        None => BundleStore::new(data_dir).write(patient, summary.bundle.session_index, &json)?,
    };
    Ok(RunOutput { path, summary })
}

/// Checks a bundle file (schema and references) or a patient data directory
/// (ingest contracts). Returns a one-line summary on success.
pub fn validate(path: &Path, config: &Config) -> Result<String, CliError> {
    let invalid = |violations| CliError::Invalid {
        path: path.to_path_buf(),
        violations,
    };
    if path.is_dir() {
        return match load_patient_dir(path, config) {
            Ok(record) => Ok(format!(
                "ok: {} passive series, {} survey series, {} sessions",
                record.sensing.len(),
                record.surveys.len(),
                record.timeline.sessions().len()
            )),
            Err(e) if e.is_io() => Err(CliError::Pipeline(e.into())),
            Err(e) => Err(invalid(vec![e.to_string()])),
        };
    }
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match validate_bundle_json(&text) {
        Ok(bundle) => Ok(format!(
            "ok: {} facts, {} charts",
            bundle.facts.len(),
            bundle.charts.len()
        )),
        Err(BundleError::Schema(v)) => Err(invalid(v)),
        Err(BundleError::BrokenReference(ids)) => Err(invalid(
            ids.into_iter()
                .map(|id| format!("dangling reference: {id}"))
                .collect(),
        )),
        Err(e) => Err(invalid(vec![e.to_string()])),
    }
}

/// Writes one simulated patient. `spec` is a JSON injection spec; without it
/// the example spec for `seed` is used.
pub fn datagen(
    seed: u64,
    days: Option<u32>,
    spec: Option<&Path>,
    out: &Path,
    config: &Config,
) -> Result<(PathBuf, Manifest), CliError> {
    let mut spec = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            serde_json::from_str::<InjectionSpec>(&text).map_err(|e| CliError::Invalid {
                path: path.to_path_buf(),
                violations: vec![e.to_string()],
            })?
        }
        None => InjectionSpec::example(seed),
    };
    if let Some(days) = days {
        spec.n_days = days;
    }
    Ok(generate_patient(&spec, config, out)?)
}
