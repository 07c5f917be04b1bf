//! Pipeline configuration: registries, statistics, lexicons and backend.
//!
//! The shipped defaults live in `config/default.toml`. A user file is merged
//! over them table by table (arrays replace wholesale), then a handful of
//! environment variables override the backend and server settings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::StatConfig;
use crate::model::{word_count, FactAttribute, FactType};
use crate::registry::{Registry, TopicSpec};
use crate::synthesizer::compose::BackendConfig;

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// (fact type → attribute → phrase) for one feature group or feature id.
pub type PhraseTable = BTreeMap<FactType, BTreeMap<FactAttribute, String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicationLexicon {
    pub terms: Vec<String>,
    #[serde(default)]
    pub suffixes: Vec<String>,
}

impl MedicationLexicon {
    /// True when any word of `text` names a medication term or ends with a
    /// registered suffix.
    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        if self.terms.iter().any(|t| lower.contains(&t.to_lowercase())) {
            return true;
        }
        lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .any(|w| {
                self.suffixes
                    .iter()
                    .any(|s| w.len() > s.len() && w.ends_with(s.as_str()))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeConfig {
    /// Preferred number of exploratory insights to thread in (clamped to 4..=6).
    pub exploratory_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub listen: String,
    pub data_root: String,
    pub cors_origin: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub stats: StatConfig,
    pub backend: BackendConfig,
    pub narrative: NarrativeConfig,
    pub server: ServerConfig,
    #[serde(flatten)]
    pub registry: Registry,
    pub topics: Vec<TopicSpec>,
    pub implications: BTreeMap<String, PhraseTable>,
    #[serde(default)]
    pub clauses: BTreeMap<String, PhraseTable>,
    pub medication: MedicationLexicon,
    pub blocklist: Vec<String>,
    pub activities: Vec<Activity>,
}

impl Default for Config {
    fn default() -> Self {
        toml::from_str(DEFAULT_CONFIG).expect("shipped default config parses")
    }
}

impl Config {
    /// Defaults merged with an optional user file, then environment overrides,
    /// then validated.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut merged: toml::Value = toml::from_str(DEFAULT_CONFIG)?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let user: toml::Value = toml::from_str(&text)?;
            merge(&mut merged, user);
        }
        let mut config: Config = merged.try_into()?;
        config.apply_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(v) = var("INSIGHT_BACKEND") {
            self.backend.kind = v;
        }
        if let Some(v) = var("INSIGHT_BACKEND_ENDPOINT") {
            self.backend.endpoint = v;
        }
        if let Some(v) = var("INSIGHT_BACKEND_MODEL") {
            self.backend.model = v;
        }
        if let Some(v) = var("INSIGHT_LISTEN") {
            self.server.listen = v;
        }
        if let Some(v) = var("INSIGHT_DATA_ROOT") {
            self.server.data_root = v;
        }
    }

    /// Implication phrase for a fact on `feature_id` (feature entry first,
    /// then its group).
    pub fn implication(
        &self,
        feature_id: &str,
        group: &str,
        t: FactType,
        a: FactAttribute,
    ) -> Option<&str> {
        lookup(&self.implications, feature_id, t, a)
            .or_else(|| lookup(&self.implications, group, t, a))
    }

    pub fn clause_override(&self, feature_id: &str, t: FactType, a: FactAttribute) -> Option<&str> {
        lookup(&self.clauses, feature_id, t, a)
    }

    pub fn topic(&self, id: &str) -> Option<&TopicSpec> {
        self.topics.iter().find(|t| t.id == id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let s = &self.stats;
        if !(s.alpha > 0.0 && s.alpha < 1.0) {
            problems.push(format!("stats.alpha {} outside (0, 1)", s.alpha));
        }
        let positive = [
            ("mad_threshold", s.mad_threshold),
            ("acf_cyclic_threshold", s.acf_cyclic_threshold),
            ("cv_stable_max", s.cv_stable_max),
            ("cv_variable_min", s.cv_variable_min),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                problems.push(format!("stats.{name} must be positive"));
            }
        }
        if s.stl_period < 2 || s.acf_lag == 0 || s.min_points_per_interval == 0 {
            problems.push(
                "stats.stl_period >= 2, acf_lag >= 1 and min_points_per_interval >= 1 required"
                    .into(),
            );
        }
        if s.cv_stable_max >= s.cv_variable_min {
            problems.push("stats.cv_stable_max must be below cv_variable_min".into());
        }
        if !(4..=6).contains(&self.narrative.exploratory_k) {
            problems.push("narrative.exploratory_k must be within 4..=6".into());
        }

        let mut seen = std::collections::BTreeSet::new();
        for series in self.registry.all_series() {
            if !seen.insert(series.id()) {
                problems.push(format!("duplicate series id {}", series.id()));
            }
            if word_count(series.label()) > 4 {
                problems.push(format!("label of {} exceeds 4 words", series.id()));
            }
            if series.tags().is_empty() {
                problems.push(format!("{} has no biopsychosocial tags", series.id()));
            }
        }
        for f in &self.registry.features {
            if !f.conversion.is_strictly_increasing() {
                problems.push(format!(
                    "conversion for {} is not strictly increasing",
                    f.id
                ));
            }
            if f.domain[0] >= f.domain[1] {
                problems.push(format!("domain for {} is empty", f.id));
            }
        }
        for inst in &self.registry.instruments {
            if !inst.bands_partition_range() {
                problems.push(format!(
                    "bands of {} do not partition its score range",
                    inst.id
                ));
            }
        }

        // Every group must have an implication phrase for every attribute.
        for group in self.registry.groups() {
            for t in FactType::ALL {
                for a in t.attributes() {
                    match lookup(&self.implications, group, t, *a) {
                        None => {
                            problems.push(format!("implication lexicon misses ({group}, {t}, {a})"))
                        }
                        Some(p) if word_count(p) > 5 => problems
                            .push(format!("implication ({group}, {t}, {a}) exceeds 5 words")),
                        Some(_) => {}
                    }
                }
            }
        }
        for table in [&self.implications, &self.clauses] {
            for (scope, types) in table {
                for (t, attrs) in types {
                    for a in attrs.keys() {
                        if a.fact_type() != *t {
                            problems.push(format!(
                                "lexicon entry ({scope}, {t}, {a}) mixes fact types"
                            ));
                        }
                    }
                }
            }
        }
        for topic in &self.topics {
            if topic.triggers.is_empty() || topic.features.is_empty() {
                problems.push(format!("topic {} needs triggers and features", topic.id));
            }
        }
        if self.activities.is_empty() {
            problems.push("activity catalog is empty".into());
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}

fn lookup<'a>(
    table: &'a BTreeMap<String, PhraseTable>,
    scope: &str,
    t: FactType,
    a: FactAttribute,
) -> Option<&'a str> {
    table.get(scope)?.get(&t)?.get(&a).map(String::as_str)
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let config = Config::default();
        config.validate().unwrap();
        assert_eq!(config.registry.features.len(), 11);
        assert_eq!(config.registry.instruments.len(), 6);
    }

    #[test]
    fn feature_entry_shadows_group_entry() {
        let config = Config::default();
        let bed = config.implication("bedtime", "sleep", FactType::Trend, FactAttribute::Fall);
        assert_eq!(bed, Some("shifting sleeping patterns"));
        let awake = config.implication(
            "awakening_episodes",
            "sleep",
            FactType::Trend,
            FactAttribute::Fall,
        );
        assert_eq!(awake, Some("shifting sleep patterns"));
    }

    #[test]
    fn user_file_merges_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[stats]\nalpha = 0.01\n").unwrap();
        let config = Config::load(Some(&path)).unwrap();
        assert_eq!(config.stats.alpha, 0.01);
        assert_eq!(config.stats.mad_threshold, 3.5);
        assert_eq!(config.registry.features.len(), 11);
    }

    #[test]
    fn invalid_thresholds_are_reported() {
        let mut config = Config::default();
        config.stats.cv_stable_max = 0.5;
        config.implications.remove("sleep");
        let Err(ConfigError::Invalid(problems)) = config.validate() else {
            panic!()
        };
        assert!(problems.iter().any(|p| p.contains("cv_stable_max")));
        assert!(problems.iter().any(|p| p.contains("(sleep, trend, rise)")));
    }

    #[test]
    fn env_overrides_backend() {
        let mut config = Config::default();
        config.apply_env(|k| (k == "INSIGHT_BACKEND_ENDPOINT").then(|| "http://x:1/".to_string()));
        assert_eq!(config.backend.endpoint, "http://x:1/");
    }

    #[test]
    fn medication_lexicon_matches_terms_and_suffixes() {
        let lex = Config::default().medication;
        assert!(lex.matches("Continue sertraline 50mg"));
        assert!(lex.matches("Start olanzapine at night"));
        assert!(!lex.matches("schedule follow-up"));
    }
}
