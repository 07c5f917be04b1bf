//! Dashboard bundle: chart specs, assembly, integrity checks, canonical JSON
//! and the on-disk store the HTTP service reads from.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analyzer::stats::mean;
use crate::analyzer::{AnalysisWindow, SkipEntry};
use crate::config::{Activity, Config};
use crate::model::{
    DataFact, DataSourceType, Date, EvidenceSpan, FactType, Insight, PatientRecord,
    SessionTimeline, TimeRef, TimeSeries, ValueRef,
};
use crate::narrator::{draft_message, NarrateError, NarrativeSections};
use crate::synthesizer::{Question, QuestionPlan};

pub const BUNDLE_VERSION: &str = "1.0";
pub const BUNDLE_SCHEMA: &str = include_str!("../schema/bundle.schema.json");
pub const MANIFEST_SCHEMA: &str = include_str!("../schema/manifest.schema.json");

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("no series {0} to chart")]
    SeriesUnavailable(String),
    #[error("dangling references: {}", .0.join(", "))]
    BrokenReference(Vec<String>),
    #[error("schema violations:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),
    #[error("unknown ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),
    #[error(transparent)]
    Narrate(#[from] NarrateError),
    #[error("invalid bundle JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bundle store {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Charts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Line,
    Bar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub date: Date,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub date: Date,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Annotation {
    MeanLine { value: f64, start: Date, end: Date },
    TrendSegment { start: Anchor, end: Anchor },
    HighlightPoint { date: Date, value: f64 },
    SplitMarker { date: Date },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub fact_id: String,
    pub chart_kind: ChartKind,
    /// Raw observations over the analysis window; gaps stay `null`.
    pub series: Vec<ChartPoint>,
    pub annotations: Vec<Annotation>,
    pub y_label: String,
}

/// Least-squares line through the observed points, evaluated at the first
/// and last observed dates.
fn trend_segment(points: &[ChartPoint]) -> Option<Annotation> {
    let obs: Vec<(f64, f64, Date)> = points
        .iter()
        .filter_map(|p| {
            p.value
                .map(|v| ((p.date - points[0].date).num_days() as f64, v, p.date))
        })
        .collect();
    if obs.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = obs.iter().map(|o| o.0).collect();
    let ys: Vec<f64> = obs.iter().map(|o| o.1).collect();
    let (mx, my) = (mean(&xs)?, mean(&ys)?);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let at = |x: f64| my + slope * (x - mx);
    let (first, last) = (obs[0], obs[obs.len() - 1]);
    Some(Annotation::TrendSegment {
        start: Anchor {
            date: first.2,
            value: at(first.0),
        },
        end: Anchor {
            date: last.2,
            value: at(last.0),
        },
    })
}

/// Annotated chart for a numeric fact. Survey facts draw as bars, sensing
/// facts as lines; the axis is always linear.
pub fn chart_spec_for(
    fact: &DataFact,
    series: Option<&TimeSeries>,
    window: &AnalysisWindow,
) -> Result<ChartSpec, BundleError> {
    let series =
        series.ok_or_else(|| BundleError::SeriesUnavailable(fact.feature_id().to_string()))?;
    let points: Vec<ChartPoint> = series
        .slice(&window.span())
        .iter()
        .map(|o| ChartPoint {
            date: o.date,
            value: o.value,
        })
        .collect();
    let mut annotations = Vec::new();
    match (fact.fact_type(), fact.time(), fact.value()) {
        (
            FactType::Comparison,
            TimeRef::IntervalPair { first, second },
            ValueRef::MeanPair { mean1, mean2 },
        ) => {
            annotations.push(Annotation::MeanLine {
                value: mean1.value,
                start: first.start(),
                end: first.end(),
            });
            annotations.push(Annotation::MeanLine {
                value: mean2.value,
                start: second.start(),
                end: second.end(),
            });
            annotations.push(Annotation::SplitMarker {
                date: window.last_session,
            });
        }
        (FactType::Trend, TimeRef::Interval { interval }, _) => {
            let inside: Vec<ChartPoint> = points
                .iter()
                .copied()
                .filter(|p| interval.contains(p.date))
                .collect();
            annotations.extend(trend_segment(&inside));
        }
        (_, TimeRef::Point { date }, ValueRef::Scalar { v }) => {
            annotations.push(Annotation::HighlightPoint {
                date: *date,
                value: v.value,
            });
        }
        (_, TimeRef::PointPair { t1, t2 }, ValueRef::ScalarPair { v1, v2 }) => {
            annotations.push(Annotation::HighlightPoint {
                date: *t1,
                value: v1.value,
            });
            annotations.push(Annotation::HighlightPoint {
                date: *t2,
                value: v2.value,
            });
        }
        _ => {}
    }
    let chart_kind = if fact.source() == DataSourceType::SurveyScores {
        ChartKind::Bar
    } else {
        ChartKind::Line
    };
    Ok(ChartSpec {
        fact_id: fact.id().to_string(),
        chart_kind,
        series: points,
        annotations,
        y_label: format!("{} ({})", fact.entity().label, series.unit().as_str()),
    })
}

// ---------------------------------------------------------------------------
// Bundle

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientBackground {
    pub patient_id: String,
    pub name: String,
    pub age: u32,
    pub pronouns: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    Note,
    Transcript,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub kind: DocumentKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardBundle {
    pub version: String,
    pub patient: PatientBackground,
    pub session_index: usize,
    pub window: AnalysisWindow,
    pub timeline: SessionTimeline,
    pub sections: NarrativeSections,
    pub facts: BTreeMap<String, DataFact>,
    pub charts: BTreeMap<String, ChartSpec>,
    pub questions: Vec<Question>,
    pub plans: Vec<QuestionPlan>,
    pub documents: BTreeMap<String, Document>,
    pub suggested_activities: Vec<Activity>,
    pub skip_log: Vec<SkipEntry>,
}

/// Everything the pipeline hands to [`build_bundle`].
#[derive(Debug, Clone)]
pub struct BundleInputs<'a> {
    pub record: &'a PatientRecord,
    pub session_index: usize,
    pub window: AnalysisWindow,
    pub facts: Vec<DataFact>,
    pub questions: Vec<Question>,
    pub plans: Vec<QuestionPlan>,
    pub recap: Vec<crate::model::RecapCard>,
    pub insights: Vec<Insight>,
    pub skip_log: Vec<SkipEntry>,
    pub config: &'a Config,
}

pub fn build_bundle(inputs: BundleInputs<'_>) -> Result<DashboardBundle, BundleError> {
    let record = inputs.record;
    let mut charts = BTreeMap::new();
    for fact in &inputs.facts {
        let series = record
            .sensing
            .get(fact.feature_id())
            .or_else(|| record.surveys.get(fact.feature_id()));
        charts.insert(
            fact.id().to_string(),
            chart_spec_for(fact, series, &inputs.window)?,
        );
    }
    let facts: BTreeMap<String, DataFact> = inputs
        .facts
        .into_iter()
        .map(|f| (f.id().to_string(), f))
        .collect();
    let mut documents = BTreeMap::new();
    for (id, text) in &record.notes {
        documents.insert(
            id.clone(),
            Document {
                kind: DocumentKind::Note,
                text: text.clone(),
            },
        );
    }
    for (id, text) in &record.transcripts {
        documents.insert(
            id.clone(),
            Document {
                kind: DocumentKind::Transcript,
                text: text.clone(),
            },
        );
    }
    let summary_pool = inputs.insights.iter().map(|i| i.id().to_string()).collect();
    let bundle = DashboardBundle {
        version: BUNDLE_VERSION.to_string(),
        patient: PatientBackground {
            patient_id: record.patient_id.clone(),
            name: record.profile.name.clone(),
            age: record.profile.age,
            pronouns: record.profile.pronouns.clone(),
        },
        session_index: inputs.session_index,
        window: inputs.window,
        timeline: record.timeline.clone(),
        sections: NarrativeSections {
            medical_history: record.profile.history.clone(),
            session_recap: inputs.recap,
            patient_data_insights: inputs.insights,
            summary_pool,
        },
        facts,
        charts,
        questions: inputs.questions,
        plans: inputs.plans,
        documents,
        suggested_activities: inputs.config.activities.clone(),
        skip_log: inputs.skip_log,
    };
    check_closure(&bundle)?;
    Ok(bundle)
}

fn check_span(
    span: &EvidenceSpan,
    documents: &BTreeMap<String, Document>,
    dangling: &mut Vec<String>,
) {
    match documents.get(&span.document_id) {
        None => dangling.push(format!("document {}", span.document_id)),
        Some(doc) if span.verify(&doc.text).is_err() => dangling.push(format!(
            "span {}[{}..{}]",
            span.document_id, span.start, span.end
        )),
        Some(_) => {}
    }
}

/// Every id referenced anywhere in the bundle resolves. Lists all dangling
/// references, not just the first.
pub fn check_closure(bundle: &DashboardBundle) -> Result<(), BundleError> {
    let mut dangling = Vec::new();
    let insights = &bundle.sections.patient_data_insights;
    let insight_ids: BTreeSet<&str> = insights.iter().map(|i| i.id()).collect();
    let question_ids: BTreeSet<&str> = bundle.questions.iter().map(|q| q.id.as_str()).collect();
    for insight in insights {
        for id in insight.fact_ids() {
            if !bundle.facts.contains_key(id) {
                dangling.push(format!("fact {id}"));
            }
        }
        if let Some(q) = insight.question_id() {
            if !question_ids.contains(q) {
                dangling.push(format!("question {q}"));
            }
        }
    }
    for id in &bundle.sections.summary_pool {
        if !insight_ids.contains(id.as_str()) {
            dangling.push(format!("insight {id}"));
        }
    }
    for (id, fact) in &bundle.facts {
        if !bundle.charts.contains_key(id)
            && matches!(
                fact.source(),
                DataSourceType::PassiveSensing | DataSourceType::SurveyScores
            )
        {
            dangling.push(format!("chart {id}"));
        }
    }
    for id in bundle.charts.keys() {
        if !bundle.facts.contains_key(id) {
            dangling.push(format!("fact {id}"));
        }
    }
    for card in &bundle.sections.session_recap {
        for span in &card.evidence {
            check_span(span, &bundle.documents, &mut dangling);
        }
    }
    for q in &bundle.questions {
        check_span(&q.source_span, &bundle.documents, &mut dangling);
    }
    for s in bundle.timeline.sessions() {
        for id in s.note_id.iter().chain(s.transcript_id.iter()) {
            if !bundle.documents.contains_key(id) {
                dangling.push(format!("document {id}"));
            }
        }
    }
    dangling.sort();
    dangling.dedup();
    if dangling.is_empty() {
        Ok(())
    } else {
        Err(BundleError::BrokenReference(dangling))
    }
}

/// Canonical serialization: sorted object keys, two-space indentation,
/// shortest round-trip number formatting.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, BundleError> {
    let tree: Value = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&tree)?;
    out.push('\n');
    Ok(out)
}

fn schema_errors(schema: &str, instance: &Value) -> Vec<String> {
    let schema: Value = serde_json::from_str(schema).expect("shipped schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("shipped schema compiles");
    validator
        .iter_errors(instance)
        .map(|e| {
            let at = e.instance_path.to_string();
            format!("{}: {e}", if at.is_empty() { "/" } else { &at })
        })
        .collect()
}

/// Validates a bundle document against the shipped schema.
pub fn validate_bundle_schema(instance: &Value) -> Result<(), BundleError> {
    let errors = schema_errors(BUNDLE_SCHEMA, instance);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(BundleError::Schema(errors))
    }
}

/// Validates a datagen manifest against the shipped schema.
pub fn validate_manifest_schema(instance: &Value) -> Result<(), BundleError> {
    let errors = schema_errors(MANIFEST_SCHEMA, instance);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(BundleError::Schema(errors))
    }
}

/// Parses bundle JSON and runs every integrity check: schema, typed
/// deserialization (which re-derives ids and descriptions) and closure.
pub fn validate_bundle_json(text: &str) -> Result<DashboardBundle, BundleError> {
    let value: Value = serde_json::from_str(text)?;
    validate_bundle_schema(&value)?;
    let bundle: DashboardBundle = serde_json::from_value(value)?;
    check_closure(&bundle)?;
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// Drill-down and messages

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDocument {
    pub document_id: String,
    pub kind: DocumentKind,
    pub text: String,
    pub spans: Vec<EvidenceSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drilldown {
    pub fact: DataFact,
    pub chart: Option<ChartSpec>,
    pub insight_ids: Vec<String>,
    pub evidence: Vec<EvidenceDocument>,
}

/// The fact, its chart and the text evidence behind the questions whose
/// insights cite it.
pub fn drilldown(bundle: &DashboardBundle, fact_id: &str) -> Option<Drilldown> {
    let fact = bundle.facts.get(fact_id)?.clone();
    let citing: Vec<&Insight> = bundle
        .sections
        .patient_data_insights
        .iter()
        .filter(|i| i.fact_ids().iter().any(|f| f == fact_id))
        .collect();
    let mut by_doc: BTreeMap<&str, Vec<EvidenceSpan>> = BTreeMap::new();
    for insight in &citing {
        let Some(q) = insight
            .question_id()
            .and_then(|q| bundle.questions.iter().find(|x| x.id == q))
        else {
            continue;
        };
        let spans = by_doc
            .entry(q.source_span.document_id.as_str())
            .or_default();
        if !spans.contains(&q.source_span) {
            spans.push(q.source_span.clone());
        }
    }
    let evidence = by_doc
        .into_iter()
        .filter_map(|(id, spans)| {
            bundle.documents.get(id).map(|d| EvidenceDocument {
                document_id: id.to_string(),
                kind: d.kind,
                text: d.text.clone(),
                spans,
            })
        })
        .collect();
    Some(Drilldown {
        chart: bundle.charts.get(fact_id).cloned(),
        insight_ids: citing.iter().map(|i| i.id().to_string()).collect(),
        fact,
        evidence,
    })
}

/// Patient message for the selected insights and activities of a bundle.
pub fn draft_for(
    bundle: &DashboardBundle,
    insight_ids: &[String],
    activity_ids: &[String],
    blocklist: &[String],
) -> Result<String, BundleError> {
    let mut unknown = Vec::new();
    let insights: Vec<&Insight> = insight_ids
        .iter()
        .filter_map(|id| {
            let found = bundle
                .sections
                .patient_data_insights
                .iter()
                .find(|i| i.id() == id);
            if found.is_none() {
                unknown.push(id.clone());
            }
            found
        })
        .collect();
    let activities: Vec<&Activity> = activity_ids
        .iter()
        .filter_map(|id| {
            let found = bundle.suggested_activities.iter().find(|a| &a.id == id);
            if found.is_none() {
                unknown.push(id.clone());
            }
            found
        })
        .collect();
    if !unknown.is_empty() {
        return Err(BundleError::UnknownIds(unknown));
    }
    Ok(draft_message(
        &bundle.patient.name,
        &insights,
        &activities,
        blocklist,
    )?)
}

// ---------------------------------------------------------------------------
// Store

/// Bundles on disk at `<root>/<patient>/bundles/session-<k>.json`.
#[derive(Debug, Clone)]
pub struct BundleStore {
    root: PathBuf,
}

impl BundleStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        BundleStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, patient: &str, session: usize) -> PathBuf {
        self.root
            .join(patient)
            .join("bundles")
            .join(format!("session-{session}.json"))
    }

    /// Writes through a temporary file in the same directory, then renames,
    /// so readers never see a partial bundle.
    pub fn write(&self, patient: &str, session: usize, json: &str) -> Result<PathBuf, BundleError> {
        let path = self.path(patient, session);
        let dir = path.parent().expect("bundle path has a parent");
        let io = |source| BundleError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        std::io::Write::write_all(&mut tmp, json.as_bytes()).map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(path)
    }

    pub fn read(&self, patient: &str, session: usize) -> Result<Option<String>, BundleError> {
        let path = self.path(patient, session);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(BundleError::Io { path, source }),
        }
    }

    /// Highest stored session index for a patient.
    pub fn latest_session(&self, patient: &str) -> Option<usize> {
        let dir = self.root.join(patient).join("bundles");
        std::fs::read_dir(dir)
            .ok()?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_prefix("session-")?
                    .strip_suffix(".json")?
                    .parse()
                    .ok()
            })
            .max()
    }

    /// Patient directories under the root (those holding a profile), with names.
    pub fn patients(&self) -> Result<Vec<(String, String)>, BundleError> {
        let io = |source| BundleError::Io {
            path: self.root.clone(),
            source,
        };
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.root).map_err(io)? {
            let entry = entry.map_err(io)?;
            let profile = entry.path().join("profile.json");
            let Ok(text) = std::fs::read_to_string(&profile) else {
                continue;
            };
            let name = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("name").and_then(Value::as_str).map(str::to_string))
                .unwrap_or_default();
            out.push((entry.file_name().to_string_lossy().into_owned(), name));
        }
        out.sort();
        Ok(out)
    }
}
