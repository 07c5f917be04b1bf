//! Questions, plans and insight synthesis.
//!
//! The guided path turns trigger phrases in the last session's note and
//! transcript into questions, plans which features can answer them, and
//! writes one insight per answerable question. The exploratory path clusters
//! the remaining facts by feature group and time and writes one insight per
//! cluster.

pub mod compose;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::Config;
use crate::model::{
    BiopsychosocialTag, DataFact, DataSourceType, Discovery, EvidenceSpan, FactType, Insight,
    InsightSpec, ModelError, PatientRecord, TwoPartText,
};
use crate::narrator::{
    fact_values, feature_group, narrate_insight, validate_word_limit, NarrateError, INSIGHT_LIMIT,
};
use crate::registry::Registry;
use crate::text::{find_chars, find_ci, sentence_at};
use compose::{blocked_terms, compose_with_retries, ComposerBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("session {0} has no clinical note")]
    NoLastSessionNote(usize),
    #[error("no facts to synthesize")]
    NoFacts,
    #[error(transparent)]
    Narrate(#[from] NarrateError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub topic: String,
    pub text: String,
    pub trigger: String,
    pub target_features: Vec<String>,
    pub fact_types: Vec<FactType>,
    pub source: DataSourceType,
    pub source_span: EvidenceSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPlan {
    pub question_id: String,
    pub answerable: bool,
    pub features: Vec<String>,
    pub fact_types_requested: Vec<FactType>,
}

const RULE_BASED: [FactType; 3] = [FactType::Comparison, FactType::Trend, FactType::Outlier];

/// One question per topic whose trigger appears in the note or transcript of
/// session `index`; the note is searched first and the earliest trigger wins.
pub fn generate_questions_deterministic(
    record: &PatientRecord,
    index: usize,
    config: &Config,
) -> Result<Vec<Question>, SynthError> {
    let docs = session_documents(record, index)?;
    let mut out = Vec::new();
    for topic in &config.topics {
        let hit = docs.iter().find_map(|(doc_id, text, source)| {
            topic
                .triggers
                .iter()
                .filter_map(|t| find_ci(text, t).map(|at| (at, t)))
                .min()
                .map(|(at, trigger)| (doc_id, text, *source, at, trigger))
        });
        let Some((doc_id, text, source, at, trigger)) = hit else {
            continue;
        };
        let (s, e) = sentence_at(text, at).unwrap_or((at, at + trigger.chars().count()));
        out.push(Question {
            id: format!("q-{}", topic.id),
            topic: topic.id.clone(),
            text: topic.question.clone(),
            trigger: trigger.clone(),
            target_features: topic.features.clone(),
            fact_types: if topic.fact_types.is_empty() {
                RULE_BASED.to_vec()
            } else {
                topic.fact_types.clone()
            },
            source,
            source_span: EvidenceSpan::new(doc_id, text, s, e)?,
        });
    }
    Ok(out)
}

fn session_documents(
    record: &PatientRecord,
    index: usize,
) -> Result<Vec<(&str, &str, DataSourceType)>, SynthError> {
    let session = record
        .timeline
        .session(index)
        .ok_or(SynthError::NoLastSessionNote(index))?;
    let note_id = session
        .note_id
        .as_deref()
        .ok_or(SynthError::NoLastSessionNote(index))?;
    let note = record
        .notes
        .get(note_id)
        .ok_or(SynthError::NoLastSessionNote(index))?;
    let mut docs = vec![(note_id, note.as_str(), DataSourceType::ClinicalNotes)];
    if let Some(tid) = session.transcript_id.as_deref() {
        if let Some(t) = record.transcripts.get(tid) {
            docs.push((tid, t.as_str(), DataSourceType::Transcripts));
        }
    }
    Ok(docs)
}

/// Questions from the backend. External suggestions are kept only when they
/// name a registered topic and quote the session documents verbatim; if
/// none survive, the deterministic scan is used.
pub fn generate_questions(
    record: &PatientRecord,
    index: usize,
    config: &Config,
    backend: &ComposerBackend,
) -> Result<Vec<Question>, SynthError> {
    let fallback = generate_questions_deterministic(record, index, config)?;
    let Some(external) = backend.external() else {
        return Ok(fallback);
    };
    let docs = session_documents(record, index)?;
    let topics: Vec<Value> = config
        .topics
        .iter()
        .map(|t| json!({ "id": t.id, "question": t.question }))
        .collect();
    let payload = json!({
        "documents": docs.iter().map(|(id, text, _)| json!({ "id": id, "text": text })).collect::<Vec<_>>(),
        "topics": topics,
    });
    let instruction =
        "List the topics a clinician should ask about. Reply with {\"text\": <JSON array of \
        {\"topic\", \"document\", \"quote\"}>}, quoting the documents verbatim.";
    let accepted = compose_with_retries(instruction, &payload, external, |reply| {
        let items: Vec<Value> = serde_json::from_str(reply).ok()?;
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for item in items {
            let (Some(topic_id), Some(doc), Some(quote)) = (
                item.get("topic").and_then(Value::as_str),
                item.get("document").and_then(Value::as_str),
                item.get("quote").and_then(Value::as_str),
            ) else {
                continue;
            };
            let Some(topic) = config.topic(topic_id) else {
                continue;
            };
            let Some(&(doc_id, text, source)) = docs.iter().find(|(id, _, _)| *id == doc) else {
                continue;
            };
            let Some(start) = find_chars(text, quote) else {
                continue;
            };
            if !seen.insert(topic_id.to_string()) {
                continue;
            }
            let Ok(span) = EvidenceSpan::new(doc_id, text, start, start + quote.chars().count())
            else {
                continue;
            };
            out.push(Question {
                id: format!("q-{}", topic.id),
                topic: topic.id.clone(),
                text: topic.question.clone(),
                trigger: quote.to_string(),
                target_features: topic.features.clone(),
                fact_types: if topic.fact_types.is_empty() {
                    RULE_BASED.to_vec()
                } else {
                    topic.fact_types.clone()
                },
                source,
                source_span: span,
            });
        }
        (!out.is_empty()).then_some(out)
    });
    Ok(accepted.unwrap_or(fallback))
}

/// Answerable exactly when some target feature is available.
pub fn plan_question(question: &Question, available: &BTreeSet<String>) -> QuestionPlan {
    let features: Vec<String> = question
        .target_features
        .iter()
        .filter(|f| available.contains(*f))
        .cloned()
        .collect();
    QuestionPlan {
        question_id: question.id.clone(),
        answerable: !features.is_empty(),
        features,
        fact_types_requested: question.fact_types.clone(),
    }
}

/// Facts answering a plan: requested types on the planned features.
pub fn facts_for_plan<'a>(plan: &QuestionPlan, facts: &'a [DataFact]) -> Vec<&'a DataFact> {
    if !plan.answerable {
        return Vec::new();
    }
    facts
        .iter()
        .filter(|f| plan.features.iter().any(|p| p == f.feature_id()))
        .filter(|f| plan.fact_types_requested.contains(&f.fact_type()))
        .collect()
}

/// Marks facts cited by answerable plans as guided; everything else stays
/// exploratory. Returns (guided, exploratory) preserving input order.
pub fn partition_facts(
    plans: &[QuestionPlan],
    facts: &[DataFact],
) -> (Vec<DataFact>, Vec<DataFact>) {
    let mut guided = Vec::new();
    let mut exploratory = Vec::new();
    for fact in facts {
        let hit = plans.iter().any(|p| {
            p.answerable
                && p.features.iter().any(|f| f == fact.feature_id())
                && p.fact_types_requested.contains(&fact.fact_type())
        });
        if hit {
            guided.push(fact.with_discovery(Discovery::Guided));
        } else {
            exploratory.push(fact.with_discovery(Discovery::Exploratory));
        }
    }
    (guided, exploratory)
}

/// Significant first, then smaller p (facts without p last), type, id.
pub fn fact_rank(a: &DataFact, b: &DataFact) -> std::cmp::Ordering {
    let p = |f: &DataFact| f.p_value().unwrap_or(f64::INFINITY);
    b.significant()
        .cmp(&a.significant())
        .then(p(a).total_cmp(&p(b)))
        .then(a.fact_type().cmp(&b.fact_type()))
        .then(a.id().cmp(b.id()))
}

/// Facts an insight may cite: only the significant ones when any exist,
/// otherwise the six best-ranked.
pub fn select_facts<'a>(facts: &[&'a DataFact]) -> Vec<&'a DataFact> {
    let mut pool: Vec<&DataFact> = if facts.iter().any(|f| f.significant()) {
        facts.iter().copied().filter(|f| f.significant()).collect()
    } else {
        facts.to_vec()
    };
    pool.sort_by(|a, b| fact_rank(a, b));
    pool.dedup_by(|a, b| a.id() == b.id());
    pool.truncate(crate::model::MAX_FACTS_PER_INSIGHT);
    pool
}

/// Union of registry tags over the features; unregistered features count as
/// psychological.
pub fn tag_biopsychosocial<'a>(
    feature_ids: impl IntoIterator<Item = &'a str>,
    registry: &Registry,
) -> BTreeSet<BiopsychosocialTag> {
    let mut tags = BTreeSet::new();
    for id in feature_ids {
        match registry.series(id) {
            Some(s) if !s.tags().is_empty() => tags.extend(s.tags().iter().copied()),
            _ => {
                tags.insert(BiopsychosocialTag::Psychological);
            }
        }
    }
    if tags.is_empty() {
        tags.insert(BiopsychosocialTag::Psychological);
    }
    tags
}

/// Deterministic text, or an external composition that passes the word
/// limit and the diagnostic-language screen.
fn compose_text(
    chosen: &[&DataFact],
    context: Value,
    config: &Config,
    backend: &ComposerBackend,
) -> Result<TwoPartText, SynthError> {
    let fallback = narrate_insight(chosen, config)?;
    let Some(external) = backend.external() else {
        return Ok(fallback);
    };
    let facts: Vec<Value> = chosen
        .iter()
        .map(|f| json!({ "id": f.id(), "description": f.description(), "values": fact_values(f) }))
        .collect();
    let payload = json!({ "context": context, "facts": facts, "example": fallback });
    let instruction = "Write one clinician-facing insight from these facts as \"<fact clause> | <implication>\", \
        fewer than 15 words in total, non-diagnostic. Use only the numbers given. Reply with {\"text\": ...}.";
    let accepted = compose_with_retries(instruction, &payload, external, |reply| {
        let (clause, implication) = reply.split_once('|')?;
        let text = TwoPartText {
            fact_clause: clause.trim().to_string(),
            implication: implication.trim().to_string(),
        };
        if text.fact_clause.is_empty() || text.implication.is_empty() {
            return None;
        }
        validate_word_limit(
            &format!("{} {}", text.fact_clause, text.implication),
            INSIGHT_LIMIT,
        )
        .ok()?;
        blocked_terms(reply, &config.blocklist)
            .is_empty()
            .then_some(text)
    });
    Ok(accepted.unwrap_or(fallback))
}

fn build_insight(
    chosen: &[&DataFact],
    text: TwoPartText,
    extra_source: Option<DataSourceType>,
    origin: Discovery,
    question_id: Option<String>,
    config: &Config,
) -> Result<Insight, SynthError> {
    let mut sources: BTreeSet<DataSourceType> = chosen.iter().map(|f| f.source()).collect();
    sources.extend(extra_source);
    Ok(Insight::new(InsightSpec {
        text,
        tags: tag_biopsychosocial(chosen.iter().map(|f| f.feature_id()), &config.registry),
        sources,
        fact_ids: chosen.iter().map(|f| f.id().to_string()).collect(),
        origin,
        question_id,
        significant_facts: chosen.iter().filter(|f| f.significant()).count(),
    })?)
}

/// One insight answering a planned question. The question's document counts
/// as an additional data source.
pub fn guided_synthesize(
    question: &Question,
    plan: &QuestionPlan,
    facts: &[&DataFact],
    config: &Config,
    backend: &ComposerBackend,
) -> Result<Insight, SynthError> {
    if facts.is_empty() || !plan.answerable {
        return Err(SynthError::NoFacts);
    }
    let chosen = select_facts(facts);
    let context =
        json!({ "question": question.text, "evidence": question.source_span.quoted_text });
    let text = compose_text(&chosen, context, config, backend)?;
    build_insight(
        &chosen,
        text,
        Some(question.source),
        Discovery::Guided,
        Some(question.id.clone()),
        config,
    )
}

/// Key grouping facts into one exploratory insight: feature group plus the
/// shared window for interval facts or the date for point facts.
pub fn cluster_key(fact: &DataFact, config: &Config) -> (String, String) {
    let group = feature_group(config, fact.feature_id()).to_string();
    let when = match fact.fact_type() {
        FactType::Comparison | FactType::Trend => "window".to_string(),
        _ => fact.time().span().end().to_string(),
    };
    (group, when)
}

/// One insight per cluster of facts, best-ranked first. Fewer than fifteen
/// clusters yield fewer insights; the shortfall is logged, not padded.
pub fn exploratory_synthesize(
    facts: &[DataFact],
    config: &Config,
    backend: &ComposerBackend,
) -> Result<Vec<Insight>, SynthError> {
    if facts.is_empty() {
        return Err(SynthError::NoFacts);
    }
    let mut clusters: BTreeMap<(String, String), Vec<&DataFact>> = BTreeMap::new();
    for fact in facts {
        clusters
            .entry(cluster_key(fact, config))
            .or_default()
            .push(fact);
    }
    let mut out = Vec::with_capacity(clusters.len());
    for ((group, when), members) in &clusters {
        let chosen = select_facts(members);
        let context = json!({ "group": group, "when": when });
        match compose_text(&chosen, context, config, backend) {
            Ok(text) => out.push(build_insight(
                &chosen,
                text,
                None,
                Discovery::Exploratory,
                None,
                config,
            )?),
            Err(SynthError::Narrate(NarrateError::LexiconMiss(key))) => {
                log::warn!("skipping cluster ({group}, {when}): no implication phrase for {key}");
            }
            Err(e) => return Err(e),
        }
    }
    if out.len() < 15 {
        log::info!(
            "{} exploratory candidates from {} clusters (target 15)",
            out.len(),
            clusters.len()
        );
    }
    out.sort_by(crate::narrator::exploratory_rank);
    Ok(out)
}

#[cfg(test)]
mod tests;
