//! Session recap, insight wording, threading and patient messages.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::analyzer::render::{format_date, format_measure};
use crate::config::{Activity, Config};
use crate::model::{
    word_count, DataFact, Discovery, EvidenceSpan, FactAttribute, HistoryItem, Insight, ModelError,
    RecapCard, RecapKind, TimeRef, TwoPartText, ValueRef, INSIGHT_WORD_LIMIT, RECAP_WORD_LIMIT,
};
use crate::synthesizer::compose::{blocked_terms, compose_with_retries, ComposerBackend};
use crate::text::{find_chars, sentence_spans};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NarrateError {
    #[error("note {0} is empty")]
    EmptyNote(String),
    #[error("no implication phrase for {0}")]
    LexiconMiss(String),
    #[error("nothing selected for the message")]
    EmptySelection,
    #[error("insight cites no facts")]
    NoFacts,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const NOT_DOCUMENTED: &str = "(not documented)";

/// The four narrative sections of the dashboard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeSections {
    pub medical_history: Vec<HistoryItem>,
    pub session_recap: Vec<RecapCard>,
    pub patient_data_insights: Vec<Insight>,
    pub summary_pool: Vec<String>,
}

// ---------------------------------------------------------------------------
// Word limits

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordLimit {
    /// Strictly fewer than n words.
    Below(usize),
    /// At most n words.
    AtMost(usize),
}

pub const INSIGHT_LIMIT: WordLimit = WordLimit::Below(INSIGHT_WORD_LIMIT);
pub const RECAP_LIMIT: WordLimit = WordLimit::AtMost(RECAP_WORD_LIMIT);

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("{0} words exceeds the limit")]
pub struct WordLimitViolation(pub usize);

pub fn validate_word_limit(text: &str, limit: WordLimit) -> Result<(), WordLimitViolation> {
    let n = word_count(text);
    let ok = match limit {
        WordLimit::Below(max) => n < max,
        WordLimit::AtMost(max) => n <= max,
    };
    if ok {
        Ok(())
    } else {
        Err(WordLimitViolation(n))
    }
}

// ---------------------------------------------------------------------------
// Recap

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Header {
    Subjective,
    Objective,
    Assessment,
    Plan,
}

const HEADERS: [(&str, Header); 4] = [
    ("subjective:", Header::Subjective),
    ("objective:", Header::Objective),
    ("assessment:", Header::Assessment),
    ("plan:", Header::Plan),
];

/// SOAP sections as char ranges of the note body following each header.
fn soap_sections(note: &str) -> Vec<(Header, usize, usize)> {
    let mut found: Vec<(Header, usize, usize)> = Vec::new();
    let mut offset = 0;
    for line in note.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let indent = line.chars().count() - trimmed.chars().count();
        let lower = trimmed.to_lowercase();
        if let Some((h, header)) = HEADERS.iter().find(|(h, _)| lower.starts_with(h)) {
            let body_start = offset + indent + h.chars().count();
            if let Some(last) = found.last_mut() {
                last.2 = offset;
            }
            found.push((*header, body_start, note.chars().count()));
        }
        offset += line.chars().count();
    }
    found
}

fn card_from_sentence(
    kind: RecapKind,
    note_id: &str,
    note: &str,
    span: (usize, usize),
) -> Result<RecapCard, NarrateError> {
    let evidence = EvidenceSpan::new(note_id, note, span.0, span.1)?;
    let words: Vec<&str> = evidence.quoted_text.split_whitespace().collect();
    let text = if words.len() > RECAP_WORD_LIMIT {
        format!("{}\u{2026}", words[..RECAP_WORD_LIMIT].join(" "))
    } else {
        words.join(" ")
    };
    Ok(RecapCard::new(kind, text, vec![evidence])?)
}

fn undocumented(kind: RecapKind) -> RecapCard {
    RecapCard {
        kind,
        text: NOT_DOCUMENTED.to_string(),
        evidence: Vec::new(),
    }
}

/// First sentence in `[start, end)` of `note` accepted by `keep`.
fn first_sentence(
    note: &str,
    start: usize,
    end: usize,
    breaks: &[char],
    keep: impl Fn(&str) -> bool,
) -> Option<(usize, usize)> {
    let body: String = note.chars().skip(start).take(end - start).collect();
    sentence_spans(&body, breaks)
        .into_iter()
        .map(|(s, e)| (start + s, start + e))
        .find(|&(s, e)| keep(&body.chars().skip(s - start).take(e - s).collect::<String>()))
}

/// Three recap cards (S+O, Assessment, Plan) from a note, deterministically.
pub fn summarize_recap_deterministic(
    note_id: &str,
    note: &str,
    config: &Config,
) -> Result<Vec<RecapCard>, NarrateError> {
    if note.trim().is_empty() {
        return Err(NarrateError::EmptyNote(note_id.to_string()));
    }
    let sections = soap_sections(note);
    let any = |_: &str| true;
    let len = note.chars().count();
    if sections.is_empty() {
        let so = match first_sentence(note, 0, len, &[], any) {
            Some(span) => card_from_sentence(RecapKind::SubjectiveObjective, note_id, note, span)?,
            None => undocumented(RecapKind::SubjectiveObjective),
        };
        return Ok(vec![
            so,
            undocumented(RecapKind::Assessment),
            undocumented(RecapKind::Plan),
        ]);
    }
    let pick = |wanted: &[Header], breaks: &[char], keep: &dyn Fn(&str) -> bool| {
        wanted.iter().find_map(|w| {
            sections
                .iter()
                .filter(|(h, _, _)| h == w)
                .find_map(|&(_, s, e)| first_sentence(note, s, e, breaks, keep))
        })
    };
    let mut cards = Vec::with_capacity(3);
    for (kind, wanted, breaks) in [
        (
            RecapKind::SubjectiveObjective,
            &[Header::Subjective, Header::Objective][..],
            &[][..],
        ),
        (RecapKind::Assessment, &[Header::Assessment][..], &[][..]),
        (RecapKind::Plan, &[Header::Plan][..], &[';'][..]),
    ] {
        let span = if kind == RecapKind::Plan {
            pick(wanted, breaks, &|s: &str| config.medication.matches(s))
        } else {
            pick(wanted, breaks, &any)
        };
        cards.push(match span {
            Some(span) => card_from_sentence(kind, note_id, note, span)?,
            None => undocumented(kind),
        });
    }
    Ok(cards)
}

/// Recap cards, asking the external backend first when configured. External
/// cards must quote the note verbatim, stay within the word limit and keep
/// the Plan card on medication; otherwise the deterministic cards are used.
pub fn summarize_recap(
    note_id: &str,
    note: &str,
    config: &Config,
    backend: &ComposerBackend,
) -> Result<Vec<RecapCard>, NarrateError> {
    let fallback = summarize_recap_deterministic(note_id, note, config)?;
    let Some(external) = backend.external() else {
        return Ok(fallback);
    };
    let instruction = "Summarize the clinical note into three cards: subjective_objective, assessment, plan. \
        Reply with {\"text\": <JSON object mapping each card to {\"text\", \"quote\"}>}. \
        Each text has at most 12 words; quote is copied verbatim from the note; plan covers medication only.";
    let payload = json!({ "note": note });
    let parsed = compose_with_retries(instruction, &payload, external, |reply| {
        let v: Value = serde_json::from_str(reply).ok()?;
        let mut cards = Vec::new();
        for (kind, key) in [
            (RecapKind::SubjectiveObjective, "subjective_objective"),
            (RecapKind::Assessment, "assessment"),
            (RecapKind::Plan, "plan"),
        ] {
            let text = v.get(key)?.get("text")?.as_str()?.trim().to_string();
            let quote = v.get(key)?.get("quote")?.as_str()?;
            validate_word_limit(&text, RECAP_LIMIT).ok()?;
            if kind == RecapKind::Plan && !config.medication.matches(&text) {
                return None;
            }
            let start = find_chars(note, quote)?;
            let span =
                EvidenceSpan::new(note_id, note, start, start + quote.chars().count()).ok()?;
            cards.push(RecapCard::new(kind, text, vec![span]).ok()?);
        }
        Some(cards)
    });
    Ok(parsed.unwrap_or(fallback))
}

// ---------------------------------------------------------------------------
// Insight wording

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Lowercases the first letter unless the word looks like an acronym.
fn decapitalize(s: &str) -> String {
    let mut chars = s.chars();
    match (chars.next(), s.chars().nth(1)) {
        (Some(c), Some(n)) if !n.is_uppercase() => c.to_lowercase().chain(chars).collect(),
        (Some(c), None) => c.to_lowercase().collect(),
        _ => s.to_string(),
    }
}

/// Compressed factual phrase for one fact, e.g. "Lower total sleep since last session".
pub fn fact_clause(fact: &DataFact, config: &Config) -> String {
    if let Some(clause) =
        config.clause_override(fact.feature_id(), fact.fact_type(), fact.attribute())
    {
        return clause.to_string();
    }
    let label = &fact.entity().label;
    let date = match fact.time() {
        TimeRef::Point { date } => format_date(*date),
        TimeRef::PointPair { t1, .. } => format_date(*t1),
        _ => String::new(),
    };
    use FactAttribute::*;
    let clause = match fact.attribute() {
        Increase => format!("higher {label} since last session"),
        Decrease => format!("lower {label} since last session"),
        RemainedStable => format!("steady {label} since last session"),
        Rise => format!("rising {label} since last session"),
        Fall => format!("falling {label} since last session"),
        Stable => format!("stable {label} since last session"),
        Cyclic => format!("weekly rhythm in {label}"),
        Variable => format!("variable {label} since last session"),
        NoTrend => format!("no clear change in {label}"),
        Spike => format!("{label} spiked on {date}"),
        Dip => format!("{label} dipped on {date}"),
        Max => format!("highest {label} on {date}"),
        Min => format!("lowest {label} on {date}"),
        More => format!("{label} up since {date}"),
        Less => format!("{label} down since {date}"),
    };
    capitalize(&clause)
}

/// Group a fact's feature belongs to; unregistered features form their own group.
pub fn feature_group<'a>(config: &'a Config, feature_id: &'a str) -> &'a str {
    config
        .registry
        .series(feature_id)
        .map_or(feature_id, |s| s.group())
}

/// Two-part text for an insight from its highest-ranked fact (first in
/// `ranked`): the fact clause plus the implication phrase for its key.
pub fn narrate_insight(ranked: &[&DataFact], config: &Config) -> Result<TwoPartText, NarrateError> {
    let top = ranked.first().ok_or(NarrateError::NoFacts)?;
    let group = feature_group(config, top.feature_id());
    let implication = config
        .implication(top.feature_id(), group, top.fact_type(), top.attribute())
        .ok_or_else(|| {
            NarrateError::LexiconMiss(format!(
                "({}, {:?}, {})",
                group,
                top.fact_type(),
                top.attribute()
            ))
        })?;
    let text = TwoPartText {
        fact_clause: fact_clause(top, config),
        implication: implication.to_string(),
    };
    if text.word_count() >= INSIGHT_WORD_LIMIT {
        return Err(ModelError::InsightTooLong(text.word_count()).into());
    }
    Ok(text)
}

/// Number, unit and date tokens a paraphrase must keep verbatim.
pub fn grounding_tokens(description: &str) -> BTreeSet<String> {
    const MONTHS: [&str; 12] = [
        "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
    ];
    const UNITS: [&str; 6] = ["hours", "hour", "miles", "mile", "times", "time"];
    tokens(description)
        .into_iter()
        .filter(|t| {
            t.chars().any(|c| c.is_ascii_digit())
                || MONTHS.contains(&t.as_str())
                || UNITS.contains(&t.as_str())
        })
        .collect()
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c == '\u{2013}')
        .map(|t| {
            t.trim_matches(|c: char| matches!(c, '.' | ',' | '(' | ')' | ';' | ':' | '!' | '?'))
        })
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Readable text for a fact. The deterministic backend returns the template
/// rendering unchanged; an external paraphrase is kept only if it preserves
/// every number, unit and date token of the template.
pub fn narrate_fact(fact: &DataFact, backend: &ComposerBackend) -> String {
    let Some(external) = backend.external() else {
        return fact.description().to_string();
    };
    let required = grounding_tokens(fact.description());
    let payload = json!({ "fact": fact.description() });
    let instruction =
        "Paraphrase the data fact for a clinician. Keep every number, unit and date exactly. \
        Reply with {\"text\": <paraphrase>}.";
    compose_with_retries(instruction, &payload, external, |reply| {
        accept_paraphrase(reply, &required)
    })
    .unwrap_or_else(|| fact.description().to_string())
}

fn accept_paraphrase(reply: &str, required: &BTreeSet<String>) -> Option<String> {
    let have: BTreeSet<String> = tokens(reply).into_iter().collect();
    required.is_subset(&have).then(|| reply.to_string())
}

// ---------------------------------------------------------------------------
// Threading

/// Ranks exploratory candidates: more significant facts, then more data
/// sources, then id.
pub fn exploratory_rank(a: &Insight, b: &Insight) -> std::cmp::Ordering {
    b.significant_facts()
        .cmp(&a.significant_facts())
        .then(b.sources().len().cmp(&a.sources().len()))
        .then(a.id().cmp(b.id()))
}

/// Display order: more data sources first, guided before exploratory, more
/// significant facts, then id.
pub fn display_rank(a: &Insight, b: &Insight) -> std::cmp::Ordering {
    let origin = |i: &Insight| {
        if i.origin() == Discovery::Guided {
            0
        } else {
            1
        }
    };
    b.sources()
        .len()
        .cmp(&a.sources().len())
        .then(origin(a).cmp(&origin(b)))
        .then(b.significant_facts().cmp(&a.significant_facts()))
        .then(a.id().cmp(b.id()))
}

/// Number of exploratory insights to keep: the preference clamped to four to
/// six, then to what is available.
pub fn exploratory_quota(preferred: usize, available: usize) -> usize {
    preferred.clamp(4, 6).min(available)
}

/// All guided insights plus the top exploratory ones, in display order.
pub fn thread(guided: &[Insight], exploratory: &[Insight], preferred_k: usize) -> Vec<Insight> {
    let mut pool: Vec<&Insight> = exploratory.iter().collect();
    pool.sort_by(|a, b| exploratory_rank(a, b));
    pool.dedup_by(|a, b| a.id() == b.id());
    let k = exploratory_quota(preferred_k, pool.len());
    let mut out: Vec<Insight> = guided.to_vec();
    out.extend(pool.into_iter().take(k).cloned());
    out.sort_by(display_rank);
    out
}

// ---------------------------------------------------------------------------
// Patient message

fn elide_blocked(text: &str, blocklist: &[String]) -> String {
    let mut out = text.to_string();
    for term in blocked_terms(text, blocklist) {
        log::warn!("elided blocked term {term:?} from patient message");
        while let Some(at) = out.to_lowercase().find(&term.to_lowercase()) {
            out.replace_range(at..at + term.len(), "");
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Plain template message: greeting, one line per insight, one suggestion
/// per activity, closing.
pub fn draft_message(
    patient_name: &str,
    insights: &[&Insight],
    activities: &[&Activity],
    blocklist: &[String],
) -> Result<String, NarrateError> {
    if insights.is_empty() && activities.is_empty() {
        return Err(NarrateError::EmptySelection);
    }
    let mut lines = vec![format!("Hi {patient_name},")];
    for insight in insights {
        let clause = elide_blocked(&insight.text().fact_clause, blocklist);
        lines.push(format!(
            "From your recent data, we noticed {}.",
            decapitalize(&clause)
        ));
    }
    for activity in activities {
        lines.push(format!(
            "You might try {}.",
            elide_blocked(&activity.label, blocklist)
        ));
    }
    lines.push("Looking forward to talking at our next session.".to_string());
    Ok(lines.join("\n"))
}

/// Measure text used when a fact is quoted in a payload.
pub fn fact_values(fact: &DataFact) -> Vec<String> {
    match fact.value() {
        ValueRef::Scalar { v } => vec![format_measure(v)],
        ValueRef::ScalarPair { v1, v2 } => vec![format_measure(v1), format_measure(v2)],
        ValueRef::MeanPair { mean1, mean2 } => vec![format_measure(mean1), format_measure(mean2)],
        ValueRef::None => Vec::new(),
    }
}
