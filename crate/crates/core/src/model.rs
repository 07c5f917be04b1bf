//! Domain types shared by every stage of the pipeline.
//!
//! Everything in here is immutable once constructed. Constructors enforce the
//! structural invariants (fact shapes, interval ordering, insight limits), and
//! the serde impls for the validated types route through the same constructors
//! so a deserialized value is held to the same rules as a freshly built one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analyzer::render::render_fact_description;

pub type Date = NaiveDate;

/// Maximum number of facts one insight may cite.
pub const MAX_FACTS_PER_INSIGHT: usize = 6;
/// Insights must stay strictly below this many words.
pub const INSIGHT_WORD_LIMIT: usize = 15;
/// Recap cards may use at most this many words.
pub const RECAP_WORD_LIMIT: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("interval start {start} is after end {end}")]
    InvertedInterval { start: Date, end: Date },
    #[error("time reference is not ordered: {0}")]
    UnorderedTime(String),
    #[error("attribute {attribute} does not belong to fact type {fact_type}")]
    AttributeMismatch {
        fact_type: FactType,
        attribute: FactAttribute,
    },
    #[error("{fact_type} fact cannot carry {what}")]
    ShapeMismatch { fact_type: FactType, what: String },
    #[error("significant fact requires a p-value below alpha (p = {p:?}, alpha = {alpha})")]
    Significance { p: Option<f64>, alpha: f64 },
    #[error("p-value {0} outside [0, 1]")]
    PValueRange(f64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("insight cites {0} facts; allowed range is 1..=6")]
    FactCount(usize),
    #[error("insight text has {0} words; limit is fewer than 15")]
    InsightTooLong(usize),
    #[error("insight has no biopsychosocial tags")]
    NoTags,
    #[error("insight has no data sources")]
    NoSources,
    #[error("insight cites unknown fact {0}")]
    UnknownFact(String),
    #[error("recap card has {0} words; limit is 12")]
    RecapTooLong(usize),
    #[error("evidence span [{start}, {end}) invalid for document {document_id} of length {len}")]
    SpanBounds {
        document_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("evidence span quoted text does not match document {0}")]
    SpanText(String),
    #[error("session dates must be strictly increasing and before today")]
    Timeline,
    #[error("series {0} dates must be strictly increasing")]
    SeriesOrder(String),
    #[error("stored {field} does not match recomputed value")]
    Derived { field: &'static str },
}

// ---------------------------------------------------------------------------
// Enumerations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactType {
    Comparison,
    Trend,
    Outlier,
    Extreme,
    Difference,
}

impl FactType {
    pub const ALL: [FactType; 5] = [
        FactType::Comparison,
        FactType::Trend,
        FactType::Outlier,
        FactType::Extreme,
        FactType::Difference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FactType::Comparison => "comparison",
            FactType::Trend => "trend",
            FactType::Outlier => "outlier",
            FactType::Extreme => "extreme",
            FactType::Difference => "difference",
        }
    }

    /// Attributes that may accompany this fact type.
    pub fn attributes(self) -> &'static [FactAttribute] {
        use FactAttribute::*;
        match self {
            FactType::Outlier => &[Spike, Dip],
            FactType::Trend => &[Rise, Fall, Stable, Cyclic, Variable, NoTrend],
            FactType::Comparison => &[Increase, Decrease, RemainedStable],
            FactType::Difference => &[More, Less],
            FactType::Extreme => &[Max, Min],
        }
    }
}

impl fmt::Display for FactType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactAttribute {
    Spike,
    Dip,
    Rise,
    Fall,
    Stable,
    Cyclic,
    Variable,
    #[serde(rename = "none")]
    NoTrend,
    Increase,
    Decrease,
    RemainedStable,
    More,
    Less,
    Max,
    Min,
}

impl FactAttribute {
    pub fn fact_type(self) -> FactType {
        use FactAttribute::*;
        match self {
            Spike | Dip => FactType::Outlier,
            Rise | Fall | Stable | Cyclic | Variable | NoTrend => FactType::Trend,
            Increase | Decrease | RemainedStable => FactType::Comparison,
            More | Less => FactType::Difference,
            Max | Min => FactType::Extreme,
        }
    }

    pub fn as_str(self) -> &'static str {
        use FactAttribute::*;
        match self {
            Spike => "spike",
            Dip => "dip",
            Rise => "rise",
            Fall => "fall",
            Stable => "stable",
            Cyclic => "cyclic",
            Variable => "variable",
            NoTrend => "none",
            Increase => "increase",
            Decrease => "decrease",
            RemainedStable => "remained_stable",
            More => "more",
            Less => "less",
            Max => "max",
            Min => "min",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        FactType::ALL
            .iter()
            .flat_map(|t| t.attributes().iter().copied())
            .find(|a| a.as_str() == s)
    }
}

impl fmt::Display for FactAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceType {
    PassiveSensing,
    SurveyScores,
    ClinicalNotes,
    Transcripts,
}

impl DataSourceType {
    pub const ALL: [DataSourceType; 4] = [
        DataSourceType::PassiveSensing,
        DataSourceType::SurveyScores,
        DataSourceType::ClinicalNotes,
        DataSourceType::Transcripts,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiopsychosocialTag {
    Biological,
    Psychological,
    Social,
}

impl BiopsychosocialTag {
    pub const ALL: [BiopsychosocialTag; 3] = [
        BiopsychosocialTag::Biological,
        BiopsychosocialTag::Psychological,
        BiopsychosocialTag::Social,
    ];
}

/// Which discovery path produced a fact or insight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discovery {
    Guided,
    Exploratory,
}

/// Display units known to the renderer. Every feature and instrument in the
/// registry must use one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Hours,
    Miles,
    Times,
    Count,
    Score,
}

impl Unit {
    /// Word appended after a rendered number, if any.
    pub fn suffix(self, singular: bool) -> Option<&'static str> {
        match (self, singular) {
            (Unit::Hours, false) => Some("hours"),
            (Unit::Hours, true) => Some("hour"),
            (Unit::Miles, false) => Some("miles"),
            (Unit::Miles, true) => Some("mile"),
            (Unit::Times, false) => Some("times"),
            (Unit::Times, true) => Some("time"),
            (Unit::Count, _) | (Unit::Score, _) => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Hours => "hours",
            Unit::Miles => "miles",
            Unit::Times => "times",
            Unit::Count => "count",
            Unit::Score => "score",
        }
    }
}

// ---------------------------------------------------------------------------
// Time and value references

/// Closed date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct Interval {
    start: Date,
    end: Date,
}

#[derive(Deserialize)]
struct RawInterval {
    start: Date,
    end: Date,
}

impl TryFrom<RawInterval> for Interval {
    type Error = ModelError;
    fn try_from(raw: RawInterval) -> Result<Self, Self::Error> {
        Interval::new(raw.start, raw.end)
    }
}

impl Interval {
    pub fn new(start: Date, end: Date) -> Result<Self, ModelError> {
        if start > end {
            return Err(ModelError::InvertedInterval { start, end });
        }
        Ok(Interval { start, end })
    }

    pub fn start(&self) -> Date {
        self.start
    }

    pub fn end(&self) -> Date {
        self.end
    }

    pub fn contains(&self, date: Date) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeRef {
    Point { date: Date },
    PointPair { t1: Date, t2: Date },
    Interval { interval: Interval },
    IntervalPair { first: Interval, second: Interval },
}

impl TimeRef {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            TimeRef::PointPair { t1, t2 } if t1 >= t2 => Err(ModelError::UnorderedTime(format!(
                "{t1} is not before {t2}"
            ))),
            TimeRef::IntervalPair { first, second } if first.end >= second.start => Err(
                ModelError::UnorderedTime(format!("{} overlaps {}", first.end, second.start)),
            ),
            _ => Ok(()),
        }
    }

    /// Smallest interval covering every date the reference mentions.
    pub fn span(&self) -> Interval {
        match *self {
            TimeRef::Point { date } => Interval {
                start: date,
                end: date,
            },
            TimeRef::PointPair { t1, t2 } => Interval { start: t1, end: t2 },
            TimeRef::Interval { interval } => interval,
            TimeRef::IntervalPair { first, second } => Interval {
                start: first.start,
                end: second.end,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub value: f64,
    pub unit: Unit,
}

impl Measure {
    pub fn new(value: f64, unit: Unit) -> Self {
        Measure { value, unit }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueRef {
    Scalar { v: Measure },
    ScalarPair { v1: Measure, v2: Measure },
    MeanPair { mean1: Measure, mean2: Measure },
    None,
}

impl ValueRef {
    fn measures(&self) -> Vec<Measure> {
        match *self {
            ValueRef::Scalar { v } => vec![v],
            ValueRef::ScalarPair { v1, v2 } => vec![v1, v2],
            ValueRef::MeanPair { mean1, mean2 } => vec![mean1, mean2],
            ValueRef::None => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub feature_id: String,
    pub label: String,
}

// ---------------------------------------------------------------------------
// Data facts

/// Everything needed to build a [`DataFact`]; identity, description and the
/// shape checks are derived from this.
#[derive(Debug, Clone, PartialEq)]
pub struct FactSpec {
    pub fact_type: FactType,
    pub entity: Entity,
    pub time: TimeRef,
    pub value: ValueRef,
    pub attribute: FactAttribute,
    pub significant: bool,
    pub p_value: Option<f64>,
    pub source: DataSourceType,
    pub discovery: Discovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataFact")]
pub struct DataFact {
    id: String,
    fact_type: FactType,
    entity: Entity,
    time: TimeRef,
    value: ValueRef,
    attribute: FactAttribute,
    significant: bool,
    p_value: Option<f64>,
    source: DataSourceType,
    description: String,
    discovery: Discovery,
}

#[derive(Deserialize)]
struct RawDataFact {
    id: String,
    fact_type: FactType,
    entity: Entity,
    time: TimeRef,
    value: ValueRef,
    attribute: FactAttribute,
    significant: bool,
    p_value: Option<f64>,
    source: DataSourceType,
    description: String,
    discovery: Discovery,
}

impl TryFrom<RawDataFact> for DataFact {
    type Error = ModelError;
    fn try_from(raw: RawDataFact) -> Result<Self, Self::Error> {
        let fact = DataFact::build(FactSpec {
            fact_type: raw.fact_type,
            entity: raw.entity,
            time: raw.time,
            value: raw.value,
            attribute: raw.attribute,
            significant: raw.significant,
            p_value: raw.p_value,
            source: raw.source,
            discovery: raw.discovery,
        })?;
        if fact.id != raw.id {
            return Err(ModelError::Derived { field: "id" });
        }
        if fact.description != raw.description {
            return Err(ModelError::Derived {
                field: "description",
            });
        }
        Ok(fact)
    }
}

impl DataFact {
    /// Validates the spec against the fact-shape table and the significance
    /// level, then derives the id and rendered description.
    pub fn new(spec: FactSpec, alpha: f64) -> Result<Self, ModelError> {
        if spec.significant && !spec.p_value.is_some_and(|p| p < alpha) {
            return Err(ModelError::Significance {
                p: spec.p_value,
                alpha,
            });
        }
        DataFact::build(spec)
    }

    fn build(spec: FactSpec) -> Result<Self, ModelError> {
        check_shape(&spec)?;
        if let Some(p) = spec.p_value {
            if !(0.0..=1.0).contains(&p) {
                return Err(ModelError::PValueRange(p));
            }
        }
        if spec.significant && spec.p_value.is_none() {
            return Err(ModelError::Significance {
                p: None,
                alpha: f64::NAN,
            });
        }
        let id = content_id(
            "f",
            &(
                spec.fact_type,
                &spec.entity.feature_id,
                &spec.time,
                &spec.value,
                spec.attribute,
            ),
        );
        let description = render_fact_description(
            spec.fact_type,
            &spec.entity,
            &spec.time,
            &spec.value,
            spec.attribute,
        );
        Ok(DataFact {
            id,
            fact_type: spec.fact_type,
            entity: spec.entity,
            time: spec.time,
            value: spec.value,
            attribute: spec.attribute,
            significant: spec.significant,
            p_value: spec.p_value,
            source: spec.source,
            description,
            discovery: spec.discovery,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn fact_type(&self) -> FactType {
        self.fact_type
    }
    pub fn entity(&self) -> &Entity {
        &self.entity
    }
    pub fn feature_id(&self) -> &str {
        &self.entity.feature_id
    }
    pub fn time(&self) -> &TimeRef {
        &self.time
    }
    pub fn value(&self) -> &ValueRef {
        &self.value
    }
    pub fn attribute(&self) -> FactAttribute {
        self.attribute
    }
    pub fn significant(&self) -> bool {
        self.significant
    }
    pub fn p_value(&self) -> Option<f64> {
        self.p_value
    }
    pub fn source(&self) -> DataSourceType {
        self.source
    }
    pub fn description(&self) -> &str {
        &self.description
    }
    pub fn discovery(&self) -> Discovery {
        self.discovery
    }

    /// Copy of this fact relabelled with another discovery path. Identity and
    /// description do not depend on the path, so they are unchanged.
    pub fn with_discovery(&self, discovery: Discovery) -> DataFact {
        DataFact {
            discovery,
            ..self.clone()
        }
    }
}

fn check_shape(spec: &FactSpec) -> Result<(), ModelError> {
    if spec.attribute.fact_type() != spec.fact_type {
        return Err(ModelError::AttributeMismatch {
            fact_type: spec.fact_type,
            attribute: spec.attribute,
        });
    }
    spec.time.validate()?;
    let time_ok = matches!(
        (spec.fact_type, &spec.time),
        (FactType::Outlier, TimeRef::Point { .. })
            | (FactType::Extreme, TimeRef::Point { .. })
            | (FactType::Trend, TimeRef::Interval { .. })
            | (FactType::Comparison, TimeRef::IntervalPair { .. })
            | (FactType::Difference, TimeRef::PointPair { .. })
    );
    if !time_ok {
        return Err(ModelError::ShapeMismatch {
            fact_type: spec.fact_type,
            what: format!("time reference {:?}", spec.time),
        });
    }
    let value_ok = matches!(
        (spec.fact_type, &spec.value),
        (FactType::Outlier, ValueRef::Scalar { .. })
            | (FactType::Extreme, ValueRef::Scalar { .. })
            | (FactType::Trend, ValueRef::None)
            | (FactType::Comparison, ValueRef::MeanPair { .. })
            | (FactType::Difference, ValueRef::ScalarPair { .. })
    );
    if !value_ok {
        return Err(ModelError::ShapeMismatch {
            fact_type: spec.fact_type,
            what: format!("value {:?}", spec.value),
        });
    }
    if spec.value.measures().iter().any(|m| !m.value.is_finite()) {
        return Err(ModelError::NonFinite(spec.entity.feature_id.clone()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Insights

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPartText {
    pub fact_clause: String,
    /// Rendered with emphasis by the dashboard.
    pub implication: String,
}

impl TwoPartText {
    pub fn word_count(&self) -> usize {
        word_count(&self.fact_clause) + word_count(&self.implication)
    }

    pub fn joined(&self) -> String {
        format!("{}, {}", self.fact_clause, self.implication)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsightSpec {
    pub text: TwoPartText,
    pub tags: BTreeSet<BiopsychosocialTag>,
    pub sources: BTreeSet<DataSourceType>,
    pub fact_ids: Vec<String>,
    pub origin: Discovery,
    pub question_id: Option<String>,
    pub significant_facts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawInsight")]
pub struct Insight {
    id: String,
    text: TwoPartText,
    tags: BTreeSet<BiopsychosocialTag>,
    sources: BTreeSet<DataSourceType>,
    fact_ids: Vec<String>,
    origin: Discovery,
    question_id: Option<String>,
    significant_facts: usize,
}

#[derive(Deserialize)]
struct RawInsight {
    id: String,
    text: TwoPartText,
    tags: BTreeSet<BiopsychosocialTag>,
    sources: BTreeSet<DataSourceType>,
    fact_ids: Vec<String>,
    origin: Discovery,
    question_id: Option<String>,
    significant_facts: usize,
}

impl TryFrom<RawInsight> for Insight {
    type Error = ModelError;
    fn try_from(raw: RawInsight) -> Result<Self, Self::Error> {
        let insight = Insight::new(InsightSpec {
            text: raw.text,
            tags: raw.tags,
            sources: raw.sources,
            fact_ids: raw.fact_ids,
            origin: raw.origin,
            question_id: raw.question_id,
            significant_facts: raw.significant_facts,
        })?;
        if insight.id != raw.id {
            return Err(ModelError::Derived { field: "id" });
        }
        Ok(insight)
    }
}

impl Insight {
    pub fn new(spec: InsightSpec) -> Result<Self, ModelError> {
        let n = spec.fact_ids.len();
        if n == 0 || n > MAX_FACTS_PER_INSIGHT {
            return Err(ModelError::FactCount(n));
        }
        let words = spec.text.word_count();
        if words >= INSIGHT_WORD_LIMIT {
            return Err(ModelError::InsightTooLong(words));
        }
        if spec.tags.is_empty() {
            return Err(ModelError::NoTags);
        }
        if spec.sources.is_empty() {
            return Err(ModelError::NoSources);
        }
        let id = content_id(
            "i",
            &(spec.origin, &spec.question_id, &spec.fact_ids, &spec.text),
        );
        Ok(Insight {
            id,
            text: spec.text,
            tags: spec.tags,
            sources: spec.sources,
            fact_ids: spec.fact_ids,
            origin: spec.origin,
            question_id: spec.question_id,
            significant_facts: spec.significant_facts,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn text(&self) -> &TwoPartText {
        &self.text
    }
    pub fn tags(&self) -> &BTreeSet<BiopsychosocialTag> {
        &self.tags
    }
    pub fn sources(&self) -> &BTreeSet<DataSourceType> {
        &self.sources
    }
    pub fn fact_ids(&self) -> &[String] {
        &self.fact_ids
    }
    pub fn origin(&self) -> Discovery {
        self.origin
    }
    pub fn question_id(&self) -> Option<&str> {
        self.question_id.as_deref()
    }
    pub fn significant_facts(&self) -> usize {
        self.significant_facts
    }

    /// Same insight with its text replaced (e.g. after narration).
    pub fn with_text(&self, text: TwoPartText) -> Result<Insight, ModelError> {
        Insight::new(InsightSpec {
            text,
            tags: self.tags.clone(),
            sources: self.sources.clone(),
            fact_ids: self.fact_ids.clone(),
            origin: self.origin,
            question_id: self.question_id.clone(),
            significant_facts: self.significant_facts,
        })
    }
}

/// Checks every insight invariant, including that each cited fact exists.
pub fn validate_insight(
    insight: &Insight,
    facts: &BTreeMap<String, DataFact>,
) -> Result<(), ModelError> {
    let n = insight.fact_ids.len();
    if n == 0 || n > MAX_FACTS_PER_INSIGHT {
        return Err(ModelError::FactCount(n));
    }
    let words = insight.text.word_count();
    if words >= INSIGHT_WORD_LIMIT {
        return Err(ModelError::InsightTooLong(words));
    }
    if insight.tags.is_empty() {
        return Err(ModelError::NoTags);
    }
    if insight.sources.is_empty() {
        return Err(ModelError::NoSources);
    }
    if let Some(missing) = insight.fact_ids.iter().find(|id| !facts.contains_key(*id)) {
        return Err(ModelError::UnknownFact(missing.clone()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Recap and evidence

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpan")]
pub struct EvidenceSpan {
    pub document_id: String,
    /// Offsets count Unicode scalar values, not bytes.
    pub start: usize,
    pub end: usize,
    pub quoted_text: String,
}

#[derive(Deserialize)]
struct RawSpan {
    document_id: String,
    start: usize,
    end: usize,
    quoted_text: String,
}

impl TryFrom<RawSpan> for EvidenceSpan {
    type Error = ModelError;
    fn try_from(raw: RawSpan) -> Result<Self, Self::Error> {
        if raw.start >= raw.end || raw.quoted_text.chars().count() != raw.end - raw.start {
            return Err(ModelError::SpanBounds {
                document_id: raw.document_id,
                start: raw.start,
                end: raw.end,
                len: raw.quoted_text.chars().count(),
            });
        }
        Ok(EvidenceSpan {
            document_id: raw.document_id,
            start: raw.start,
            end: raw.end,
            quoted_text: raw.quoted_text,
        })
    }
}

impl EvidenceSpan {
    /// Span over `[start, end)` character offsets of `text`.
    pub fn new(
        document_id: &str,
        text: &str,
        start: usize,
        end: usize,
    ) -> Result<Self, ModelError> {
        let len = text.chars().count();
        if start >= end || end > len {
            return Err(ModelError::SpanBounds {
                document_id: document_id.to_string(),
                start,
                end,
                len,
            });
        }
        Ok(EvidenceSpan {
            document_id: document_id.to_string(),
            start,
            end,
            quoted_text: char_slice(text, start, end).to_string(),
        })
    }

    /// True when the quoted text is exactly the document substring at the offsets.
    pub fn verify(&self, document: &str) -> Result<(), ModelError> {
        let len = document.chars().count();
        if self.start >= self.end || self.end > len {
            return Err(ModelError::SpanBounds {
                document_id: self.document_id.clone(),
                start: self.start,
                end: self.end,
                len,
            });
        }
        if char_slice(document, self.start, self.end) != self.quoted_text {
            return Err(ModelError::SpanText(self.document_id.clone()));
        }
        Ok(())
    }
}

/// Substring by character offsets. Offsets past the end are clamped.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let byte_at = |n: usize| text.char_indices().nth(n).map_or(text.len(), |(b, _)| b);
    let (s, e) = (byte_at(start), byte_at(end));
    &text[s..e.max(s)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecapKind {
    SubjectiveObjective,
    Assessment,
    Plan,
}

impl RecapKind {
    pub const ALL: [RecapKind; 3] = [
        RecapKind::SubjectiveObjective,
        RecapKind::Assessment,
        RecapKind::Plan,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecapCard {
    pub kind: RecapKind,
    pub text: String,
    pub evidence: Vec<EvidenceSpan>,
}

impl RecapCard {
    pub fn new(
        kind: RecapKind,
        text: String,
        evidence: Vec<EvidenceSpan>,
    ) -> Result<Self, ModelError> {
        let words = word_count(&text);
        if words > RECAP_WORD_LIMIT {
            return Err(ModelError::RecapTooLong(words));
        }
        Ok(RecapCard {
            kind,
            text,
            evidence,
        })
    }
}

// ---------------------------------------------------------------------------
// Patient record

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub index: usize,
    pub date: Date,
    pub note_id: Option<String>,
    pub transcript_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTimeline {
    sessions: Vec<Session>,
    today: Date,
}

impl SessionTimeline {
    pub fn new(sessions: Vec<Session>, today: Date) -> Result<Self, ModelError> {
        let increasing = sessions.windows(2).all(|w| w[0].date < w[1].date);
        let before_today = sessions.last().is_none_or(|s| s.date < today);
        if !increasing || !before_today {
            return Err(ModelError::Timeline);
        }
        Ok(SessionTimeline { sessions, today })
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn today(&self) -> Date {
        self.today
    }

    /// Session by 1-based index.
    pub fn session(&self, index: usize) -> Option<&Session> {
        self.sessions.iter().find(|s| s.index == index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub age: u32,
    pub pronouns: String,
    #[serde(default)]
    pub history: Vec<HistoryItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: Date,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    feature_id: String,
    unit: Unit,
    points: Vec<Observation>,
}

impl TimeSeries {
    pub fn new(feature_id: &str, unit: Unit, points: Vec<Observation>) -> Result<Self, ModelError> {
        if !points.windows(2).all(|w| w[0].date < w[1].date) {
            return Err(ModelError::SeriesOrder(feature_id.to_string()));
        }
        Ok(TimeSeries {
            feature_id: feature_id.to_string(),
            unit,
            points,
        })
    }

    pub fn feature_id(&self) -> &str {
        &self.feature_id
    }
    pub fn unit(&self) -> Unit {
        self.unit
    }
    pub fn points(&self) -> &[Observation] {
        &self.points
    }

    /// Observations whose date falls in the interval.
    pub fn slice(&self, interval: &Interval) -> &[Observation] {
        let lo = self.points.partition_point(|p| p.date < interval.start());
        let hi = self.points.partition_point(|p| p.date <= interval.end());
        &self.points[lo..hi.max(lo)]
    }

    pub fn value_at(&self, date: Date) -> Option<f64> {
        self.points
            .binary_search_by_key(&date, |p| p.date)
            .ok()
            .and_then(|i| self.points[i].value)
    }

    pub fn present(&self) -> impl Iterator<Item = (Date, f64)> + '_ {
        self.points
            .iter()
            .filter_map(|p| p.value.map(|v| (p.date, v)))
    }

    pub fn missing_count(&self) -> usize {
        self.points.iter().filter(|p| p.value.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub profile: Profile,
    pub timeline: SessionTimeline,
    pub sensing: BTreeMap<String, TimeSeries>,
    pub surveys: BTreeMap<String, TimeSeries>,
    pub notes: BTreeMap<String, String>,
    pub transcripts: BTreeMap<String, String>,
}

// ---------------------------------------------------------------------------
// Helpers

/// Number of whitespace-separated tokens. Hyphenated compounds and attached
/// punctuation stay inside their token.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Deterministic identifier: prefix plus the first 16 hex digits of the
/// SHA-256 of the value's JSON encoding.
pub fn content_id<T: Serialize>(prefix: &str, value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("id payload serializes");
    let digest = Sha256::digest(&bytes);
    format!("{prefix}-{}", &hex::encode(digest)[..16])
}
