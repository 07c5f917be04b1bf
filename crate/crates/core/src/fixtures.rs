//! Builders shared by unit tests.

use std::collections::BTreeSet;

use crate::model::{
    BiopsychosocialTag, DataFact, DataSourceType, Date, Discovery, Entity, FactAttribute, FactSpec,
    FactType, Insight, InsightSpec, Interval, Measure, TimeRef, TwoPartText, Unit, ValueRef,
};

pub fn date(s: &str) -> Date {
    s.parse().unwrap()
}

pub fn interval(a: &str, b: &str) -> Interval {
    Interval::new(date(a), date(b)).unwrap()
}

/// A well-formed fact of `attribute`'s type on `feature`, with `p` deciding
/// significance at 0.05.
pub fn fact(feature: &str, label: &str, attribute: FactAttribute, p: Option<f64>) -> DataFact {
    fact_at(feature, label, attribute, p, "2024-06-10")
}

pub fn fact_at(
    feature: &str,
    label: &str,
    attribute: FactAttribute,
    p: Option<f64>,
    day: &str,
) -> DataFact {
    let fact_type = attribute.fact_type();
    let hours = |v| Measure::new(v, Unit::Hours);
    let (time, value) = match fact_type {
        FactType::Outlier | FactType::Extreme => (
            TimeRef::Point { date: date(day) },
            ValueRef::Scalar { v: hours(3.5) },
        ),
        FactType::Trend => (
            TimeRef::Interval {
                interval: interval("2024-05-29", "2024-06-25"),
            },
            ValueRef::None,
        ),
        FactType::Comparison => (
            TimeRef::IntervalPair {
                first: interval("2024-05-01", "2024-05-28"),
                second: interval("2024-05-29", "2024-06-25"),
            },
            ValueRef::MeanPair {
                mean1: hours(7.2),
                mean2: hours(6.1),
            },
        ),
        FactType::Difference => (
            TimeRef::PointPair {
                t1: date("2024-05-28"),
                t2: date(day),
            },
            ValueRef::ScalarPair {
                v1: hours(7.0),
                v2: hours(6.0),
            },
        ),
    };
    DataFact::new(
        FactSpec {
            fact_type,
            entity: Entity {
                feature_id: feature.into(),
                label: label.into(),
            },
            time,
            value,
            attribute,
            significant: p.is_some_and(|p| p < 0.05),
            p_value: p,
            source: DataSourceType::PassiveSensing,
            discovery: Discovery::Exploratory,
        },
        0.05,
    )
    .unwrap()
}

pub fn insight(
    clause: &str,
    sources: &[DataSourceType],
    origin: Discovery,
    significant_facts: usize,
    fact_ids: &[&str],
) -> Insight {
    Insight::new(InsightSpec {
        text: TwoPartText {
            fact_clause: clause.into(),
            implication: "a test implication".into(),
        },
        tags: BTreeSet::from([BiopsychosocialTag::Biological]),
        sources: sources.iter().copied().collect(),
        fact_ids: fact_ids.iter().map(|s| s.to_string()).collect(),
        origin,
        question_id: (origin == Discovery::Guided).then(|| "q-sleep".to_string()),
        significant_facts,
    })
    .unwrap()
}
