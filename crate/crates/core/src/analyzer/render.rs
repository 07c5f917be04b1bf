//! Rule-based sentence templates for data facts.
//!
//! Numbers are rounded to one decimal (trailing `.0` dropped, thousands
//! grouped), dates render as `Mon D`, and interval bounds are joined with an
//! en dash.

use crate::model::{Date, Entity, FactAttribute, FactType, Interval, Measure, TimeRef, ValueRef};

pub fn render_fact_description(
    fact_type: FactType,
    entity: &Entity,
    time: &TimeRef,
    value: &ValueRef,
    attribute: FactAttribute,
) -> String {
    let e = &entity.label;
    match (fact_type, time, value) {
        (FactType::Outlier, TimeRef::Point { date }, ValueRef::Scalar { v }) => {
            let verb = if attribute == FactAttribute::Spike {
                "spiked"
            } else {
                "dipped"
            };
            format!(
                "An anomaly was detected for {e} on {}, which {verb} to {}.",
                format_date(*date),
                format_measure(v)
            )
        }
        (FactType::Trend, TimeRef::Interval { interval }, _) => format!(
            "The {e} showed {} trend from {} to {}.",
            trend_phrase(attribute),
            format_date(interval.start()),
            format_date(interval.end())
        ),
        (
            FactType::Comparison,
            TimeRef::IntervalPair { first, second },
            ValueRef::MeanPair { mean1, mean2 },
        ) => {
            let verb = match attribute {
                FactAttribute::Increase => "increased",
                FactAttribute::Decrease => "decreased",
                _ => "remained stable",
            };
            format!(
                "The average {e} {verb} from {} ({}) to {} ({}).",
                format_measure(mean1),
                format_interval(first),
                format_measure(mean2),
                format_interval(second)
            )
        }
        (FactType::Difference, TimeRef::PointPair { t1, t2 }, ValueRef::ScalarPair { v1, v2 }) => {
            format!(
                "The {e} was {} on {} and became {} at {} on {}.",
                format_measure(v1),
                format_date(*t1),
                attribute.as_str(),
                format_measure(v2),
                format_date(*t2)
            )
        }
        (FactType::Extreme, TimeRef::Point { date }, ValueRef::Scalar { v }) => format!(
            "The {e} reached its {} value of {} on {}.",
            attribute.as_str(),
            format_measure(v),
            format_date(*date)
        ),
        // Shapes are validated before rendering; this arm is unreachable for
        // any constructed fact.
        _ => format!("The {e} has a {fact_type} fact ({attribute})."),
    }
}

fn trend_phrase(attribute: FactAttribute) -> &'static str {
    match attribute {
        FactAttribute::Rise => "a rising",
        FactAttribute::Fall => "a falling",
        FactAttribute::Stable => "a stable",
        FactAttribute::Cyclic => "a cyclic",
        FactAttribute::Variable => "a variable",
        _ => "no",
    }
}

pub fn format_date(date: Date) -> String {
    date.format("%b %-d").to_string()
}

pub fn format_interval(interval: &Interval) -> String {
    format!(
        "{}\u{2013}{}",
        format_date(interval.start()),
        format_date(interval.end())
    )
}

/// Rounds to one decimal; whole numbers print without a decimal point.
pub fn format_number(value: f64) -> String {
    let tenths = (value * 10.0).round() as i64;
    let negative = tenths < 0;
    let tenths = tenths.unsigned_abs();
    let (whole, frac) = (tenths / 10, tenths % 10);
    let digits = whole.to_string();
    let mut grouped = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    let sign = if negative { "-" } else { "" };
    if frac == 0 {
        format!("{sign}{grouped}")
    } else {
        format!("{sign}{grouped}.{frac}")
    }
}

pub fn format_measure(m: &Measure) -> String {
    let number = format_number(m.value);
    match m.unit.suffix(number == "1") {
        Some(unit) => format!("{number} {unit}"),
        None => number,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Unit;

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(12000.0), "12,000");
        assert_eq!(format_number(7.24), "7.2");
        assert_eq!(format_number(6.0), "6");
        assert_eq!(format_number(1234567.89), "1,234,567.9");
        assert_eq!(format_number(-6.04), "-6");
        assert_eq!(format_number(-0.04), "0");
        assert_eq!(format_number(999.96), "1,000");
    }

    #[test]
    fn measures_and_dates() {
        assert_eq!(format_measure(&Measure::new(1.0, Unit::Hours)), "1 hour");
        assert_eq!(format_measure(&Measure::new(3.5, Unit::Hours)), "3.5 hours");
        assert_eq!(
            format_measure(&Measure::new(12000.0, Unit::Count)),
            "12,000"
        );
        assert_eq!(format_date("2024-06-03".parse().unwrap()), "Jun 3");
    }
}
