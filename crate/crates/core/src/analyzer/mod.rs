//! Data-fact discovery over sensing and survey series.
//!
//! Comparison, trend and outlier facts come from statistical tests over the
//! inter-session window; extreme and difference facts come from direct scans
//! of the raw values. Every fact is rendered through [`render`].

pub mod decompose;
pub mod render;
pub mod stats;

use chrono::Days;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::interpolate_interior;
use crate::model::{
    DataFact, DataSourceType, Date, Discovery, Entity, FactAttribute, FactSpec, FactType, Interval,
    Measure, ModelError, Observation, PatientRecord, TimeRef, TimeSeries, ValueRef,
};
use stats::{mann_kendall, mann_whitney_u, median, quantile, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatConfig {
    pub alpha: f64,
    pub stl_period: usize,
    pub mad_threshold: f64,
    pub acf_lag: usize,
    pub acf_cyclic_threshold: f64,
    pub cv_stable_max: f64,
    pub cv_variable_min: f64,
    pub min_points_per_interval: usize,
}

impl Default for StatConfig {
    fn default() -> Self {
        StatConfig {
            alpha: 0.05,
            stl_period: 7,
            mad_threshold: 3.5,
            acf_lag: 7,
            acf_cyclic_threshold: 0.5,
            cv_stable_max: 0.10,
            cv_variable_min: 0.30,
            min_points_per_interval: 5,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyzerError {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("no observed value in the interval")]
    EmptySeries,
    #[error("no observed value on {0}")]
    MissingAtDate(Date),
    #[error("invalid window: {0}")]
    Window(String),
    #[error(transparent)]
    Fact(#[from] ModelError),
}

/// The two periods split by the last session: everything retrospective up to
/// and including it, then the days after it through today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub delta_t1: Interval,
    pub delta_t2: Interval,
    pub today: Date,
    pub last_session: Date,
}

impl AnalysisWindow {
    pub fn new(start: Date, last_session: Date, today: Date) -> Result<Self, AnalyzerError> {
        if !(start <= last_session && last_session < today) {
            return Err(AnalyzerError::Window(format!(
                "need start {start} <= last session {last_session} < today {today}"
            )));
        }
        let after = last_session + Days::new(1);
        Ok(AnalysisWindow {
            delta_t1: Interval::new(start, last_session)?,
            delta_t2: Interval::new(after, today)?,
            today,
            last_session,
        })
    }

    /// Window preparing the session after session `index` (1-based). The
    /// retrospective period starts at the first session, or at the earliest
    /// data point when the first session is also the last.
    pub fn for_session(record: &PatientRecord, index: usize) -> Result<Self, AnalyzerError> {
        let timeline = &record.timeline;
        let last = timeline
            .session(index)
            .ok_or_else(|| AnalyzerError::Window(format!("no session {index}")))?;
        let today = timeline
            .session(index + 1)
            .map(|s| s.date - Days::new(1))
            .unwrap_or_else(|| timeline.today());
        let first_session = timeline.sessions()[0].date;
        let start = if first_session < last.date {
            first_session
        } else {
            record
                .sensing
                .values()
                .chain(record.surveys.values())
                .filter_map(|s| s.points().first().map(|p| p.date))
                .min()
                .unwrap_or(last.date)
                .min(last.date)
        };
        AnalysisWindow::new(start, last.date, today)
    }

    pub fn span(&self) -> Interval {
        Interval::new(self.delta_t1.start(), self.delta_t2.end()).expect("ordered by construction")
    }
}

/// A series with the labels needed to phrase facts about it.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSeries<'a> {
    pub series: &'a TimeSeries,
    pub label: &'a str,
    pub source: DataSourceType,
}

impl LabeledSeries<'_> {
    fn entity(&self) -> Entity {
        Entity {
            feature_id: self.series.feature_id().to_string(),
            label: self.label.to_string(),
        }
    }

    fn measure(&self, v: f64) -> Measure {
        Measure::new(v, self.series.unit())
    }

    fn spec(
        &self,
        fact_type: FactType,
        time: TimeRef,
        value: ValueRef,
        attribute: FactAttribute,
    ) -> FactSpec {
        FactSpec {
            fact_type,
            entity: self.entity(),
            time,
            value,
            attribute,
            significant: false,
            p_value: None,
            source: self.source,
            discovery: Discovery::Exploratory,
        }
    }
}

/// Why a discovery step produced nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub feature_id: String,
    pub fact_type: FactType,
    pub reason: String,
}

pub type SkipLog = Vec<SkipEntry>;

fn values(obs: &[Observation]) -> Vec<Option<f64>> {
    obs.iter().map(|o| o.value).collect()
}

fn present(obs: &[Observation]) -> Vec<f64> {
    obs.iter().filter_map(|o| o.value).collect()
}

/// Mann-Whitney comparison of the two periods. Returns `None` (and logs a
/// skip) when either period has too few observations.
pub fn discover_comparison(
    ls: &LabeledSeries<'_>,
    window: &AnalysisWindow,
    config: &StatConfig,
    skips: &mut SkipLog,
) -> Option<DataFact> {
    let before = ls.series.slice(&window.delta_t1);
    let after = ls.series.slice(&window.delta_t2);
    let (a, b) = (present(before), present(after));
    let min = config.min_points_per_interval;
    if a.len() < min || b.len() < min {
        skips.push(SkipEntry {
            feature_id: ls.series.feature_id().to_string(),
            fact_type: FactType::Comparison,
            reason: format!(
                "needs {min} points per period, has {} and {}",
                a.len(),
                b.len()
            ),
        });
        return None;
    }
    let test = mann_whitney_u(&values(before), &values(after)).expect("both samples non-empty");
    let significant = test.p_two_sided < config.alpha;
    let (m1, m2) = (stats::mean(&a).unwrap(), stats::mean(&b).unwrap());
    let direction = median(&b).unwrap() - median(&a).unwrap();
    let direction = if direction != 0.0 { direction } else { m2 - m1 };
    let attribute = match (significant, direction) {
        (true, d) if d > 0.0 => FactAttribute::Increase,
        (true, d) if d < 0.0 => FactAttribute::Decrease,
        _ => FactAttribute::RemainedStable,
    };
    let mut spec = ls.spec(
        FactType::Comparison,
        TimeRef::IntervalPair {
            first: window.delta_t1,
            second: window.delta_t2,
        },
        ValueRef::MeanPair {
            mean1: ls.measure(m1),
            mean2: ls.measure(m2),
        },
        attribute,
    );
    spec.significant = significant;
    spec.p_value = Some(test.p_two_sided);
    match DataFact::new(spec, config.alpha) {
        Ok(fact) => Some(fact),
        Err(e) => {
            skips.push(SkipEntry {
                feature_id: ls.series.feature_id().to_string(),
                fact_type: FactType::Comparison,
                reason: e.to_string(),
            });
            None
        }
    }
}

/// Gap-free values of `obs`: interior gaps interpolated, edge gaps trimmed.
/// Returns the kept observations' dates alongside.
fn gap_free(ls: &LabeledSeries<'_>, obs: &[Observation]) -> Option<(Vec<Date>, Vec<f64>)> {
    let sub = TimeSeries::new(ls.series.feature_id(), ls.series.unit(), obs.to_vec()).ok()?;
    let filled = interpolate_interior(&sub).ok()?;
    let (dates, vals) = filled
        .points()
        .iter()
        .filter_map(|p| p.value.map(|v| (p.date, v)))
        .unzip();
    Some((dates, vals))
}

/// Trend attribute by precedence: significant monotone trend, then weekly
/// cycle, then stability by coefficient of variation.
pub fn discover_trend(
    ls: &LabeledSeries<'_>,
    interval: &Interval,
    config: &StatConfig,
) -> Result<DataFact, AnalyzerError> {
    let obs = ls.series.slice(interval);
    let mk = mann_kendall(&values(obs))?;
    let significant = mk.p_two_sided < config.alpha && mk.s != 0;
    let attribute = if significant {
        if mk.s > 0 {
            FactAttribute::Rise
        } else {
            FactAttribute::Fall
        }
    } else {
        let cyclic = gap_free(ls, obs)
            .and_then(|(_, vals)| stats::autocorrelation(&vals, config.acf_lag).ok())
            .is_some_and(|r| r >= config.acf_cyclic_threshold);
        if cyclic {
            FactAttribute::Cyclic
        } else {
            match stats::coefficient_of_variation(&values(obs)) {
                Ok(cv) if cv <= config.cv_stable_max => FactAttribute::Stable,
                Ok(cv) if cv >= config.cv_variable_min => FactAttribute::Variable,
                _ => FactAttribute::NoTrend,
            }
        }
    };
    let mut spec = ls.spec(
        FactType::Trend,
        TimeRef::Interval {
            interval: *interval,
        },
        ValueRef::None,
        attribute,
    );
    spec.significant = significant;
    spec.p_value = Some(mk.p_two_sided);
    Ok(DataFact::new(spec, config.alpha)?)
}

/// Points whose decomposition residual deviates from the residual median by
/// more than `mad_threshold` robust standard deviations.
pub fn discover_outliers(
    ls: &LabeledSeries<'_>,
    interval: &Interval,
    config: &StatConfig,
) -> Result<Vec<DataFact>, AnalyzerError> {
    let obs = ls.series.slice(interval);
    let (dates, vals) = gap_free(ls, obs).unwrap_or_default();
    if vals.len() < 4 {
        return Err(StatsError::SeriesTooShort {
            len: vals.len(),
            lag: config.stl_period,
        }
        .into());
    }
    let residuals = decompose::robust_residuals(&vals, config.stl_period)?;
    let flagged = mad_flags(&vals, &residuals, config.mad_threshold);
    let mut facts = Vec::new();
    for (i, above) in flagged {
        // Interpolated points carry no observation to report.
        let Some(observed) = ls.series.value_at(dates[i]) else {
            continue;
        };
        let attribute = if above {
            FactAttribute::Spike
        } else {
            FactAttribute::Dip
        };
        let spec = ls.spec(
            FactType::Outlier,
            TimeRef::Point { date: dates[i] },
            ValueRef::Scalar {
                v: ls.measure(observed),
            },
            attribute,
        );
        facts.push(DataFact::new(spec, config.alpha)?);
    }
    Ok(facts)
}

/// Indices flagged by the MAD rule with whether each lies above the median.
/// Falls back to IQR/1.349 when the MAD is zero; a zero fallback scale or
/// all-equal residuals flag nothing.
pub fn mad_flags(values: &[f64], residuals: &[f64], threshold: f64) -> Vec<(usize, bool)> {
    let Some(med) = median(residuals) else {
        return Vec::new();
    };
    let dev: Vec<f64> = residuals.iter().map(|r| r - med).collect();
    // Residuals at rounding-noise level relative to the data are all equal.
    let magnitude = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tolerance = magnitude * 1e-9;
    if dev.iter().all(|d| d.abs() <= tolerance) {
        return Vec::new();
    }
    let abs: Vec<f64> = dev.iter().map(|d| d.abs()).collect();
    let mut scale = 1.4826 * median(&abs).unwrap();
    if scale <= tolerance {
        let iqr = quantile(residuals, 0.75).unwrap() - quantile(residuals, 0.25).unwrap();
        scale = iqr / 1.349;
        if scale <= tolerance {
            return Vec::new();
        }
    }
    dev.iter()
        .enumerate()
        .filter(|(_, d)| d.abs() / scale > threshold)
        .map(|(i, d)| (i, *d > 0.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremeKind {
    Max,
    Min,
}

/// Largest or smallest observation in the interval; ties go to the earliest date.
pub fn discover_extreme(
    ls: &LabeledSeries<'_>,
    interval: &Interval,
    kind: ExtremeKind,
    alpha: f64,
) -> Result<DataFact, AnalyzerError> {
    let mut best: Option<(Date, f64)> = None;
    for (date, v) in ls
        .series
        .slice(interval)
        .iter()
        .filter_map(|o| o.value.map(|v| (o.date, v)))
    {
        let better = match (best, kind) {
            (None, _) => true,
            (Some((_, b)), ExtremeKind::Max) => v > b,
            (Some((_, b)), ExtremeKind::Min) => v < b,
        };
        if better {
            best = Some((date, v));
        }
    }
    let (date, v) = best.ok_or(AnalyzerError::EmptySeries)?;
    let attribute = match kind {
        ExtremeKind::Max => FactAttribute::Max,
        ExtremeKind::Min => FactAttribute::Min,
    };
    let spec = ls.spec(
        FactType::Extreme,
        TimeRef::Point { date },
        ValueRef::Scalar { v: ls.measure(v) },
        attribute,
    );
    Ok(DataFact::new(spec, alpha)?)
}

/// Change between two dates. Equal values produce no fact.
pub fn discover_difference(
    ls: &LabeledSeries<'_>,
    t1: Date,
    t2: Date,
    alpha: f64,
) -> Result<Option<DataFact>, AnalyzerError> {
    let v1 = ls
        .series
        .value_at(t1)
        .ok_or(AnalyzerError::MissingAtDate(t1))?;
    let v2 = ls
        .series
        .value_at(t2)
        .ok_or(AnalyzerError::MissingAtDate(t2))?;
    let attribute = if v2 > v1 {
        FactAttribute::More
    } else if v2 < v1 {
        FactAttribute::Less
    } else {
        return Ok(None);
    };
    let spec = ls.spec(
        FactType::Difference,
        TimeRef::PointPair { t1, t2 },
        ValueRef::ScalarPair {
            v1: ls.measure(v1),
            v2: ls.measure(v2),
        },
        attribute,
    );
    Ok(Some(DataFact::new(spec, alpha)?))
}

/// Default date pair for a difference fact: the last session and the most
/// recent observed date after it.
pub fn default_difference_dates(
    series: &TimeSeries,
    window: &AnalysisWindow,
) -> Option<(Date, Date)> {
    let latest = series
        .slice(&window.delta_t2)
        .iter()
        .rev()
        .find(|o| o.value.is_some())?
        .date;
    Some((window.last_session, latest))
}

/// Runs every discovery step on one series. Facts come back in
/// [`fact_order`] so merged results are deterministic.
pub fn discover_series(
    ls: &LabeledSeries<'_>,
    window: &AnalysisWindow,
    config: &StatConfig,
    skips: &mut SkipLog,
) -> Vec<DataFact> {
    let id = ls.series.feature_id();
    let skip = |skips: &mut SkipLog, fact_type: FactType, reason: String| {
        skips.push(SkipEntry {
            feature_id: id.to_string(),
            fact_type,
            reason,
        });
    };
    let mut facts = Vec::new();
    if ls.series.present().next().is_none() {
        skip(
            skips,
            FactType::Comparison,
            "series has no observed values".into(),
        );
        return facts;
    }

    facts.extend(discover_comparison(ls, window, config, skips));
    match discover_trend(ls, &window.delta_t2, config) {
        Ok(f) => facts.push(f),
        Err(e) => skip(skips, FactType::Trend, e.to_string()),
    }
    match discover_outliers(ls, &window.delta_t2, config) {
        Ok(fs) => facts.extend(fs),
        Err(e) => skip(skips, FactType::Outlier, e.to_string()),
    }
    for kind in [ExtremeKind::Max, ExtremeKind::Min] {
        match discover_extreme(ls, &window.delta_t2, kind, config.alpha) {
            Ok(f) => facts.push(f),
            Err(e) => skip(skips, FactType::Extreme, e.to_string()),
        }
    }
    match default_difference_dates(ls.series, window) {
        Some((t1, t2)) if t1 < t2 => match discover_difference(ls, t1, t2, config.alpha) {
            Ok(Some(f)) => facts.push(f),
            Ok(None) => skip(
                skips,
                FactType::Difference,
                "values equal on both dates".into(),
            ),
            Err(e) => skip(skips, FactType::Difference, e.to_string()),
        },
        _ => skip(
            skips,
            FactType::Difference,
            "no observed value after the last session".into(),
        ),
    }
    facts.sort_by_key(fact_order);
    facts
}

/// Deterministic merge key: feature, fact type, first date, id.
pub fn fact_order(f: &DataFact) -> (String, FactType, Date, String) {
    (
        f.feature_id().to_string(),
        f.fact_type(),
        f.time().span().start(),
        f.id().to_string(),
    )
}
