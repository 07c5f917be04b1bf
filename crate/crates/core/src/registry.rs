//! Feature and instrument registries.

use serde::{Deserialize, Serialize};

use crate::model::{BiopsychosocialTag, DataSourceType, Unit};

/// Map from a source unit into the display unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Conversion {
    Multiply { multiply: f64 },
    Divide { divide: f64 },
    Affine { scale: f64, offset: f64 },
}

impl Default for Conversion {
    fn default() -> Self {
        Conversion::Multiply { multiply: 1.0 }
    }
}

impl Conversion {
    pub fn apply(&self, raw: f64) -> f64 {
        match *self {
            Conversion::Multiply { multiply } => raw * multiply,
            Conversion::Divide { divide } => raw / divide,
            Conversion::Affine { scale, offset } => raw * scale + offset,
        }
    }

    pub fn invert(&self, display: f64) -> f64 {
        match *self {
            Conversion::Multiply { multiply } => display / multiply,
            Conversion::Divide { divide } => display * divide,
            Conversion::Affine { scale, offset } => (display - offset) / scale,
        }
    }

    /// Increasing maps only; a decreasing map would flip every rendered
    /// direction word.
    pub fn is_strictly_increasing(&self) -> bool {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            Conversion::Multiply { multiply } => positive(multiply),
            Conversion::Divide { divide } => positive(divide),
            Conversion::Affine { scale, offset } => positive(scale) && offset.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    pub label: String,
    pub group: String,
    pub source_unit: String,
    pub unit: Unit,
    #[serde(default)]
    pub conversion: Conversion,
    #[serde(default)]
    pub tags: Vec<BiopsychosocialTag>,
    /// Plausible display-unit domain, used by validation and the generator.
    pub domain: [f64; 2],
    /// Typical level and day-to-day spread in display units (generator defaults).
    pub baseline: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    pub lo: i64,
    pub hi: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyInstrument {
    pub id: String,
    pub label: String,
    pub group: String,
    pub score_range: [i64; 2],
    pub bands: Vec<Band>,
    pub higher_is_worse: bool,
    #[serde(default)]
    pub tags: Vec<BiopsychosocialTag>,
    pub baseline: [f64; 2],
}

impl SurveyInstrument {
    /// Bands must tile the score range exactly, in order.
    pub fn bands_partition_range(&self) -> bool {
        let [lo, hi] = self.score_range;
        let Some(first) = self.bands.first() else {
            return false;
        };
        let last = self.bands.last().expect("non-empty");
        first.lo == lo
            && last.hi == hi
            && self.bands.iter().all(|b| b.lo <= b.hi)
            && self.bands.windows(2).all(|w| w[1].lo == w[0].hi + 1)
    }
}

/// A discussion topic the question generator watches for in notes and
/// transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub id: String,
    pub question: String,
    pub triggers: Vec<String>,
    pub features: Vec<String>,
    #[serde(default)]
    pub fact_types: Vec<crate::model::FactType>,
}

/// Any series the analyzer can mine, passive or survey.
#[derive(Debug, Clone, Copy)]
pub enum SeriesSpec<'a> {
    Passive(&'a FeatureSpec),
    Survey(&'a SurveyInstrument),
}

impl<'a> SeriesSpec<'a> {
    pub fn id(&self) -> &'a str {
        match self {
            SeriesSpec::Passive(f) => &f.id,
            SeriesSpec::Survey(s) => &s.id,
        }
    }

    pub fn label(&self) -> &'a str {
        match self {
            SeriesSpec::Passive(f) => &f.label,
            SeriesSpec::Survey(s) => &s.label,
        }
    }

    pub fn group(&self) -> &'a str {
        match self {
            SeriesSpec::Passive(f) => &f.group,
            SeriesSpec::Survey(s) => &s.group,
        }
    }

    pub fn tags(&self) -> &'a [BiopsychosocialTag] {
        match self {
            SeriesSpec::Passive(f) => &f.tags,
            SeriesSpec::Survey(s) => &s.tags,
        }
    }

    pub fn unit(&self) -> Unit {
        match self {
            SeriesSpec::Passive(f) => f.unit,
            SeriesSpec::Survey(_) => Unit::Score,
        }
    }

    pub fn source(&self) -> DataSourceType {
        match self {
            SeriesSpec::Passive(_) => DataSourceType::PassiveSensing,
            SeriesSpec::Survey(_) => DataSourceType::SurveyScores,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub instruments: Vec<SurveyInstrument>,
}

impl Registry {
    pub fn feature(&self, id: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.id == id)
    }

    pub fn instrument(&self, id: &str) -> Option<&SurveyInstrument> {
        self.instruments.iter().find(|s| s.id == id)
    }

    pub fn series(&self, id: &str) -> Option<SeriesSpec<'_>> {
        self.feature(id)
            .map(SeriesSpec::Passive)
            .or_else(|| self.instrument(id).map(SeriesSpec::Survey))
    }

    pub fn all_series(&self) -> impl Iterator<Item = SeriesSpec<'_>> {
        self.features
            .iter()
            .map(SeriesSpec::Passive)
            .chain(self.instruments.iter().map(SeriesSpec::Survey))
    }

    /// Feature groups in registry order, deduplicated.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in self.all_series() {
            if !out.contains(&s.group()) {
                out.push(s.group());
            }
        }
        out
    }
}
