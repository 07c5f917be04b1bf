//! Seeded simulated patients in the ingest directory layout, with a manifest
//! of the facts injected into their series.
//!
//! Every series is its registry baseline mean plus Gaussian noise scaled by
//! the baseline SD; injections add on top in SD units. A spike of `m` MAD
//! adds `m` scaled MADs, which equal `m` SDs for Gaussian noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::Days;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::model::{Date, FactAttribute, FactType, HistoryItem, Profile, Unit};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InjectionKind {
    /// Step change of `effect_sd` SDs on every day after the last session.
    Shift { effect_sd: f64 },
    /// Linear ramp of `slope_sd_per_day` SDs per day after the last session.
    Trend { slope_sd_per_day: f64 },
    /// One-day excursion of `magnitude_mad` scaled MADs on day `day`.
    Spike { magnitude_mad: f64, day: u32 },
    /// Sinusoid over the whole series.
    Cycle { period: u32, amplitude_sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub feature: String,
    #[serde(flatten)]
    pub kind: InjectionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub count: u32,
    /// Days between sessions; the first session falls on day 0.
    pub spacing_days: u32,
}

fn default_start() -> Date {
    Date::from_ymd_opt(2024, 5, 1).expect("valid date")
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub seed: u64,
    pub n_days: u32,
    #[serde(default = "default_start")]
    pub start_date: Date,
    #[serde(default)]
    pub missing_rate: f64,
    pub sessions: SessionPlan,
    /// Multiplier on every baseline SD; 0 yields constant series.
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default)]
    pub injections: Vec<Injection>,
    #[serde(default)]
    pub patient_id: Option<String>,
}

impl InjectionSpec {
    /// 84 days, sessions on days 0, 21 and 42, one injection of each kind.
    pub fn example(seed: u64) -> Self {
        InjectionSpec {
            seed,
            n_days: 84,
            start_date: default_start(),
            missing_rate: 0.05,
            sessions: SessionPlan {
                count: 3,
                spacing_days: 21,
            },
            noise_scale: 1.0,
            injections: vec![
                Injection {
                    feature: "total_sleep".into(),
                    kind: InjectionKind::Shift { effect_sd: -2.0 },
                },
                Injection {
                    feature: "bedtime".into(),
                    kind: InjectionKind::Spike {
                        magnitude_mad: 8.0,
                        day: 60,
                    },
                },
                Injection {
                    feature: "total_steps".into(),
                    kind: InjectionKind::Trend {
                        slope_sd_per_day: 1.0 / 14.0,
                    },
                },
                Injection {
                    feature: "time_at_home".into(),
                    kind: InjectionKind::Cycle {
                        period: 7,
                        amplitude_sd: 2.0,
                    },
                },
            ],
            patient_id: None,
        }
    }

    pub fn patient_id(&self) -> String {
        self.patient_id
            .clone()
            .unwrap_or_else(|| format!("patient-{:04}", self.seed))
    }

    pub fn session_days(&self) -> Vec<u32> {
        (0..self.sessions.count)
            .map(|k| k * self.sessions.spacing_days)
            .collect()
    }

    pub fn last_session_day(&self) -> u32 {
        self.session_days().last().copied().unwrap_or(0)
    }

    fn date(&self, day: u32) -> Date {
        self.start_date + Days::new(day as u64)
    }

    pub fn validate(&self, config: &Config) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidSpec(m));
        if self.n_days < 8 {
            return bad(format!("n_days {} < 8", self.n_days));
        }
        if !(0.0..=0.5).contains(&self.missing_rate) {
            return bad(format!(
                "missing_rate {} outside [0, 0.5]",
                self.missing_rate
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!(
                "noise_scale {} must be finite and >= 0",
                self.noise_scale
            ));
        }
        if self.sessions.count == 0 || (self.sessions.count > 1 && self.sessions.spacing_days == 0)
        {
            return bad("need at least one session with positive spacing".into());
        }
        if self.last_session_day() + 1 >= self.n_days {
            return bad(format!(
                "last session day {} leaves no days after it",
                self.last_session_day()
            ));
        }
        for inj in &self.injections {
            if config.registry.series(&inj.feature).is_none() {
                return bad(format!("unknown feature {}", inj.feature));
            }
            let finite = match inj.kind {
                InjectionKind::Shift { effect_sd } => effect_sd.is_finite(),
                InjectionKind::Trend { slope_sd_per_day } => slope_sd_per_day.is_finite(),
                InjectionKind::Spike { magnitude_mad, day } => {
                    if day >= self.n_days {
                        return bad(format!("spike day {day} outside 0..{}", self.n_days));
                    }
                    magnitude_mad.is_finite()
                }
                InjectionKind::Cycle {
                    period,
                    amplitude_sd,
                } => {
                    if period < 2 {
                        return bad(format!("cycle period {period} < 2"));
                    }
                    amplitude_sd.is_finite()
                }
            };
            if !finite {
                return bad(format!("non-finite injection on {}", inj.feature));
            }
        }
        Ok(())
    }
}

/// One ground-truth fact the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFact {
    pub feature: String,
    pub fact_type: FactType,
    pub attribute: FactAttribute,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub date: Option<Date>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub window: Option<[Date; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub patient_id: String,
    pub seed: u64,
    pub sessions: Vec<Date>,
    pub last_session: Date,
    pub today: Date,
    pub spec: InjectionSpec,
    pub expected: Vec<ExpectedFact>,
}

fn expected_facts(spec: &InjectionSpec) -> Vec<ExpectedFact> {
    let after = [
        spec.date(spec.last_session_day() + 1),
        spec.date(spec.n_days - 1),
    ];
    let before = [spec.date(0), spec.date(spec.last_session_day())];
    spec.injections
        .iter()
        .filter_map(|inj| {
            let (fact_type, attribute, date, window) = match inj.kind {
                InjectionKind::Shift { effect_sd } if effect_sd != 0.0 => {
                    let a = if effect_sd > 0.0 {
                        FactAttribute::Increase
                    } else {
                        FactAttribute::Decrease
                    };
                    (FactType::Comparison, a, None, Some([before[0], after[1]]))
                }
                InjectionKind::Trend { slope_sd_per_day } if slope_sd_per_day != 0.0 => {
                    let a = if slope_sd_per_day > 0.0 {
                        FactAttribute::Rise
                    } else {
                        FactAttribute::Fall
                    };
                    (FactType::Trend, a, None, Some(after))
                }
                InjectionKind::Spike { magnitude_mad, day } if magnitude_mad != 0.0 => {
                    let a = if magnitude_mad > 0.0 {
                        FactAttribute::Spike
                    } else {
                        FactAttribute::Dip
                    };
                    (FactType::Outlier, a, Some(spec.date(day)), None)
                }
                InjectionKind::Cycle { amplitude_sd, .. } if amplitude_sd != 0.0 => {
                    (FactType::Trend, FactAttribute::Cyclic, None, Some(after))
                }
                _ => return None,
            };
            Some(ExpectedFact {
                feature: inj.feature.clone(),
                fact_type,
                attribute,
                date,
                window,
            })
        })
        .collect()
}

/// Per-series stream so adding an injection elsewhere never changes noise.
fn stream(seed: u64, id: &str, salt: u64) -> StdRng {
    let h = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    StdRng::seed_from_u64(seed ^ h ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Display-unit values for one series, before missingness.
fn simulate(spec: &InjectionSpec, id: &str, baseline: [f64; 2], days: &[u32]) -> Vec<f64> {
    let [mu, sd] = baseline;
    let mut rng = stream(spec.seed, id, 1);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let split = spec.last_session_day();
    days.iter()
        .map(|&d| {
            let mut v = mu + sd * spec.noise_scale * noise.sample(&mut rng);
            for inj in spec.injections.iter().filter(|i| i.feature == id) {
                v += sd
                    * match inj.kind {
                        InjectionKind::Shift { effect_sd } if d > split => effect_sd,
                        InjectionKind::Trend { slope_sd_per_day } if d > split => {
                            slope_sd_per_day * (d - split) as f64
                        }
                        InjectionKind::Spike { magnitude_mad, day } if d == day => magnitude_mad,
                        InjectionKind::Cycle {
                            period,
                            amplitude_sd,
                        } => amplitude_sd * (2.0 * PI * d as f64 / period as f64).sin(),
                        _ => 0.0,
                    };
            }
            v
        })
        .collect()
}

fn is_integral(unit: Unit) -> bool {
    matches!(unit, Unit::Times | Unit::Count)
}

fn fmt_value(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

struct Table {
    header: Vec<String>,
    rows: BTreeMap<u32, Vec<String>>,
}

impl Table {
    fn to_csv(&self, spec: &InjectionSpec) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["date".to_string()];
        header.extend(self.header.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (day, cells) in &self.rows {
            let mut row = vec![spec.date(*day).to_string()];
            row.extend(cells.iter().cloned());
            w.write_record(&row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

fn passive_table(spec: &InjectionSpec, config: &Config) -> Table {
    let days: Vec<u32> = (0..spec.n_days).collect();
    let spike_days: Vec<(&str, u32)> = spec
        .injections
        .iter()
        .filter_map(|i| match i.kind {
            InjectionKind::Spike { day, .. } => Some((i.feature.as_str(), day)),
            _ => None,
        })
        .collect();
    let mut rows: BTreeMap<u32, Vec<String>> = days.iter().map(|&d| (d, Vec::new())).collect();
    for f in &config.registry.features {
        let values = simulate(spec, &f.id, f.baseline, &days);
        let mut miss = stream(spec.seed, &f.id, 2);
        for (&d, v) in days.iter().zip(values) {
            let keep = spike_days.contains(&(f.id.as_str(), d));
            let missing =
                !keep && spec.missing_rate > 0.0 && miss.random::<f64>() < spec.missing_rate;
            let mut v = v.clamp(f.domain[0], f.domain[1]);
            if is_integral(f.unit) {
                v = v.round();
            }
            let cell = if missing {
                String::new()
            } else {
                fmt_value(f.conversion.invert(v))
            };
            rows.get_mut(&d).expect("day row").push(cell);
        }
    }
    Table {
        header: config
            .registry
            .features
            .iter()
            .map(|f| f.id.clone())
            .collect(),
        rows,
    }
}

/// Weekly surveys from day 0, any day a survey spike is planted, and the
/// final day so both periods end on data.
fn survey_days(spec: &InjectionSpec, config: &Config) -> Vec<u32> {
    let mut days: Vec<u32> = (0..spec.n_days).step_by(7).collect();
    for inj in &spec.injections {
        if let InjectionKind::Spike { day, .. } = inj.kind {
            if config.registry.instrument(&inj.feature).is_some() {
                days.push(day);
            }
        }
    }
    if !days.contains(&(spec.n_days - 1)) {
        days.push(spec.n_days - 1);
    }
    days.sort_unstable();
    days.dedup();
    days
}

fn survey_table(spec: &InjectionSpec, config: &Config) -> Table {
    let days = survey_days(spec, config);
    let mut rows: BTreeMap<u32, Vec<String>> = days.iter().map(|&d| (d, Vec::new())).collect();
    for inst in &config.registry.instruments {
        let values = simulate(spec, &inst.id, inst.baseline, &days);
        for (&d, v) in days.iter().zip(values) {
            let score = v
                .round()
                .clamp(inst.score_range[0] as f64, inst.score_range[1] as f64);
            rows.get_mut(&d).expect("day row").push(fmt_value(score));
        }
    }
    Table {
        header: config
            .registry
            .instruments
            .iter()
            .map(|i| i.id.clone())
            .collect(),
        rows,
    }
}

const NAMES: [&str; 8] = [
    "Alex Rivera",
    "Sam Okafor",
    "Jordan Lee",
    "Taylor Brooks",
    "Casey Nguyen",
    "Morgan Patel",
    "Riley Chen",
    "Jamie Novak",
];
const PRONOUNS: [&str; 3] = ["she/her", "he/him", "they/them"];

fn profile(spec: &InjectionSpec) -> Profile {
    let mut rng = stream(spec.seed, "profile", 3);
    Profile {
        name: NAMES[rng.random_range(0..NAMES.len())].to_string(),
        age: rng.random_range(19..=68),
        pronouns: PRONOUNS[rng.random_range(0..PRONOUNS.len())].to_string(),
        history: vec![
            HistoryItem {
                text: "Generalized anxiety symptoms since college".into(),
                onset: Some("2016".into()),
            },
            HistoryItem {
                text: "Started sertraline 50mg".into(),
                onset: Some(spec.start_date.format("%Y-%m").to_string()),
            },
        ],
    }
}

/// First trigger phrase of the topic covering `feature`, if any.
fn trigger_for<'a>(config: &'a Config, feature: &str) -> Option<&'a str> {
    config
        .topics
        .iter()
        .find(|t| t.features.iter().any(|f| f == feature))
        .and_then(|t| t.triggers.first())
        .map(String::as_str)
}

fn note_text(spec: &InjectionSpec, config: &Config, session: usize) -> String {
    let mut triggers: Vec<&str> = spec
        .injections
        .iter()
        .filter_map(|i| trigger_for(config, &i.feature))
        .collect();
    triggers.dedup();
    let subjective = if triggers.is_empty() {
        "Patient describes an uneventful interval since the previous visit.".to_string()
    } else {
        format!(
            "Patient reports concerns about {} since the previous visit.",
            join_list(&triggers)
        )
    };
    let plan_line = if session == 0 {
        "Start sertraline 50mg daily; schedule follow-up in three weeks."
    } else {
        "Continue sertraline 50mg daily; schedule follow-up in three weeks."
    };
    format!(
        "Subjective: {subjective} Feels the week-to-week changes are noticeable.\n\
         Objective: Alert, cooperative and well groomed; speech normal in rate and volume.\n\
         Assessment: Presentation is broadly consistent with prior visits and the patient remains engaged with treatment goals and homework.\n\
         Plan: {plan_line} Review data dashboard together at the next visit.\n"
    )
}

fn transcript_text(spec: &InjectionSpec, config: &Config) -> String {
    let mut lines = vec!["CLINICIAN: How have things been since we last met?".to_string()];
    let mut triggers: Vec<&str> = spec
        .injections
        .iter()
        .filter_map(|i| trigger_for(config, &i.feature))
        .collect();
    triggers.dedup();
    if triggers.is_empty() {
        lines.push("PATIENT: Mostly the same as before, nothing new to report.".into());
    } else {
        for t in triggers {
            lines.push(format!(
                "PATIENT: I have been thinking about my {t} a lot lately."
            ));
        }
    }
    lines.push("CLINICIAN: Thank you, let us look at that together.".into());
    lines.join("\n") + "\n"
}

fn join_list(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("plain data serializes");
    serde_json::to_string_pretty(&tree).expect("plain data serializes") + "\n"
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), DatagenError> {
    let io = |source| DatagenError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

/// Writes `<out>/<patient_id>/` and returns the manifest (also written as
/// `manifest.json` inside the patient directory).
pub fn generate_patient(
    spec: &InjectionSpec,
    config: &Config,
    out: &Path,
) -> Result<(PathBuf, Manifest), DatagenError> {
    spec.validate(config)?;
    let dir = out.join(spec.patient_id());

    write(&dir.join("profile.json"), pretty(&profile(spec)).as_bytes())?;
    write(
        &dir.join("passive.csv"),
        &passive_table(spec, config).to_csv(spec),
    )?;
    write(
        &dir.join("surveys.csv"),
        &survey_table(spec, config).to_csv(spec),
    )?;
    let sessions: Vec<Date> = spec
        .session_days()
        .into_iter()
        .map(|d| spec.date(d))
        .collect();
    for (k, date) in sessions.iter().enumerate() {
        write(
            &dir.join("notes").join(format!("{date}.txt")),
            note_text(spec, config, k).as_bytes(),
        )?;
        write(
            &dir.join("transcripts").join(format!("{date}.txt")),
            transcript_text(spec, config).as_bytes(),
        )?;
    }
    let manifest = Manifest {
        patient_id: spec.patient_id(),
        seed: spec.seed,
        last_session: *sessions.last().expect("validated non-empty"),
        sessions,
        today: spec.date(spec.n_days - 1),
        spec: spec.clone(),
        expected: expected_facts(spec),
    };
    write(&dir.join("manifest.json"), pretty(&manifest).as_bytes())?;
    Ok((dir, manifest))
}

#[cfg(test)]
mod tests;
