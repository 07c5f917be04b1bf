//! Loading a patient data directory into a [`PatientRecord`].
//!
//! Layout:
//!
//! ```text
//! <patient_id>/profile.json
//! <patient_id>/passive.csv          date,<feature_id>,...   (source units)
//! <patient_id>/surveys.csv          date,<instrument_id>,...
//! <patient_id>/notes/YYYY-MM-DD.txt
//! <patient_id>/transcripts/YYYY-MM-DD.txt
//! ```
//!
//! Empty cells and `NA` are missing values. Passive values are converted to
//! display units on load; raw gaps are kept as-is.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::Config;
use crate::model::{
    Date, Observation, PatientRecord, Profile, Session, SessionTimeline, TimeSeries, Unit,
};
use crate::registry::Registry;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("unknown feature column \"{column}\" in {}", .file.display())]
    UnknownFeatureColumn { file: PathBuf, column: String },
    #[error("dates not strictly increasing in {} at {date}", .file.display())]
    NonMonotonicDates { file: PathBuf, date: String },
    #[error("column \"{column}\" in {} has no values", .file.display())]
    EmptySeries { file: PathBuf, column: String },
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("score {score} outside the range of {instrument}")]
    OutOfRangeScore { instrument: String, score: f64 },
    #[error("series has no observed values")]
    AllMissing,
    #[error("malformed {}: {message}", .file.display())]
    Malformed { file: PathBuf, message: String },
    #[error("invalid session timeline in {}: {message}", .dir.display())]
    Timeline { dir: PathBuf, message: String },
    #[error("cannot read {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl IngestError {
    /// Failures of the filesystem itself rather than of the data contract.
    pub fn is_io(&self) -> bool {
        matches!(self, IngestError::Io { .. })
    }
}

/// Converts a raw source-unit value of `feature_id` into its display unit.
pub fn convert_units(
    registry: &Registry,
    feature_id: &str,
    value: f64,
) -> Result<f64, IngestError> {
    registry
        .feature(feature_id)
        .map(|f| f.conversion.apply(value))
        .ok_or_else(|| IngestError::UnknownFeature(feature_id.to_string()))
}

/// Label of the band containing `score`.
pub fn band_survey<'a>(
    registry: &'a Registry,
    instrument_id: &str,
    score: f64,
) -> Result<&'a str, IngestError> {
    let inst = registry
        .instrument(instrument_id)
        .ok_or_else(|| IngestError::UnknownFeature(instrument_id.to_string()))?;
    let [lo, hi] = inst.score_range;
    if !(score >= lo as f64 && score <= hi as f64) {
        return Err(IngestError::OutOfRangeScore {
            instrument: instrument_id.to_string(),
            score,
        });
    }
    // Bands are contiguous integer ranges; a fractional score belongs to the
    // band whose successor has not started yet.
    let band = inst
        .bands
        .iter()
        .zip(inst.bands.iter().skip(1).map(Some).chain([None]))
        .find(|(b, next)| score >= b.lo as f64 && next.is_none_or(|n| score < n.lo as f64))
        .map(|(b, _)| b.label.as_str());
    band.ok_or_else(|| IngestError::OutOfRangeScore {
        instrument: instrument_id.to_string(),
        score,
    })
}

/// Fills interior gaps by linear interpolation along the date axis. Leading
/// and trailing gaps stay missing.
pub fn interpolate_interior(series: &TimeSeries) -> Result<TimeSeries, IngestError> {
    let points = series.points();
    let known: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].value.is_some())
        .collect();
    if known.is_empty() {
        return Err(IngestError::AllMissing);
    }
    let mut out = points.to_vec();
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (points[a].value.unwrap(), points[b].value.unwrap());
        let span = (points[b].date - points[a].date).num_days() as f64;
        for p in out.iter_mut().take(b).skip(a + 1) {
            let frac = (p.date - points[a].date).num_days() as f64 / span;
            p.value = Some(va + (vb - va) * frac);
        }
    }
    Ok(TimeSeries::new(series.feature_id(), series.unit(), out).expect("dates unchanged"))
}

/// Loads and links one patient directory.
pub fn load_patient_dir(dir: &Path, config: &Config) -> Result<PatientRecord, IngestError> {
    let registry = &config.registry;
    let patient_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "patient".to_string());

    let profile_path = dir.join("profile.json");
    let profile: Profile =
        serde_json::from_str(&read(&profile_path)?).map_err(|e| IngestError::Malformed {
            file: profile_path.clone(),
            message: e.to_string(),
        })?;

    let passive_path = dir.join("passive.csv");
    let sensing = read_wide_csv(&passive_path, |column| {
        registry
            .feature(column)
            .map(|f| (f.unit, Some(f.conversion), None))
    })?;
    let surveys_path = dir.join("surveys.csv");
    let surveys = read_wide_csv(&surveys_path, |column| {
        registry
            .instrument(column)
            .map(|i| (Unit::Score, None, Some(i.score_range)))
    })?;

    let notes = read_dated_documents(&dir.join("notes"), "note")?;
    let transcripts = read_dated_documents(&dir.join("transcripts"), "transcript")?;

    let mut sessions = Vec::new();
    for (i, (date, note_id)) in notes
        .iter()
        .map(|(d, (id, _))| (*d, id.clone()))
        .enumerate()
    {
        sessions.push(Session {
            index: i + 1,
            date,
            note_id: Some(note_id),
            transcript_id: transcripts.get(&date).map(|(id, _)| id.clone()),
        });
    }
    if sessions.is_empty() {
        return Err(IngestError::Timeline {
            dir: dir.to_path_buf(),
            message: "no session notes".into(),
        });
    }
    let today = sensing
        .values()
        .chain(surveys.values())
        .filter_map(|s| s.points().last().map(|p| p.date))
        .max()
        .ok_or_else(|| IngestError::Timeline {
            dir: dir.to_path_buf(),
            message: "no data rows".into(),
        })?;
    let last = sessions.last().expect("non-empty").date;
    let timeline = SessionTimeline::new(sessions, today).map_err(|_| IngestError::Timeline {
        dir: dir.to_path_buf(),
        message: format!("latest data date {today} must fall after the last session {last}"),
    })?;

    Ok(PatientRecord {
        patient_id,
        profile,
        timeline,
        sensing,
        surveys,
        notes: notes.into_values().collect(),
        transcripts: transcripts.into_values().collect(),
    })
}

fn read(path: &Path) -> Result<String, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

type ColumnInfo = (Unit, Option<crate::registry::Conversion>, Option<[i64; 2]>);

fn read_wide_csv(
    path: &Path,
    column_info: impl Fn(&str) -> Option<ColumnInfo>,
) -> Result<BTreeMap<String, TimeSeries>, IngestError> {
    let text = read(path)?;
    let malformed = |message: String| IngestError::Malformed {
        file: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .clone();
    if headers.get(0) != Some("date") {
        return Err(malformed("first column must be \"date\"".into()));
    }
    let mut columns = Vec::new();
    for name in headers.iter().skip(1) {
        let info = column_info(name).ok_or_else(|| IngestError::UnknownFeatureColumn {
            file: path.to_path_buf(),
            column: name.to_string(),
        })?;
        columns.push((name.to_string(), info, Vec::<Observation>::new()));
    }

    let mut previous: Option<Date> = None;
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let raw_date = record.get(0).unwrap_or_default();
        let date: Date = raw_date
            .parse()
            .map_err(|_| malformed(format!("bad date \"{raw_date}\"")))?;
        if previous.is_some_and(|p| p >= date) {
            return Err(IngestError::NonMonotonicDates {
                file: path.to_path_buf(),
                date: raw_date.to_string(),
            });
        }
        previous = Some(date);
        for (i, (name, (_, conversion, range), points)) in columns.iter_mut().enumerate() {
            let cell = record.get(i + 1).unwrap_or_default();
            let value = if cell.is_empty() || cell == "NA" {
                None
            } else {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| malformed(format!("bad value \"{cell}\" in column {name}")))?;
                if let Some([lo, hi]) = range {
                    if v < *lo as f64 || v > *hi as f64 {
                        return Err(IngestError::OutOfRangeScore {
                            instrument: name.clone(),
                            score: v,
                        });
                    }
                }
                Some(conversion.map_or(v, |c| c.apply(v)))
            };
            points.push(Observation { date, value });
        }
    }

    let mut out = BTreeMap::new();
    for (name, (unit, _, _), points) in columns {
        if points.iter().all(|p| p.value.is_none()) {
            return Err(IngestError::EmptySeries {
                file: path.to_path_buf(),
                column: name,
            });
        }
        let series = TimeSeries::new(&name, unit, points).expect("dates checked above");
        out.insert(name, series);
    }
    Ok(out)
}

/// Reads `<dir>/YYYY-MM-DD.txt` files keyed by date, with ids `<prefix>-YYYY-MM-DD`.
fn read_dated_documents(
    dir: &Path,
    prefix: &str,
) -> Result<BTreeMap<Date, (String, String)>, IngestError> {
    if !dir.is_dir() {
        return Err(IngestError::MissingFile(dir.to_path_buf()));
    }
    let entries = std::fs::read_dir(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let date: Date = stem.parse().map_err(|_| IngestError::Malformed {
            file: path.clone(),
            message: "document names must be YYYY-MM-DD.txt".into(),
        })?;
        let text = read(&path)?;
        out.insert(date, (format!("{prefix}-{stem}"), text));
    }
    Ok(out)
}
