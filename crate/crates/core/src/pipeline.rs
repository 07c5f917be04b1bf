//! End-to-end run: ingest, analyze, synthesize, narrate, bundle.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::analyzer::{
    discover_series, fact_order, AnalysisWindow, AnalyzerError, LabeledSeries, SkipEntry,
};
use crate::bundle::{build_bundle, BundleError, BundleInputs, DashboardBundle};
use crate::config::Config;
use crate::ingest::{load_patient_dir, IngestError};
use crate::model::{DataFact, FactType, PatientRecord, RecapCard};
use crate::narrator::{summarize_recap, thread, NarrateError};
use crate::synthesizer::compose::{ComposeError, ComposerBackend};
use crate::synthesizer::{
    exploratory_synthesize, facts_for_plan, generate_questions, guided_synthesize, partition_facts,
    plan_question, SynthError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Narrate(#[from] NarrateError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Backend(#[from] ComposeError),
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub bundle: DashboardBundle,
    pub fact_count: usize,
    pub guided_insights: usize,
    pub exploratory_candidates: usize,
    pub skips: Vec<SkipEntry>,
}

/// Mines every registered series present in the record.
pub fn analyze_record(
    record: &PatientRecord,
    window: &AnalysisWindow,
    config: &Config,
    skips: &mut Vec<SkipEntry>,
) -> Vec<DataFact> {
    let mut facts = Vec::new();
    for spec in config.registry.all_series() {
        let series = record
            .sensing
            .get(spec.id())
            .or_else(|| record.surveys.get(spec.id()));
        let Some(series) = series else { continue };
        let ls = LabeledSeries {
            series,
            label: spec.label(),
            source: spec.source(),
        };
        facts.extend(discover_series(&ls, window, &config.stats, skips));
    }
    facts.sort_by_key(fact_order);
    facts
}

/// Runs the pipeline for the session `session` (default: the latest).
pub fn run_record(
    record: &PatientRecord,
    session: Option<usize>,
    config: &Config,
    backend: &ComposerBackend,
) -> Result<RunSummary, PipelineError> {
    let index = session.unwrap_or_else(|| record.timeline.sessions().len());
    let window = AnalysisWindow::for_session(record, index)?;
    let mut skips = Vec::new();
    let facts = analyze_record(record, &window, config, &mut skips);

    let questions = match generate_questions(record, index, config, backend) {
        Ok(q) => q,
        Err(SynthError::NoLastSessionNote(i)) => {
            log::warn!("session {i} has no note; guided path skipped");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    let available: BTreeSet<String> = record
        .sensing
        .keys()
        .chain(record.surveys.keys())
        .cloned()
        .collect();
    let plans: Vec<_> = questions
        .iter()
        .map(|q| plan_question(q, &available))
        .collect();
    let (guided_pool, exploratory_pool) = partition_facts(&plans, &facts);

    let mut guided = Vec::new();
    for (question, plan) in questions.iter().zip(&plans) {
        let cited = facts_for_plan(plan, &guided_pool);
        match guided_synthesize(question, plan, &cited, config, backend) {
            Ok(insight) => guided.push(insight),
            Err(SynthError::NoFacts) => skips.push(SkipEntry {
                feature_id: plan.features.join(","),
                fact_type: plan
                    .fact_types_requested
                    .first()
                    .copied()
                    .unwrap_or(FactType::Comparison),
                reason: format!("question {} has no facts to answer it", question.id),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    let exploratory = if exploratory_pool.is_empty() {
        Vec::new()
    } else {
        exploratory_synthesize(&exploratory_pool, config, backend)?
    };
    let insights = thread(&guided, &exploratory, config.narrative.exploratory_k);

    let recap = recap_for(record, index, config, backend)?;
    let mut all_facts = guided_pool;
    all_facts.extend(exploratory_pool);
    all_facts.sort_by_key(fact_order);
    let fact_count = all_facts.len();
    let bundle = build_bundle(BundleInputs {
        record,
        session_index: index,
        window,
        facts: all_facts,
        questions,
        plans,
        recap,
        insights,
        skip_log: skips.clone(),
        config,
    })?;
    Ok(RunSummary {
        bundle,
        fact_count,
        guided_insights: guided.len(),
        exploratory_candidates: exploratory.len(),
        skips,
    })
}

fn recap_for(
    record: &PatientRecord,
    index: usize,
    config: &Config,
    backend: &ComposerBackend,
) -> Result<Vec<RecapCard>, PipelineError> {
    let note = record
        .timeline
        .session(index)
        .and_then(|s| s.note_id.as_ref())
        .and_then(|id| record.notes.get(id).map(|text| (id, text)));
    match note {
        Some((id, text)) => Ok(summarize_recap(id, text, config, backend)?),
        None => Ok(crate::model::RecapKind::ALL
            .iter()
            .map(|&kind| RecapCard {
                kind,
                text: crate::narrator::NOT_DOCUMENTED.into(),
                evidence: Vec::new(),
            })
            .collect()),
    }
}

/// Loads `dir` and runs the pipeline on it.
pub fn run_dir(
    dir: &Path,
    session: Option<usize>,
    config: &Config,
    backend: &ComposerBackend,
) -> Result<RunSummary, PipelineError> {
    let record = load_patient_dir(dir, config)?;
    run_record(&record, session, config, backend)
}
