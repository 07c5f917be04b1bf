use super::*;
use crate::fixtures::{date, fact, fact_at};
use crate::model::{FactAttribute as A, Profile, Session, SessionTimeline};
use compose::testing::serve;
use proptest::prelude::*;

fn cfg() -> Config {
    Config::default()
}

fn record(note: &str, transcript: Option<&str>) -> PatientRecord {
    let session = Session {
        index: 1,
        date: date("2024-06-01"),
        note_id: Some("2024-06-01".into()),
        transcript_id: transcript.map(|_| "t-2024-06-01".into()),
    };
    PatientRecord {
        patient_id: "p1".into(),
        profile: Profile {
            name: "Alex".into(),
            age: 30,
            pronouns: "they/them".into(),
            history: vec![],
        },
        timeline: SessionTimeline::new(vec![session], date("2024-06-20")).unwrap(),
        sensing: BTreeMap::new(),
        surveys: BTreeMap::new(),
        notes: BTreeMap::from([("2024-06-01".to_string(), note.to_string())]),
        transcripts: transcript
            .map(|t| BTreeMap::from([("t-2024-06-01".to_string(), t.to_string())]))
            .unwrap_or_default(),
    }
}

fn all_features(config: &Config) -> BTreeSet<String> {
    config
        .registry
        .all_series()
        .map(|s| s.id().to_string())
        .collect()
}

#[test]
fn trigger_in_note_yields_question_with_span() {
    let r = record(
        "Subjective: Mood ok. Patient reports poor sleep most nights.",
        None,
    );
    let qs = generate_questions_deterministic(&r, 1, &cfg()).unwrap();
    assert_eq!(qs.len(), 1);
    let q = &qs[0];
    assert_eq!(
        (q.id.as_str(), q.topic.as_str(), q.trigger.as_str()),
        ("q-sleep", "sleep", "sleep")
    );
    assert_eq!(q.source, DataSourceType::ClinicalNotes);
    assert_eq!(
        q.source_span.quoted_text,
        "Patient reports poor sleep most nights."
    );
    q.source_span.verify(&r.notes["2024-06-01"]).unwrap();
}

#[test]
fn no_trigger_no_questions() {
    let r = record("Subjective: Nothing notable this week.", None);
    assert!(generate_questions_deterministic(&r, 1, &cfg())
        .unwrap()
        .is_empty());
}

#[test]
fn one_question_per_topic() {
    let r = record(
        "Sleep quality is poor. Sleep onset is late.",
        Some("PATIENT: I am so tired."),
    );
    let qs = generate_questions_deterministic(&r, 1, &cfg()).unwrap();
    assert_eq!(qs.iter().filter(|q| q.topic == "sleep").count(), 1);
    assert_eq!(qs[0].source_span.quoted_text, "Sleep quality is poor.");
}

#[test]
fn transcript_triggers_count() {
    let r = record(
        "Subjective: Calm.",
        Some("CLINICIAN: How are things?\nPATIENT: Work stress is heavy."),
    );
    let qs = generate_questions_deterministic(&r, 1, &cfg()).unwrap();
    assert_eq!(qs.len(), 1);
    assert_eq!(qs[0].topic, "stress");
    assert_eq!(qs[0].source, DataSourceType::Transcripts);
    assert_eq!(
        qs[0].source_span.quoted_text,
        "PATIENT: Work stress is heavy."
    );
}

#[test]
fn missing_note_is_an_error() {
    let mut r = record("x", None);
    r.notes.clear();
    assert_eq!(
        generate_questions_deterministic(&r, 1, &cfg()),
        Err(SynthError::NoLastSessionNote(1))
    );
}

#[test]
fn external_questions_are_validated() {
    let r = record("Patient reports poor sleep. Feels isolated lately.", None);
    let reply = serde_json::json!({ "text": serde_json::json!([
        {"topic": "sleep", "document": "2024-06-01", "quote": "poor sleep"},
        {"topic": "astrology", "document": "2024-06-01", "quote": "poor sleep"},
        {"topic": "social", "document": "2024-06-01", "quote": "not in the note"},
    ]).to_string() });
    let stub = serve(200, &reply.to_string());
    let qs = generate_questions(&r, 1, &cfg(), &ComposerBackend::External(stub.backend)).unwrap();
    assert_eq!(qs.len(), 1);
    assert_eq!(qs[0].source_span.quoted_text, "poor sleep");
}

#[test]
fn plans_intersect_with_available_features() {
    let config = cfg();
    let r = record(
        "Poor sleep. Missed doses of medication. Exercise is down.",
        None,
    );
    let qs = generate_questions_deterministic(&r, 1, &config).unwrap();
    let available = all_features(&config);
    let by_topic = |t: &str| qs.iter().find(|q| q.topic == t).unwrap();

    let sleep = plan_question(by_topic("sleep"), &available);
    assert!(sleep.answerable);
    assert_eq!(
        sleep.features,
        ["total_sleep", "bedtime", "wake_time", "awakening_episodes"]
    );

    let meds = plan_question(by_topic("medication"), &available);
    assert!(!meds.answerable);
    assert!(meds.features.is_empty());

    let partial: BTreeSet<String> = ["total_steps".to_string()].into();
    let activity = plan_question(by_topic("activity"), &partial);
    assert!(activity.answerable);
    assert_eq!(activity.features, ["total_steps"]);
}

fn sleep_question() -> (Question, QuestionPlan) {
    let r = record("Patient reports poor sleep.", None);
    let q = generate_questions_deterministic(&r, 1, &cfg())
        .unwrap()
        .remove(0);
    let plan = plan_question(&q, &all_features(&cfg()));
    (q, plan)
}

#[test]
fn guided_uses_only_significant_facts() {
    let (q, plan) = sleep_question();
    let sig = [
        fact("total_sleep", "total sleep", A::Decrease, Some(0.001)),
        fact("bedtime", "bedtime", A::Fall, Some(0.02)),
    ];
    let days = [
        "2024-06-03",
        "2024-06-04",
        "2024-06-05",
        "2024-06-06",
        "2024-06-07",
    ];
    let other: Vec<DataFact> = days
        .iter()
        .map(|d| fact_at("total_sleep", "total sleep", A::Spike, None, d))
        .collect();
    let all: Vec<&DataFact> = other.iter().chain(&sig).collect();
    let insight =
        guided_synthesize(&q, &plan, &all, &cfg(), &ComposerBackend::Deterministic).unwrap();
    let expected: BTreeSet<&str> = sig.iter().map(|f| f.id()).collect();
    assert_eq!(
        insight
            .fact_ids()
            .iter()
            .map(String::as_str)
            .collect::<BTreeSet<_>>(),
        expected
    );
    assert_eq!(insight.fact_ids()[0], sig[0].id());
    assert_eq!(
        insight.text().fact_clause,
        "Lower total sleep since last session"
    );
    assert_eq!(insight.origin(), Discovery::Guided);
    assert_eq!(insight.question_id(), Some("q-sleep"));
    assert_eq!(
        insight.sources(),
        &BTreeSet::from([
            DataSourceType::PassiveSensing,
            DataSourceType::ClinicalNotes
        ])
    );
    assert_eq!(insight.significant_facts(), 2);
}

#[test]
fn guided_caps_non_significant_facts_at_six() {
    let (q, plan) = sleep_question();
    let facts: Vec<DataFact> = (1..=8)
        .map(|i| {
            fact_at(
                "total_sleep",
                "total sleep",
                A::Dip,
                None,
                &format!("2024-06-{i:02}"),
            )
        })
        .collect();
    let refs: Vec<&DataFact> = facts.iter().collect();
    let insight =
        guided_synthesize(&q, &plan, &refs, &cfg(), &ComposerBackend::Deterministic).unwrap();
    assert_eq!(insight.fact_ids().len(), 6);
    assert_eq!(
        guided_synthesize(&q, &plan, &[], &cfg(), &ComposerBackend::Deterministic),
        Err(SynthError::NoFacts)
    );
}

#[test]
fn long_external_reply_falls_back() {
    let (q, plan) = sleep_question();
    let long = "Sleep has been lower across recent nights compared with earlier | which may \
        suggest the patient is resting less than before";
    assert_eq!(long.split_whitespace().filter(|w| *w != "|").count(), 20);
    let stub = serve(200, &serde_json::json!({ "text": long }).to_string());
    let hits = stub.hits.clone();
    let f = fact("total_sleep", "total sleep", A::Decrease, Some(0.001));
    let insight = guided_synthesize(
        &q,
        &plan,
        &[&f],
        &cfg(),
        &ComposerBackend::External(stub.backend),
    )
    .unwrap();
    assert_eq!(
        insight.text().fact_clause,
        "Lower total sleep since last session"
    );
    assert!(insight.text().word_count() < 15);
    assert_eq!(hits.load(std::sync::atomic::Ordering::SeqCst), 3);
}

#[test]
fn diagnostic_external_reply_falls_back() {
    let (q, plan) = sleep_question();
    let stub = serve(
        200,
        r#"{"text":"Less sleep lately | consistent with a sleep disorder"}"#,
    );
    let f = fact("total_sleep", "total sleep", A::Decrease, Some(0.001));
    let insight = guided_synthesize(
        &q,
        &plan,
        &[&f],
        &cfg(),
        &ComposerBackend::External(stub.backend),
    )
    .unwrap();
    assert_eq!(insight.text().implication, "reduced rest");

    let ok = serve(
        200,
        r#"{"text":"Less sleep since last visit | worth asking about rest"}"#,
    );
    let insight = guided_synthesize(
        &q,
        &plan,
        &[&f],
        &cfg(),
        &ComposerBackend::External(ok.backend),
    )
    .unwrap();
    assert_eq!(insight.text().fact_clause, "Less sleep since last visit");
}

#[test]
fn tags_follow_registry() {
    let reg = &cfg().registry;
    use BiopsychosocialTag::*;
    assert_eq!(
        tag_biopsychosocial(["total_sleep"], reg),
        BTreeSet::from([Biological])
    );
    assert_eq!(
        tag_biopsychosocial(["total_sleep", "negative_affect"], reg),
        BTreeSet::from([Biological, Psychological])
    );
    assert_eq!(
        tag_biopsychosocial(["custom_feature"], reg),
        BTreeSet::from([Psychological])
    );
    assert_eq!(
        tag_biopsychosocial(["time_at_home"], reg),
        BTreeSet::from([Social])
    );
}

proptest! {
    #[test]
    fn tags_are_union_of_registry_tags(mask in any::<u32>()) {
        let config = cfg();
        let series: Vec<_> = config.registry.all_series().collect();
        let chosen: Vec<_> = series.iter().enumerate().filter(|(i, _)| mask & (1 << (i % 32)) != 0).map(|(_, s)| s).collect();
        let mut expected: BTreeSet<BiopsychosocialTag> = chosen.iter().flat_map(|s| s.tags().iter().copied()).collect();
        if expected.is_empty() {
            expected.insert(BiopsychosocialTag::Psychological);
        }
        prop_assert_eq!(tag_biopsychosocial(chosen.iter().map(|s| s.id()), &config.registry), expected);
    }
}

#[test]
fn same_window_facts_share_an_insight() {
    let a = fact("total_sleep", "total sleep", A::Decrease, Some(0.001));
    let b = fact("total_sleep", "total sleep", A::Fall, Some(0.01));
    let out = exploratory_synthesize(
        &[a.clone(), b.clone()],
        &cfg(),
        &ComposerBackend::Deterministic,
    )
    .unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].fact_ids().len(), 2);
    assert!(
        out[0].fact_ids().contains(&a.id().to_string())
            && out[0].fact_ids().contains(&b.id().to_string())
    );
}

#[test]
fn exploratory_reaches_fifteen_with_enough_clusters() {
    let config = cfg();
    let mut facts = Vec::new();
    for (i, s) in config.registry.all_series().enumerate() {
        facts.push(fact(s.id(), s.label(), A::Increase, Some(0.01)));
        facts.push(fact_at(
            s.id(),
            s.label(),
            A::Spike,
            None,
            &format!("2024-06-{:02}", i + 1),
        ));
    }
    let out = exploratory_synthesize(&facts, &config, &ComposerBackend::Deterministic).unwrap();
    assert!(out.len() >= 15, "{}", out.len());
    let ids: BTreeSet<&str> = facts.iter().map(|f| f.id()).collect();
    for insight in &out {
        assert!(insight
            .fact_ids()
            .iter()
            .all(|id| ids.contains(id.as_str())));
        assert!(insight.text().word_count() < 15);
        assert_eq!(insight.origin(), Discovery::Exploratory);
    }
    assert_eq!(
        out,
        exploratory_synthesize(&facts, &config, &ComposerBackend::Deterministic).unwrap()
    );
}

#[test]
fn single_feature_yields_few_clusters() {
    let facts: Vec<DataFact> = (1..=3)
        .map(|i| {
            fact_at(
                "total_sleep",
                "total sleep",
                A::Spike,
                None,
                &format!("2024-06-{i:02}"),
            )
        })
        .collect();
    let out = exploratory_synthesize(&facts, &cfg(), &ComposerBackend::Deterministic).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(
        exploratory_synthesize(&[], &cfg(), &ComposerBackend::Deterministic),
        Err(SynthError::NoFacts)
    );
}

#[test]
fn partition_sends_requested_types_to_guided() {
    let (_, plan) = sleep_question();
    let facts = vec![
        fact("total_sleep", "total sleep", A::Decrease, Some(0.001)),
        fact("total_sleep", "total sleep", A::Max, None),
        fact("total_steps", "total steps", A::Increase, Some(0.001)),
    ];
    let (guided, exploratory) = partition_facts(&[plan], &facts);
    assert_eq!(guided.len(), 1);
    assert_eq!(guided[0].id(), facts[0].id());
    assert_eq!(guided[0].discovery(), Discovery::Guided);
    assert_eq!(exploratory.len(), 2);
}
