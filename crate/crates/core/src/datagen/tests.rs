use super::*;
use crate::bundle::validate_manifest_schema;
use crate::ingest::load_patient_dir;

fn cfg() -> Config {
    Config::default()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, _) = generate_patient(&InjectionSpec::example(42), &cfg(), a.path()).unwrap();
    let (db, _) = generate_patient(&InjectionSpec::example(42), &cfg(), b.path()).unwrap();
    assert_eq!(files(&da), files(&db));

    let c = tempfile::tempdir().unwrap();
    let (dc, _) = generate_patient(&InjectionSpec::example(43), &cfg(), c.path()).unwrap();
    let passive = |d: &Path| std::fs::read(d.join("passive.csv")).unwrap();
    assert_ne!(passive(&da), passive(&dc));
}

#[test]
fn generated_patient_loads_within_domains() {
    let config = cfg();
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = InjectionSpec::example(9);
    spec.missing_rate = 0.2;
    let (dir, manifest) = generate_patient(&spec, &config, tmp.path()).unwrap();
    let record = load_patient_dir(&dir, &config).unwrap();
    assert_eq!(record.timeline.sessions().len(), 3);
    assert_eq!(record.timeline.today(), manifest.today);
    for f in &config.registry.features {
        let s = &record.sensing[&f.id];
        assert_eq!(s.points().len(), 84);
        for (_, v) in s.present() {
            assert!(
                v >= f.domain[0] - 1e-9 && v <= f.domain[1] + 1e-9,
                "{} = {v}",
                f.id
            );
        }
    }
    for inst in &config.registry.instruments {
        for (_, v) in record.surveys[&inst.id].present() {
            assert!(v >= inst.score_range[0] as f64 && v <= inst.score_range[1] as f64);
            assert_eq!(v.fract(), 0.0);
        }
    }
    let cells: usize = config.registry.features.len() * 84;
    let missing: usize = record.sensing.values().map(|s| s.missing_count()).sum();
    let rate = missing as f64 / cells as f64;
    assert!((0.12..0.28).contains(&rate), "missing rate {rate}");
}

#[test]
fn spike_day_is_never_missing() {
    let config = cfg();
    for seed in 0..10 {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = InjectionSpec::example(seed);
        spec.missing_rate = 0.5;
        let (dir, manifest) = generate_patient(&spec, &config, tmp.path()).unwrap();
        let record = load_patient_dir(&dir, &config).unwrap();
        let spike = manifest
            .expected
            .iter()
            .find(|e| e.fact_type == FactType::Outlier)
            .unwrap();
        assert!(record.sensing["bedtime"]
            .value_at(spike.date.unwrap())
            .is_some());
    }
}

#[test]
fn manifest_mirrors_spec_and_validates() {
    let config = cfg();
    let tmp = tempfile::tempdir().unwrap();
    let spec = InjectionSpec {
        injections: vec![
            Injection {
                feature: "total_sleep".into(),
                kind: InjectionKind::Shift { effect_sd: 2.0 },
            },
            Injection {
                feature: "bedtime".into(),
                kind: InjectionKind::Spike {
                    magnitude_mad: 8.0,
                    day: 15,
                },
            },
        ],
        ..InjectionSpec::example(1)
    };
    let (dir, manifest) = generate_patient(&spec, &config, tmp.path()).unwrap();
    let sleep = &manifest.expected[0];
    assert_eq!(
        (sleep.fact_type, sleep.attribute),
        (FactType::Comparison, FactAttribute::Increase)
    );
    let spike = &manifest.expected[1];
    assert_eq!(
        (spike.fact_type, spike.attribute),
        (FactType::Outlier, FactAttribute::Spike)
    );
    assert_eq!(spike.date, Some(spec.start_date + chrono::Days::new(15)));

    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    validate_manifest_schema(&value).unwrap();
    let back: Manifest = serde_json::from_value(value).unwrap();
    assert_eq!(back, manifest);
}

#[test]
fn notes_mention_injected_topics() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, manifest) = generate_patient(&InjectionSpec::example(2), &cfg(), tmp.path()).unwrap();
    let note = std::fs::read_to_string(
        dir.join("notes")
            .join(format!("{}.txt", manifest.last_session)),
    )
    .unwrap();
    assert!(note.starts_with("Subjective: "));
    assert!(note.contains("sleep") && note.contains("staying home"));
    assert!(note.contains("sertraline"));
    let transcript = std::fs::read_to_string(
        dir.join("transcripts")
            .join(format!("{}.txt", manifest.last_session)),
    )
    .unwrap();
    assert!(transcript
        .lines()
        .all(|l| l.starts_with("CLINICIAN: ") || l.starts_with("PATIENT: ")));
}

#[test]
fn invalid_specs_are_rejected() {
    let config = cfg();
    let base = InjectionSpec::example(0);
    let cases = [
        InjectionSpec {
            missing_rate: 0.6,
            ..base.clone()
        },
        InjectionSpec {
            n_days: 40,
            ..base.clone()
        },
        InjectionSpec {
            sessions: SessionPlan {
                count: 0,
                spacing_days: 7,
            },
            ..base.clone()
        },
        InjectionSpec {
            injections: vec![Injection {
                feature: "nope".into(),
                kind: InjectionKind::Shift { effect_sd: 1.0 },
            }],
            ..base.clone()
        },
        InjectionSpec {
            injections: vec![Injection {
                feature: "bedtime".into(),
                kind: InjectionKind::Spike {
                    magnitude_mad: 8.0,
                    day: 84,
                },
            }],
            ..base.clone()
        },
    ];
    for spec in cases {
        assert!(
            matches!(spec.validate(&config), Err(DatagenError::InvalidSpec(_))),
            "{spec:?}"
        );
    }
    base.validate(&config).unwrap();
}

#[test]
fn zero_noise_gives_constant_series() {
    let config = cfg();
    let tmp = tempfile::tempdir().unwrap();
    let spec = InjectionSpec {
        noise_scale: 0.0,
        missing_rate: 0.0,
        injections: vec![],
        ..InjectionSpec::example(4)
    };
    let (dir, _) = generate_patient(&spec, &config, tmp.path()).unwrap();
    let record = load_patient_dir(&dir, &config).unwrap();
    for s in record.sensing.values() {
        let vals: Vec<f64> = s.present().map(|(_, v)| v).collect();
        assert!(
            vals.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-6),
            "{}",
            s.feature_id()
        );
    }
}

#[test]
fn spec_parses_from_json() {
    let text = r#"{
        "seed": 3, "n_days": 56, "sessions": {"count": 2, "spacing_days": 28},
        "injections": [{"feature": "total_sleep", "kind": "shift", "effect_sd": -1.5}]
    }"#;
    let spec: InjectionSpec = serde_json::from_str(text).unwrap();
    assert_eq!(spec.start_date, Date::from_ymd_opt(2024, 5, 1).unwrap());
    assert_eq!(spec.noise_scale, 1.0);
    assert_eq!(spec.session_days(), [0, 28]);
    assert_eq!(
        spec.injections[0].kind,
        InjectionKind::Shift { effect_sd: -1.5 }
    );
}
