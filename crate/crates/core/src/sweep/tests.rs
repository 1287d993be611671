use super::*;
use crate::backbones::BackboneKind;

fn plan(alg: AlgorithmId) -> SweepPlan {
    let spec = ShiftSpec {
        channels: 2,
        length: 16,
        samples_per_class: 10,
        class_frequencies: vec![1.0, 3.0, 5.0],
        ..ShiftSpec::benchmark()
    };
    let mut bb = BackboneSpec::new(BackboneKind::Cnn1d, 2, 3);
    bb.width = 4;
    bb.feature_dim = 6;
    let mut p = SweepPlan::new(alg, DataSource::Synthetic { spec, seed: 3 }, vec!["0:1".into()], bb);
    p.n_combos = 2;
    p.seeds = vec![1, 2];
    p.train.epochs = 1;
    p.train.batch_size = 8;
    p.train.discriminator_hidden = 8;
    p.dev.epochs = 3;
    p.dev.hidden = 8;
    p.fewshot_per_class = 2;
    p
}

fn read(dir: &Path, f: &str) -> Vec<u8> {
    fs::read(dir.join(f)).unwrap()
}

#[test]
fn full_sweep_rows_and_summary() {
    let d = tempfile::tempdir().unwrap();
    let p = plan(AlgorithmId::Ddc);
    let out = run_sweep(&p, d.path(), d.path(), &RunOptions::default()).unwrap();
    assert_eq!(out.rows.len(), 4);
    let keys: Vec<(usize, u64)> = out.rows.iter().map(|r| (r.combo, r.seed)).collect();
    assert_eq!(keys, [(0, 1), (0, 2), (1, 1), (1, 2)]);
    for r in &out.rows {
        assert_eq!(r.unsupervised_label_reads, 0);
        assert!(r.evaluation_label_reads > 0);
        assert_eq!(r.risks.len(), 4, "{:?}", r.risk_failures);
        assert!(r.target.is_some());
    }
    // seeds share a combo's hyper-parameters
    let hp = |i: usize| (out.rows[i].hparams.learning_rate, out.rows[i].hparams.weights.clone());
    assert_eq!(hp(0), hp(1));
    assert_ne!(hp(0), hp(2));
    assert_eq!(out.rows[1].hparams.seed, 2);

    let s = out.summary.unwrap();
    assert_eq!(s, load_summary(d.path()).unwrap());
    assert_eq!((s.trials, s.failed_trials, s.unsupervised_label_reads), (4, 0, 0));
    for risk in RiskType::ALL {
        let sel = s.selection("0:1", risk).unwrap();
        assert_eq!(sel.combos.len(), 1);
        let c = sel.combos[0];
        let mean = |c: usize| out.rows.iter().filter(|r| r.combo == c).map(|r| r.risks[&risk]).sum::<f64>() / 2.0;
        assert!(mean(c) <= mean(1 - c));
        assert_eq!(sel.per_seed_f1.len(), 2);
    }
    assert_eq!(read_trials(&d.path().join(TRIALS_FILE)).unwrap(), out.rows);
}

#[test]
fn rerun_and_resume_are_byte_identical() {
    let p = plan(AlgorithmId::Dann);
    let a = tempfile::tempdir().unwrap();
    run_sweep(&p, a.path(), a.path(), &RunOptions::default()).unwrap();
    let b = tempfile::tempdir().unwrap();
    run_sweep(&p, b.path(), b.path(), &RunOptions::default()).unwrap();
    for f in [TRIALS_FILE, SUMMARY_FILE, PLAN_FILE] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }

    let c = tempfile::tempdir().unwrap();
    let part = run_sweep(
        &p,
        c.path(),
        c.path(),
        &RunOptions {
            resume: false,
            max_new_trials: Some(3),
        },
    )
    .unwrap();
    assert_eq!(part.rows.len(), 3);
    assert!(part.summary.is_none());
    assert!(!c.path().join(SUMMARY_FILE).exists());
    // a torn final line is dropped and re-run
    let mut f = OpenOptions::new().append(true).open(c.path().join(TRIALS_FILE)).unwrap();
    f.write_all(b"{\"scenario\":\"0").unwrap();
    drop(f);
    let done = run_sweep(
        &p,
        c.path(),
        c.path(),
        &RunOptions {
            resume: true,
            max_new_trials: None,
        },
    )
    .unwrap();
    assert_eq!(done.rows.len(), 4);
    for f in [TRIALS_FILE, SUMMARY_FILE] {
        assert_eq!(read(a.path(), f), read(c.path(), f), "{f}");
    }
}

#[test]
fn resume_rejects_changed_plan() {
    let d = tempfile::tempdir().unwrap();
    let mut p = plan(AlgorithmId::SourceOnly);
    p.n_combos = 1;
    p.seeds = vec![1];
    run_sweep(&p, d.path(), d.path(), &RunOptions::default()).unwrap();
    p.train.epochs = 2;
    let e = run_sweep(
        &p,
        d.path(),
        d.path(),
        &RunOptions {
            resume: true,
            max_new_trials: None,
        },
    );
    assert!(matches!(e, Err(Error::Config(_))));
}

#[test]
fn per_seed_mode_picks_per_seed() {
    let d = tempfile::tempdir().unwrap();
    let mut p = plan(AlgorithmId::DeepCoral);
    p.selection = SelectionMode::PerSeed;
    p.risks = vec![RiskType::Src, RiskType::Tgt];
    let out = run_sweep(&p, d.path(), d.path(), &RunOptions::default()).unwrap();
    let s = out.summary.unwrap();
    let sc = &s.scenarios[0].scenario;
    for risk in [RiskType::Src, RiskType::Tgt] {
        let sel = s.selection(sc, risk).unwrap();
        assert_eq!(sel.combos.len(), 2);
        for (i, seed) in [1u64, 2].into_iter().enumerate() {
            let at = |c: usize| {
                out.rows
                    .iter()
                    .find(|r| r.combo == c && r.seed == seed)
                    .unwrap()
                    .risks[&risk]
            };
            assert!(at(sel.combos[i]) <= at(1 - sel.combos[i]));
        }
        assert!(sel.mean_risk.is_none());
    }
    assert!(s.selection(sc, RiskType::Dev).is_none());
}

#[test]
fn plan_json_round_trip_and_defaults() {
    let p = plan(AlgorithmId::Cdan);
    let j = serde_json::to_string(&p).unwrap();
    assert_eq!(serde_json::from_str::<SweepPlan>(&j).unwrap(), p);

    let minimal = format!(
        r#"{{"algorithm": "ddc", "data": {{"kind": "manifest", "path": "m.json"}},
            "scenarios": ["a:b"], "backbone": {}}}"#,
        serde_json::to_string(&p.backbone).unwrap()
    );
    match serde_json::from_str::<SweepPlan>(&minimal) {
        Ok(m) => {
            assert_eq!(m.n_combos, 100);
            assert_eq!(m.seeds, [1, 2, 3]);
            assert_eq!(m.risks, RiskType::ALL);
            assert!(m.evaluate_target);
        }
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn validation() {
    let ok = plan(AlgorithmId::Ddc);
    ok.validate().unwrap();
    let bad: Vec<Box<dyn Fn(&mut SweepPlan)>> = vec![
        Box::new(|p| p.n_combos = 0),
        Box::new(|p| p.seeds.clear()),
        Box::new(|p| p.seeds = vec![1, 1]),
        Box::new(|p| p.scenarios.clear()),
        Box::new(|p| p.risks.clear()),
        Box::new(|p| p.fewshot_per_class = 0),
        Box::new(|p| p.schema = Some(algorithm_spec(AlgorithmId::Dann).schema)),
    ];
    for f in bad {
        let mut p = ok.clone();
        f(&mut p);
        assert!(p.validate().is_err());
    }
    let d = tempfile::tempdir().unwrap();
    let mut p = ok.clone();
    p.scenarios = vec!["0:1".into(), "0:1".into()];
    assert!(run_sweep(&p, d.path(), d.path(), &RunOptions::default()).is_err());
    p.scenarios = vec!["0:7".into()];
    assert!(run_sweep(&p, d.path(), d.path(), &RunOptions::default()).is_err());
}

fn summary(alg: AlgorithmId, backbone: BackboneKind, f1: &[(&str, f64, f64)]) -> SweepSummary {
    SweepSummary {
        algorithm: alg,
        dataset: "d".into(),
        backbone,
        n_combos: 1,
        seeds: vec![1],
        selection: SelectionMode::SeedAveraged,
        scenarios: f1
            .iter()
            .map(|&(sc, m, s)| ScenarioSummary {
                scenario: sc.into(),
                selections: vec![RiskSelection {
                    risk: RiskType::Src,
                    combos: vec![0],
                    mean_risk: Some(0.1),
                    per_seed_f1: vec![m],
                    f1_mean: Some(m),
                    f1_std: Some(s),
                    accuracy_mean: Some(m),
                    error: None,
                }],
                failed_trials: 0,
            })
            .collect(),
        trials: 1,
        failed_trials: 0,
        unsupervised_label_reads: 0,
        eta_definition: String::new(),
    }
}

#[test]
fn aggregate_cases() {
    let one = aggregate(&[summary(AlgorithmId::Ddc, BackboneKind::Cnn1d, &[("a", 0.8, 0.1)])]).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.rows[0].per_scenario, [Some((0.8, 0.1))]);
    assert_eq!(one.rows[0].average, Some(0.8));

    let two = aggregate(&[
        summary(AlgorithmId::Ddc, BackboneKind::Cnn1d, &[("a", 0.8, 0.0)]),
        summary(AlgorithmId::Ddc, BackboneKind::Cnn1d, &[("b", 0.6, 0.0)]),
    ])
    .unwrap();
    assert_eq!(two.scenarios, ["a", "b"]);
    assert!((two.rows[0].average.unwrap() - 0.7).abs() < 1e-15);

    assert!(aggregate(&[]).is_err());
    assert!(aggregate(&[
        summary(AlgorithmId::Ddc, BackboneKind::Cnn1d, &[("a", 0.8, 0.0)]),
        summary(AlgorithmId::Ddc, BackboneKind::Resnet18, &[("b", 0.6, 0.0)]),
    ])
    .is_err());
    assert!(aggregate(&[
        summary(AlgorithmId::Ddc, BackboneKind::Cnn1d, &[("a", 0.8, 0.0)]),
        summary(AlgorithmId::Dann, BackboneKind::Cnn1d, &[("b", 0.6, 0.0)]),
    ])
    .is_err());
}

#[test]
fn population_std_over_seeds() {
    let row = |seed, f1| TrialRow {
        scenario: "0:1".into(),
        combo: 0,
        seed,
        hparams: HParams::uniform(AlgorithmId::SourceOnly, 1e-3, 1),
        status: TrialStatus::Completed,
        epochs_run: 1,
        final_losses: BTreeMap::new(),
        risks: BTreeMap::from([(RiskType::Src, 0.5)]),
        risk_failures: BTreeMap::new(),
        dev: None,
        target: Some(MetricPair { macro_f1: f1, accuracy: f1 }),
        source: None,
        unsupervised_label_reads: 0,
        evaluation_label_reads: 0,
        checkpoint: None,
    };
    let mut p = plan(AlgorithmId::SourceOnly);
    p.n_combos = 1;
    p.risks = vec![RiskType::Src];
    p.scenarios = vec!["0:1".into()];
    let s = summarize(&p, "d", &[row(1, 0.6), row(2, 0.8)]).unwrap();
    let sel = &s.scenarios[0].selections[0];
    assert!((sel.f1_mean.unwrap() - 0.7).abs() < 1e-15);
    assert!((sel.f1_std.unwrap() - 0.1).abs() < 1e-15);
}
