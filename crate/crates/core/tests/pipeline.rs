use std::collections::BTreeMap;

use proptest::prelude::*;
use tsda_core::algorithms::{adapt, AlgorithmId, HParams, TrainConfig};
use tsda_core::backbones::{load_checkpoint, save_checkpoint, BackboneKind, BackboneSpec};
use tsda_core::data::{make_synthetic, LabelAudit, Scenario, ScenarioData, ShiftSpec};
use tsda_core::report::macro_f1;

fn tiny() -> (ScenarioData, BackboneSpec) {
    let spec = ShiftSpec {
        channels: 2,
        length: 16,
        samples_per_class: 8,
        class_frequencies: vec![1.0, 3.0, 5.0],
        ..ShiftSpec::benchmark()
    };
    let (s, t) = make_synthetic(&spec, 3).unwrap();
    let domains = BTreeMap::from([(0, s), (1, t)]);
    let data = ScenarioData::from_domains(&domains, Scenario::parse("synthetic", "0:1").unwrap()).unwrap();
    let mut bb = BackboneSpec::new(BackboneKind::Cnn1d, 2, 3);
    bb.width = 4;
    bb.feature_dim = 6;
    (data, bb)
}

#[test]
fn trained_model_survives_checkpoint_round_trip() {
    let (data, bb) = tiny();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        discriminator_hidden: 8,
        ..TrainConfig::default()
    };
    let audit = LabelAudit::new();
    let m = adapt(AlgorithmId::Dann, &data, &audit, &bb, &HParams::uniform(AlgorithmId::Dann, 1e-3, 5), &cfg).unwrap();
    assert_eq!(audit.take(), 0);
    assert!(!m.status.is_failed());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &m.to_checkpoint()).unwrap();
    let net = load_checkpoint(&path).unwrap().to_network().unwrap();
    let x = data.source.test.samples();
    assert_eq!(m.network.forward(x).unwrap(), net.forward(x).unwrap());
}

proptest! {
    #[test]
    fn macro_f1_is_bounded_and_label_permutation_invariant(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40),
        shift in 1usize..4,
    ) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let f = macro_f1(&t, &p, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let perm = |v: &[usize]| v.iter().map(|&c| (c + shift) % 4).collect::<Vec<_>>();
        let g = macro_f1(&perm(&t), &perm(&p), 4).unwrap();
        prop_assert!((f - g).abs() < 1e-12);
        prop_assert_eq!(macro_f1(&t, &t, 4).unwrap(), 1.0);
    }
}
