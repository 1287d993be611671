//! Single-worker vs full-pool timings of the data-parallel paths.
//!
//! `cargo bench -p tsda-core` compares one worker against the whole rayon
//! pool; `cargo bench -p tsda-core --no-default-features` times the
//! sequential build of the same code.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tsda_core::algorithms::AlgorithmId;
use tsda_core::backbones::{BackboneKind, BackboneSpec, Network};
use tsda_core::data::ShiftSpec;
use tsda_core::par;
use tsda_core::rng::{self, Stream};
use tsda_core::selection::RiskType;
use tsda_core::sweep::{run_sweep, DataSource, RunOptions, SweepPlan};
use tsda_core::Tensor;

fn modes() -> Vec<(String, Option<usize>)> {
    let build = if cfg!(feature = "parallel") { "rayon" } else { "sequential" };
    let mut m = vec![(format!("{build}/1-worker"), Some(1))];
    if cfg!(feature = "parallel") && par::threads() > 1 {
        m.push((format!("{build}/{}-workers", par::threads()), None));
    }
    m
}

fn batch(n: usize, c: usize, t: usize) -> Tensor {
    let mut r = rng::stream(0, Stream::Synthetic);
    Tensor::new(vec![n, c, t], (0..n * c * t).map(|_| rng::normal(&mut r)).collect()).unwrap()
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("network_forward");
    let x = batch(64, 9, 128);
    for kind in [BackboneKind::Cnn1d, BackboneKind::Tcn] {
        let mut spec = BackboneSpec::new(kind, 9, 6);
        spec.width = 32;
        let net = Network::build(&spec, 0).unwrap();
        for (label, n) in modes() {
            g.bench_with_input(BenchmarkId::new(kind.to_string(), &label), &x, |b, x| {
                b.iter(|| par::with_threads(n, || black_box(net.forward(x).unwrap())))
            });
        }
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("sweep_trials");
    g.sample_size(10);
    let spec = ShiftSpec {
        length: 32,
        samples_per_class: 12,
        ..ShiftSpec::benchmark()
    };
    let mut bb = BackboneSpec::new(BackboneKind::Cnn1d, spec.channels, spec.num_classes());
    bb.width = 8;
    bb.feature_dim = 16;
    for (label, n) in modes() {
        let mut plan = SweepPlan::new(
            AlgorithmId::Ddc,
            DataSource::Synthetic {
                spec: spec.clone(),
                seed: 0,
            },
            vec!["0:1".into()],
            bb.clone(),
        );
        plan.n_combos = 4;
        plan.seeds = vec![1];
        plan.train.epochs = 2;
        plan.risks = vec![RiskType::Src, RiskType::Tgt];
        plan.workers = n;
        g.bench_function(BenchmarkId::new("ddc_4x1", &label), |b| {
            b.iter(|| {
                let dir = tempfile::tempdir().unwrap();
                black_box(run_sweep(&plan, dir.path(), dir.path(), &RunOptions::default()).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, sweep);
criterion_main!(benches);
