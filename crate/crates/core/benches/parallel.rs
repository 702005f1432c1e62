use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use stereolift::geosearch::{refine, SearchConfig};
use stereolift::lifting::{train_reconstruction, train_view_synthesis, Lifter, NetShape, ReconMode};
use stereolift::neuralnet::TrainConfig;
use stereolift::par::{self, Execution};
use stereolift::pipeline::{label_batch, DatasetRecord, LabelConfig};
use stereolift::synthgen::{generate_pairs, record_id, SynthConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn refine_batch(c: &mut Criterion) {
    let pairs = generate_pairs(&SynthConfig::default(), 0..256, Execution::Parallel).unwrap();
    let cfg = SearchConfig::default();
    let mut group = c.benchmark_group("refine_256");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map(&pairs, exec, |p| refine(&p.pose3d, &p.left2d, &p.intrinsics, &cfg).unwrap().delta_z)
            })
        });
    }
    group.finish();
}

fn synth_generation(c: &mut Criterion) {
    let cfg = SynthConfig::default();
    let mut group = c.benchmark_group("synth_1024");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_pairs(black_box(&cfg), 0..1024, exec).unwrap())
        });
    }
    group.finish();
}

fn labeling(c: &mut Criterion) {
    let pairs = generate_pairs(&SynthConfig::default(), 0..512, Execution::Parallel).unwrap();
    let shape = NetShape {
        hidden_dim: 256,
        ..NetShape::default()
    };
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let (vm, _) = train_view_synthesis(&pairs, &shape, &tc, 500.0).unwrap();
    let (rm, _) = train_reconstruction(&pairs, &vm, &shape, &tc, ReconMode::SelfSynthesized).unwrap();
    let lifter = Lifter::new(Some(vm), rm).unwrap();
    let recs: Vec<DatasetRecord> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| DatasetRecord::from_pair(record_id(0, i as u64), p, 500.0))
        .collect();
    let cfg = LabelConfig::default();
    let mut group = c.benchmark_group("label_512");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| label_batch(&recs, &lifter, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, refine_batch, synth_generation, labeling);
criterion_main!(benches);
