// SPDX-License-Identifier: Apache-2.0

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use vfl_bench::{partitioned, small_config};
use vfl_core::experiment::inference_parties;
use vfl_core::inference::{predict_indicator_batch, predict_task_led_batch, Aggregation};
use vfl_core::{train_federated, ModelKind, Protection, Protocol, TaskKind};

fn training(c: &mut Criterion) {
    let task = TaskKind::Classification { classes: 2 };
    let parts = partitioned(1000, 8, 2, task);
    let mut group = c.benchmark_group("train_xgboost_1000x8");
    group.sample_size(10);
    for (name, protocol, protection) in [
        ("fg", Protocol::FeatureGathering, Protection::None),
        ("fg_bucket_ldp", Protocol::FeatureGathering, Protection::BucketLdp { stay_probability: 0.8 }),
        ("ls", Protocol::LabelScattering, Protection::None),
        ("ls_shared", Protocol::LabelScattering, Protection::SecretSharing { prime_bits: 61 }),
    ] {
        let mut cfg = small_config(ModelKind::XgBoost, task, protocol);
        cfg.protection = protection;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_federated(black_box(&parts), &cfg).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let task = TaskKind::Regression;
    let parts = partitioned(500, 6, 3, task);
    let model = train_federated(&parts, &small_config(ModelKind::Gbdt, task, Protocol::FeatureGathering)).unwrap();
    let views = inference_parties(&parts, &model.thresholds).unwrap();
    let samples: Vec<usize> = (0..500).collect();
    let mut group = c.benchmark_group("inference_500");
    group.bench_function("task_led", |b| {
        b.iter(|| predict_task_led_batch(&model.ensemble, &views, black_box(&samples)).unwrap())
    });
    group.bench_function("indicator", |b| {
        b.iter(|| predict_indicator_batch(&model.ensemble, &views, black_box(&samples), Aggregation::Plaintext).unwrap())
    });
    group.finish();
}

criterion_group!(benches, training, inference);
criterion_main!(benches);
