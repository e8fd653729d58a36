// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the criterion benchmarks.

use vfl_core::dataset::{vertical_partition, FeatureSchema, TabularData};
use vfl_core::datasets::synthetic_dataset;
use vfl_core::{Hyperparams, ModelKind, Protocol, TaskKind, TrainConfig};

/// `n` synthetic rows with `features` columns split over `parties` parties.
pub fn partitioned(n: usize, features: usize, parties: usize, task: TaskKind) -> Vec<TabularData> {
    let pooled = synthetic_dataset(n, features, task, 0).expect("synthetic rows");
    let names: Vec<String> = pooled.columns().iter().map(|c| c.name.clone()).collect();
    let schema = FeatureSchema::contiguous(&names, parties, 32).expect("schema");
    vertical_partition(&pooled, &schema).expect("partition")
}

pub fn small_config(model: ModelKind, task: TaskKind, protocol: Protocol) -> TrainConfig {
    let mut c = TrainConfig::new(model, task, protocol);
    c.bucket_count = 32;
    c.hyper = Hyperparams {
        tree_count: 3,
        max_depth: 3,
        ..Hyperparams::default()
    };
    c
}
