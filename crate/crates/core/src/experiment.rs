// SPDX-License-Identifier: Apache-2.0

//! End-to-end experiments: load a dataset, partition it vertically, train
//! with one protocol, evaluate on held-out rows and report utility,
//! communication and timing over repeated seeds.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::KvConfig;
use crate::dataset::{FeatureSchema, TabularData, DEFAULT_BUCKET_COUNT};
use crate::datasets::{load_prepared, split_rows, synthetic_dataset, Preset};
use crate::error::{Result, VflError};
use crate::inference::{predict_indicator_batch, predict_task_led_batch, Aggregation, BatchPredictions, InferenceParty};
use crate::messaging::{CommStats, PartyId};
use crate::metrics::{accuracy, auc, mean_std, mse};
use crate::privacy::paillier_keygen;
use crate::session::{train_federated, Protection, Protocol, TrainConfig};
use crate::tree::{Hyperparams, ModelKind, Prediction, TaskKind, ThresholdTable};

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Prepared files under `<data_dir>/<name>/`.
    Preset { preset: Preset, data_dir: PathBuf },
    /// Any prepared-format CSV; without a test file the rows are split.
    Files { train: PathBuf, test: Option<PathBuf> },
    Synthetic { samples: usize, features: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    Plaintext,
    /// Indicator aggregation under a Paillier key of this size.
    Masked { key_bits: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: DataSource,
    pub train: TrainConfig,
    pub party_count: usize,
    /// Explicit feature placements; the rest are split contiguously.
    pub assignment: Vec<(String, u16)>,
    pub repetitions: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub inference: InferenceMode,
}

fn parse_task(s: &str) -> Result<TaskKind> {
    match s.split_once(':') {
        None if s == "regression" => Ok(TaskKind::Regression),
        None if s == "classification" => Ok(TaskKind::Classification { classes: 2 }),
        Some(("classification", k)) => Ok(TaskKind::Classification {
            classes: k.parse().map_err(|_| VflError::Config(format!("bad class count in {s:?}")))?,
        }),
        _ => Err(VflError::Config(format!("unknown task {s:?}"))),
    }
}

fn task_str(task: TaskKind) -> String {
    match task {
        TaskKind::Regression => "regression".into(),
        TaskKind::Classification { classes } => format!("classification:{classes}"),
    }
}

fn parse_protection(kv: &KvConfig) -> Result<Protection> {
    Ok(match kv.get_or("protection", "none") {
        "none" => Protection::None,
        "bucket_ldp" => Protection::BucketLdp {
            stay_probability: kv.parsed_or("ldp.stay_probability", 0.9)?,
        },
        "distance_ldp" => Protection::DistanceLdp {
            epsilon: kv.parsed_or("ldp.epsilon", 2.0)?,
        },
        "paillier" => Protection::Paillier {
            key_bits: kv.parsed_or("paillier.key_bits", 1024)?,
            scale_bits: kv.parsed_or("paillier.scale_bits", 40)?,
        },
        "secret_sharing" => Protection::SecretSharing {
            prime_bits: kv.parsed_or("ss.prime_bits", 61)?,
        },
        other => return Err(VflError::Config(format!("unknown protection {other:?}"))),
    })
}

impl ExperimentConfig {
    /// Defaults: xgboost, feature-gathering, no protection, two parties,
    /// 50 buckets, five repetitions.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let dataset = kv.get_or("dataset", "synthetic");
        let model: ModelKind = kv.parsed_or("model", ModelKind::XgBoost)?;
        let protocol: Protocol = kv.parsed_or("protocol", Protocol::FeatureGathering)?;
        let (source, task, mut hyper) = match dataset {
            "synthetic" => {
                let source = DataSource::Synthetic {
                    samples: kv.parsed_or("synthetic.samples", 400)?,
                    features: kv.parsed_or("synthetic.features", 8)?,
                    seed: kv.parsed_or("synthetic.seed", 0)?,
                };
                (source, parse_task(kv.get_or("task", "regression"))?, Hyperparams::default())
            }
            "csv" => {
                let train = kv
                    .get("train_path")
                    .ok_or_else(|| VflError::Config("dataset = csv needs train_path".into()))?;
                let source = DataSource::Files {
                    train: train.into(),
                    test: kv.get("test_path").map(PathBuf::from),
                };
                (source, parse_task(kv.get_or("task", "regression"))?, Hyperparams::default())
            }
            name => {
                let preset: Preset = name.parse()?;
                let source = DataSource::Preset {
                    preset,
                    data_dir: kv.get_or("data_dir", "data/prepared").into(),
                };
                (source, preset.task(), preset.hyperparams(model))
            }
        };
        hyper.tree_count = kv.parsed_or("hyper.tree_count", hyper.tree_count)?;
        hyper.max_depth = kv.parsed_or("hyper.max_depth", hyper.max_depth)?;
        hyper.learning_rate = kv.parsed_or("hyper.learning_rate", hyper.learning_rate)?;
        hyper.lambda = kv.parsed_or("hyper.lambda", hyper.lambda)?;
        hyper.gamma = kv.parsed_or("hyper.gamma", hyper.gamma)?;
        hyper.feature_subsample_ratio = kv.parsed_or("hyper.feature_subsample_ratio", hyper.feature_subsample_ratio)?;
        hyper.sample_subsample_ratio = kv.parsed_or("hyper.sample_subsample_ratio", hyper.sample_subsample_ratio)?;
        let seed = kv.parsed_or("seed", 0u64)?;
        hyper.seed = seed;

        let mut train = TrainConfig::new(model, task, protocol);
        train.hyper = hyper;
        train.protection = parse_protection(kv)?;
        train.bucket_count = kv.parsed_or("bucket_count", DEFAULT_BUCKET_COUNT)?;
        train.validate()?;

        let inference = match kv.get_or("inference", "plaintext") {
            "plaintext" => InferenceMode::Plaintext,
            "masked" => InferenceMode::Masked {
                key_bits: kv.parsed_or("inference.key_bits", 1024)?,
            },
            other => return Err(VflError::Config(format!("unknown inference mode {other:?}"))),
        };
        let assignment = kv
            .with_prefix("assign.")
            .map(|(f, p)| {
                p.parse::<u16>()
                    .map(|p| (f.to_string(), p))
                    .map_err(|_| VflError::Config(format!("assign.{f} = {p:?} is not a party index")))
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = ExperimentConfig {
            name: dataset.to_string(),
            source,
            train,
            party_count: kv.parsed_or("parties", 2)?,
            assignment,
            repetitions: kv.parsed_or("repetitions", 5)?,
            seed,
            test_fraction: kv.parsed_or("test_fraction", 0.2)?,
            inference,
        };
        if cfg.repetitions == 0 {
            return Err(VflError::Config("repetitions must be at least 1".into()));
        }
        if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
            return Err(VflError::Config(format!("test_fraction must be in (0, 1), got {}", cfg.test_fraction)));
        }
        Ok(cfg)
    }

    pub fn task(&self) -> TaskKind {
        self.train.task
    }

    /// Train and test tables, pooled (labels attached).
    pub fn load_data(&self) -> Result<(TabularData, TabularData)> {
        let split = |t: TabularData| {
            let (a, b) = split_rows(t.n_samples(), self.test_fraction, self.seed);
            (t.select_rows(&a), t.select_rows(&b))
        };
        Ok(match &self.source {
            DataSource::Preset { preset, data_dir } => {
                let dir = preset.prepared_dir(data_dir);
                let (tr, te) = (dir.join("train.csv"), dir.join("test.csv"));
                if !tr.exists() || !te.exists() {
                    return Err(VflError::Config(format!(
                        "prepared {preset} data not found in {}; run `vfl prepare` first",
                        dir.display()
                    )));
                }
                (load_prepared(&tr)?, load_prepared(&te)?)
            }
            DataSource::Files { train, test: Some(test) } => (load_prepared(train)?, load_prepared(test)?),
            DataSource::Files { train, test: None } => split(load_prepared(train)?),
            DataSource::Synthetic { samples, features, seed } => {
                split(synthetic_dataset(*samples, *features, self.task(), *seed)?)
            }
        })
    }

    pub fn schema(&self, data: &TabularData) -> Result<FeatureSchema> {
        let names: Vec<String> = data.columns().iter().map(|c| c.name.clone()).collect();
        let mut schema = FeatureSchema::contiguous(&names, self.party_count, self.train.bucket_count)?;
        for (f, p) in &self.assignment {
            if !schema.party_assignment.contains_key(f) {
                return Err(VflError::Config(format!("assign.{f}: no such feature")));
            }
            if *p as usize >= self.party_count {
                return Err(VflError::Config(format!("assign.{f}: party {p} out of range")));
            }
            schema = schema.assign(f.clone(), *p);
        }
        Ok(schema)
    }

    /// One table per party, party 0 holding the labels.
    pub fn partition(&self, data: &TabularData) -> Result<Vec<TabularData>> {
        crate::dataset::vertical_partition(data, &self.schema(data)?)
    }

    pub fn train_config_for(&self, repetition: usize) -> TrainConfig {
        let mut c = self.train.clone();
        c.hyper.seed = self.seed.wrapping_add(repetition as u64);
        c
    }
}

/// Inference views over a partitioned table.
pub fn inference_parties(parts: &[TabularData], thresholds: &[ThresholdTable]) -> Result<Vec<InferenceParty>> {
    if parts.len() != thresholds.len() {
        return Err(VflError::Schema(format!(
            "{} partitions for a model trained by {} parties",
            parts.len(),
            thresholds.len()
        )));
    }
    parts
        .iter()
        .zip(thresholds)
        .enumerate()
        .map(|(i, (p, t))| InferenceParty::new(PartyId(i as u16), p.clone(), t.clone()))
        .collect()
}

/// Evaluated metric names for a task, in report order.
pub fn metric_names(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Regression => &["mse"],
        TaskKind::Classification { classes: 2 } => &["accuracy", "auc"],
        TaskKind::Classification { .. } => &["accuracy"],
    }
}

pub fn evaluate(task: TaskKind, predictions: &[Prediction], labels: &[f64]) -> Result<Vec<f64>> {
    let outputs: Vec<f64> = predictions.iter().map(|p| p.output).collect();
    match task {
        TaskKind::Regression => Ok(vec![mse(&outputs, labels)?]),
        TaskKind::Classification { classes: 2 } => {
            // forests output a class, boosted models a probability
            let acc = accuracy(&outputs, labels, 0.5)?;
            let scores: Vec<f64> = predictions.iter().map(|p| p.raw_score).collect();
            Ok(vec![acc, auc(&scores, labels)?])
        }
        TaskKind::Classification { .. } => {
            let hits = outputs.iter().zip(labels).filter(|(p, y)| p == y).count();
            Ok(vec![hits as f64 / labels.len().max(1) as f64])
        }
    }
}

#[derive(Debug, Clone)]
pub struct Repetition {
    pub seed: u64,
    pub metrics: Vec<f64>,
    pub train_stats: CommStats,
    pub inference_stats: CommStats,
    pub setup_secs: f64,
    pub train_secs: f64,
    pub inference_secs: f64,
    /// Whether task-led and indicator inference agreed on every sample.
    pub paths_agree: bool,
    pub mean_queries: f64,
}

#[derive(Debug, Clone)]
pub struct MetricSummary {
    pub name: &'static str,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: ModelKind,
    pub protocol: Protocol,
    pub protection: Protection,
    pub train_rows: usize,
    pub test_rows: usize,
    pub repetitions: Vec<Repetition>,
    pub summary: Vec<MetricSummary>,
    /// Set when fewer than two repetitions ran; the deviation is then
    /// reported as zero rather than estimated.
    pub std_undefined: bool,
    pub mean_exchanges: f64,
    pub mean_bytes: f64,
}

impl MetricsReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|m| m.name == name)
    }

    pub fn paths_agree(&self) -> bool {
        self.repetitions.iter().all(|r| r.paths_agree)
    }

    /// One row per repetition.
    pub fn to_csv(&self) -> String {
        let names: Vec<&str> = self.summary.iter().map(|m| m.name).collect();
        let mut out = format!(
            "dataset,model,protocol,protection,seed,{},exchanges,bytes,setup_secs,train_secs,inference_secs,paths_agree\n",
            names.join(",")
        );
        for r in &self.repetitions {
            let vals: Vec<String> = r.metrics.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{}",
                self.dataset,
                self.model,
                self.protocol,
                self.protection.kind_str(),
                r.seed,
                vals.join(","),
                r.train_stats.exchanges,
                r.train_stats.bytes,
                r.setup_secs,
                r.train_secs,
                r.inference_secs,
                r.paths_agree
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} / {} / {} ({}), {} train rows, {} test rows, {} repetition(s)\n",
            self.dataset,
            self.model,
            self.protocol,
            self.protection.kind_str(),
            self.train_rows,
            self.test_rows,
            self.repetitions.len()
        );
        for m in &self.summary {
            let _ = writeln!(out, "  {:<10} {:.4} ± {:.4}", m.name, m.mean, m.std);
        }
        if self.std_undefined {
            out.push_str("  (single repetition: deviation not estimated)\n");
        }
        let (train, _) = mean_std(&self.repetitions.iter().map(|r| r.train_secs).collect::<Vec<_>>());
        let _ = writeln!(out, "  exchanges  {:.1}", self.mean_exchanges);
        let _ = writeln!(out, "  bytes      {:.0}", self.mean_bytes);
        let _ = writeln!(out, "  train time {train:.3}s");
        let _ = writeln!(out, "  inference paths agree: {}", self.paths_agree());
        out
    }
}

fn same_predictions(a: &BatchPredictions, b: &BatchPredictions) -> bool {
    a.predictions.len() == b.predictions.len()
        && a.predictions
            .iter()
            .zip(&b.predictions)
            .all(|(x, y)| x.raw_score.to_bits() == y.raw_score.to_bits() && x.output.to_bits() == y.output.to_bits())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let (train, test) = cfg.load_data()?;
    run_on_tables(cfg, &train, &test)
}

pub fn run_on_tables(cfg: &ExperimentConfig, train: &TabularData, test: &TabularData) -> Result<MetricsReport> {
    let train_parts = cfg.partition(train)?;
    let test_parts = cfg.partition(test)?;
    let labels = test
        .labels()
        .ok_or_else(|| VflError::Schema("test rows carry no labels".into()))?;
    let samples: Vec<usize> = (0..test.n_samples()).collect();
    let key = match cfg.inference {
        InferenceMode::Plaintext => None,
        InferenceMode::Masked { key_bits } => Some(paillier_keygen(key_bits, cfg.seed)?),
    };
    let mut reps = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let tc = cfg.train_config_for(rep);
        let model = train_federated(&train_parts, &tc)?;
        let parties = inference_parties(&test_parts, &model.thresholds)?;
        let start = Instant::now();
        let led = predict_task_led_batch(&model.ensemble, &parties, &samples)?;
        let inference_secs = start.elapsed().as_secs_f64();
        let aggregation = match &key {
            None => Aggregation::Plaintext,
            Some(k) => Aggregation::PaillierMasked(k),
        };
        let ind = predict_indicator_batch(&model.ensemble, &parties, &samples, aggregation)?;
        let metrics = evaluate(cfg.task(), &led.predictions, labels)?;
        let q = led.queries.iter().sum::<u64>() as f64 / samples.len().max(1) as f64;
        reps.push(Repetition {
            seed: tc.hyper.seed,
            metrics,
            train_stats: model.stats.clone(),
            inference_stats: led.stats.clone(),
            setup_secs: model.timings.setup_secs,
            train_secs: model.timings.train_secs,
            inference_secs,
            paths_agree: same_predictions(&led, &ind),
            mean_queries: q,
        });
    }
    let summary = metric_names(cfg.task())
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let vals: Vec<f64> = reps.iter().map(|r| r.metrics[i]).collect();
            let (mean, std) = mean_std(&vals);
            MetricSummary { name, mean, std }
        })
        .collect();
    let k = reps.len() as f64;
    Ok(MetricsReport {
        dataset: cfg.name.clone(),
        model: cfg.train.model,
        protocol: cfg.train.protocol,
        protection: cfg.train.protection,
        train_rows: train.n_samples(),
        test_rows: test.n_samples(),
        mean_exchanges: reps.iter().map(|r| r.train_stats.exchanges as f64).sum::<f64>() / k,
        mean_bytes: reps.iter().map(|r| r.train_stats.bytes as f64).sum::<f64>() / k,
        std_undefined: reps.len() < 2,
        repetitions: reps,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct LdpSweepRow {
    /// Stay probability (bucket LDP) or epsilon (distance LDP).
    pub parameter: f64,
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
}

/// Utility of feature-gathering across privacy levels. The mechanism is
/// taken from `cfg.train.protection`; `None` means bucket LDP.
pub fn sweep_ldp(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Vec<LdpSweepRow>> {
    if grid.is_empty() {
        return Err(VflError::Config("empty sweep grid".into()));
    }
    if cfg.train.protocol != Protocol::FeatureGathering {
        return Err(VflError::Config("LDP sweeps run the feature-gathering protocol".into()));
    }
    let (train, test) = cfg.load_data()?;
    let primary = metric_names(cfg.task())[metric_names(cfg.task()).len() - 1];
    // grid points are independent sessions; collect keeps grid order
    grid.par_iter()
        .map(|&g| {
            let mut c = cfg.clone();
            c.train.protection = match cfg.train.protection {
                Protection::DistanceLdp { .. } => Protection::DistanceLdp { epsilon: g },
                _ => Protection::BucketLdp { stay_probability: g },
            };
            c.train.validate()?;
            let report = run_on_tables(&c, &train, &test)?;
            let m = report.metric(primary).expect("metric present");
            Ok(LdpSweepRow {
                parameter: g,
                metric: primary,
                mean: m.mean,
                std: m.std,
            })
        })
        .collect()
}

pub fn ldp_sweep_csv(rows: &[LdpSweepRow]) -> String {
    let mut out = String::from("parameter,metric,mean,std\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.parameter, r.metric, r.mean, r.std);
    }
    out
}

#[derive(Debug, Clone)]
pub struct KeySweepRow {
    pub key_bits: usize,
    pub bytes: u64,
    /// Training time without key generation.
    pub train_secs: f64,
    pub keygen_secs: f64,
    /// Bytes of the same run without encryption.
    pub plain_bytes: u64,
}

/// Label-scattering cost as the Paillier modulus grows. One training run
/// per key size (plus an unencrypted baseline each time).
pub fn sweep_keysize(cfg: &ExperimentConfig, key_bits: &[usize]) -> Result<Vec<KeySweepRow>> {
    if key_bits.is_empty() {
        return Err(VflError::Config("empty sweep grid".into()));
    }
    let (train, _) = cfg.load_data()?;
    let parts = cfg.partition(&train)?;
    let scale_bits = match cfg.train.protection {
        Protection::Paillier { scale_bits, .. } => scale_bits,
        _ => 40,
    };
    let mut rows = Vec::new();
    for &bits in key_bits {
        let mut plain = cfg.train_config_for(0);
        plain.protocol = Protocol::LabelScattering;
        plain.protection = Protection::None;
        let base = train_federated(&parts, &plain)?;
        let mut enc = plain.clone();
        enc.protection = Protection::Paillier {
            key_bits: bits,
            scale_bits,
        };
        let m = train_federated(&parts, &enc)?;
        rows.push(KeySweepRow {
            key_bits: bits,
            bytes: m.stats.bytes,
            train_secs: m.timings.train_secs,
            keygen_secs: m.timings.setup_secs,
            plain_bytes: base.stats.bytes,
        });
    }
    Ok(rows)
}

pub fn key_sweep_csv(rows: &[KeySweepRow]) -> String {
    let mut out = String::from("key_bits,bytes,train_secs,keygen_secs,plain_bytes\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            r.key_bits, r.bytes, r.train_secs, r.keygen_secs, r.plain_bytes
        );
    }
    out
}

/// Human-readable configuration echo for logs.
pub fn describe(cfg: &ExperimentConfig) -> String {
    let h = &cfg.train.hyper;
    format!(
        "dataset={} task={} model={} protocol={} protection={} trees={} depth={} lr={} lambda={} gamma={} feature_ratio={} sample_ratio={} buckets={} parties={} reps={} seed={}",
        cfg.name,
        task_str(cfg.task()),
        cfg.train.model,
        cfg.train.protocol,
        cfg.train.protection.kind_str(),
        h.tree_count,
        h.max_depth,
        h.learning_rate,
        h.lambda,
        h.gamma,
        h.feature_subsample_ratio,
        h.sample_subsample_ratio,
        cfg.train.bucket_count,
        cfg.party_count,
        cfg.repetitions,
        cfg.seed
    )
}
