// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Criteria that need the public
//! datasets report FAIL (blocked) when the prepared files are absent.
//!
//! Data is looked up in `$VFL_DATA_DIR` (default `<workspace>/data/prepared`);
//! raw downloads found in `$VFL_RAW_DIR/<name>` (default `<workspace>/data/raw`)
//! are prepared on the fly.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use vfl_core::config::KvConfig;
use vfl_core::dataset::{Column, TabularData};
use vfl_core::datasets::{prepare_dataset, raw_files, Preset};
use vfl_core::experiment::{run_on_tables, sweep_keysize, ExperimentConfig, MetricsReport};
use vfl_core::inference::{
    and_indicators, predict_indicator_batch, predict_task_led_batch, Aggregation, InferenceParty,
};
use vfl_core::privacy::ldp::{distance_ldp_map, DistanceTable};
use vfl_core::privacy::paillier_keygen;
use vfl_core::privacy::secret_sharing::{ss_mul, ss_reconstruct, ss_split, Dealer, Field};
use vfl_core::privacy::FixedPointCodec;
use vfl_core::reference::train_centralized;
use vfl_core::tree::{serialize_ensemble, ThresholdEntry, ThresholdTable};
use vfl_core::{
    train_federated, Ensemble, Hyperparams, ModelKind, PartyId, Protection, Protocol, SplitPointer, TaskKind,
    TrainConfig, TreeNode,
};

// Tolerances and limits.
const LEAF_RTOL: f64 = 1e-9;
const C1_BUDGET: Duration = Duration::from_secs(120);
const C2_BUDGET: Duration = Duration::from_secs(15 * 60);
const C6_BUDGET: Duration = Duration::from_secs(10 * 60);
const XGB_ADULT_ACC: (f64, f64) = (0.844, 0.01);
const XGB_ADULT_AUC: (f64, f64) = (0.895, 0.01);
const XGB_CREDIT_AUC: (f64, f64) = (0.823, 0.02);
const XGB_ABALONE_MSE: (f64, f64) = (4.18, 0.35);
const XGB_BLOG_MSE: (f64, f64) = (544.0, 15.0);
const OTHER_ROW_ABS_SLACK: f64 = 0.02;
const ADULT_XGB_RATIO: (f64, f64) = (2.5, 0.5);
const LDP_GRID: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
const DLDP_DRAWS: usize = 100_000;
const DLDP_EPSILONS: [f64; 3] = [0.5, 2.0, 8.0];
const DLDP_BUCKETS: usize = 50;
const SIGMAS: f64 = 3.0;
const KEY_BYTES_RATIO: (f64, f64) = (2.0, 0.1);
const KEY_TIME_RATIO_MIN: f64 = 2.0;
const TRIALS: usize = 1000;
const CHI_LEVEL: f64 = 0.01;
const RANDOM_ENSEMBLES: usize = 1000;

/// Published (mean, std) per (model, metric, dataset) for feature-gathering
/// and label-scattering.
fn published(model: ModelKind, dataset: Preset, metric: &str) -> Option<[(f64, f64); 2]> {
    use ModelKind::*;
    use Preset::*;
    Some(match (model, dataset, metric) {
        (RandomForest, Abalone, "mse") => [(3.866, 0.105), (3.891, 0.095)],
        (RandomForest, Blog, "mse") => [(576.599, 40.508), (574.698, 32.156)],
        (RandomForest, Adult, "accuracy") => [(0.790, 0.064), (0.823, 0.020)],
        (RandomForest, Adult, "auc") => [(0.836, 0.039), (0.838, 0.027)],
        (RandomForest, Credit, "accuracy") => [(0.932, 0.0), (0.932, 0.0)],
        (RandomForest, Credit, "auc") => [(0.583, 0.039), (0.566, 0.033)],
        (Gbdt, Abalone, "mse") => [(4.374, 0.186), (4.342, 0.122)],
        (Gbdt, Blog, "mse") => [(552.942, 1.637), (552.518, 1.959)],
        (Gbdt, Adult, "accuracy") => [(0.840, 0.001), (0.840, 0.001)],
        (Gbdt, Adult, "auc") => [(0.895, 0.0), (0.895, 0.0)],
        (Gbdt, Credit, "accuracy") => [(0.935, 0.0), (0.935, 0.0)],
        (Gbdt, Credit, "auc") => [(0.812, 0.0), (0.812, 0.0)],
        _ => return None,
    })
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: true,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: false,
        detail: detail.into(),
    }
}

fn workspace_root() -> PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).expect("workspace root").to_path_buf()
}

/// Prepared (train, test) tables, or why they are unavailable.
fn locate(preset: Preset) -> Result<(TabularData, TabularData), String> {
    let data_dir = std::env::var_os("VFL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/prepared"));
    let raw_root = std::env::var_os("VFL_RAW_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/raw"));
    let dir = preset.prepared_dir(&data_dir);
    if !dir.join("train.csv").exists() {
        let raw = raw_root.join(preset.name());
        if !raw.exists() {
            return Err(format!(
                "{preset}: no prepared data in {} and no raw files {:?} in {}",
                dir.display(),
                raw_files(preset),
                raw.display()
            ));
        }
        prepare_dataset(preset, &raw, &data_dir, 0).map_err(|e| format!("{preset}: preparation failed: {e}"))?;
    }
    let load = |f: &str| vfl_core::datasets::load_prepared(&dir.join(f)).map_err(|e| format!("{preset}: {e}"));
    Ok((load("train.csv")?, load("test.csv")?))
}

struct Data {
    tables: BTreeMap<Preset, (TabularData, TabularData)>,
    missing: Vec<String>,
}

impl Data {
    fn blocked(&self, needed: &[Preset]) -> Option<String> {
        let miss: Vec<&str> = needed
            .iter()
            .filter(|p| !self.tables.contains_key(p))
            .map(|p| p.name())
            .collect();
        (!miss.is_empty()).then(|| format!("blocked: dataset(s) {} unavailable", miss.join(", ")))
    }
}

fn preset_config(preset: Preset, model: ModelKind, protocol: Protocol, reps: usize) -> ExperimentConfig {
    let mut kv = KvConfig::default();
    kv.set("dataset", preset.name());
    kv.set("model", model.as_str());
    kv.set("protocol", protocol.as_str());
    kv.set("repetitions", reps.to_string());
    ExperimentConfig::from_kv(&kv).expect("preset config")
}

// ---------------------------------------------------------------- helpers

fn same_tree(a: &TreeNode, b: &TreeNode) -> bool {
    match (a, b) {
        (TreeNode::Leaf { value: x }, TreeNode::Leaf { value: y }) => {
            x == y || (x - y).abs() <= LEAF_RTOL * x.abs().max(y.abs())
        }
        (
            TreeNode::Internal { split: s1, left: l1, right: r1 },
            TreeNode::Internal { split: s2, left: l2, right: r2 },
        ) => s1 == s2 && same_tree(l1, l2) && same_tree(r1, r2),
        _ => false,
    }
}

fn same_ensemble(a: &Ensemble, b: &Ensemble) -> bool {
    a.trees.len() == b.trees.len() && a.trees.iter().zip(&b.trees).all(|(x, y)| same_tree(x, y))
}

fn random_instance(seed: u64, n: usize) -> (Vec<TabularData>, TaskKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = if seed % 2 == 0 {
        TaskKind::Regression
    } else {
        TaskKind::Classification { classes: 2 }
    };
    let parties = 2 + (seed % 3) as usize;
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut signal = vec![0.0; n];
    let mut cols_per_party = Vec::new();
    for p in 0..parties {
        let k = rng.gen_range(1..=3);
        let cols: Vec<Column> = (0..k)
            .map(|f| {
                let v: Vec<f64> = (0..n).map(|_| (rng.gen_range(0.0..20.0f64)).round() / 2.0).collect();
                let w = rng.gen_range(-1.0..1.0);
                for (s, x) in signal.iter_mut().zip(&v) {
                    *s += w * x;
                }
                Column::numeric(format!("p{p}f{f}"), v)
            })
            .collect();
        cols_per_party.push(cols);
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let labels: Vec<f64> = signal
        .iter()
        .map(|s| match task {
            TaskKind::Regression => s + rng.gen_range(-1.0..1.0),
            _ => ((s - mean + rng.gen_range(-2.0..2.0)) > 0.0) as u8 as f64,
        })
        .collect();
    let parts = cols_per_party
        .into_iter()
        .enumerate()
        .map(|(i, c)| TabularData::new(ids.clone(), c, (i == 0).then(|| labels.clone())).unwrap())
        .collect();
    (parts, task)
}

// --------------------------------------------------------------- criteria

fn c1_equivalence(data: &Data) -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for seed in 0..100u64 {
        let (parts, task) = random_instance(seed, 50);
        let mut c = TrainConfig::new(ModelKind::XgBoost, task, Protocol::FeatureGathering);
        c.bucket_count = 8;
        c.hyper = Hyperparams {
            tree_count: 3,
            max_depth: 3,
            learning_rate: 0.3,
            lambda: 0.1,
            seed,
            ..Hyperparams::default()
        };
        let (reference, _) = train_centralized(&parts, &c).unwrap();
        let fg = train_federated(&parts, &c).unwrap();
        c.protocol = Protocol::LabelScattering;
        let ls = train_federated(&parts, &c).unwrap();
        if !same_ensemble(&fg.ensemble, &reference) || !same_ensemble(&ls.ensemble, &reference) {
            ok = false;
            notes.push(format!("instance {seed} differs"));
        }
    }
    notes.push(format!("100 random instances {}", if ok { "identical" } else { "NOT identical" }));
    match data.tables.get(&Preset::Abalone) {
        Some((train, _)) => {
            let cfg = preset_config(Preset::Abalone, ModelKind::XgBoost, Protocol::FeatureGathering, 1);
            let parts = cfg.partition(train).unwrap();
            let mut c = cfg.train_config_for(0);
            let (reference, _) = train_centralized(&parts, &c).unwrap();
            let fg = train_federated(&parts, &c).unwrap();
            c.protocol = Protocol::LabelScattering;
            let ls = train_federated(&parts, &c).unwrap();
            let same = same_ensemble(&fg.ensemble, &reference) && same_ensemble(&ls.ensemble, &reference);
            ok &= same;
            notes.push(format!("abalone {}", if same { "identical" } else { "NOT identical" }));
        }
        None => {
            ok = false;
            notes.push(data.blocked(&[Preset::Abalone]).unwrap());
        }
    }
    let elapsed = start.elapsed();
    if elapsed > C1_BUDGET {
        ok = false;
    }
    notes.push(format!("{:.1}s (budget {}s)", elapsed.as_secs_f64(), C1_BUDGET.as_secs()));
    Outcome {
        pass: ok,
        detail: notes.join("; "),
    }
}

fn within(v: f64, (target, tol): (f64, f64)) -> bool {
    (v - target).abs() <= tol
}

fn c2_utility(data: &Data, reports: &BTreeMap<(Preset, ModelKind), MetricsReport>, elapsed: Duration) -> Outcome {
    if let Some(b) = data.blocked(&Preset::ALL) {
        return fail(b);
    }
    let mut misses = Vec::new();
    let mut checked = 0;
    let mut check = |label: String, v: f64, band: (f64, f64)| {
        checked += 1;
        if !within(v, band) {
            misses.push(format!("{label} = {v:.4} outside {:.4} ± {:.4}", band.0, band.1));
        }
    };
    let m = |p: Preset, k: ModelKind, name: &str| reports[&(p, k)].metric(name).unwrap().mean;
    check("xgb adult accuracy".into(), m(Preset::Adult, ModelKind::XgBoost, "accuracy"), XGB_ADULT_ACC);
    check("xgb adult auc".into(), m(Preset::Adult, ModelKind::XgBoost, "auc"), XGB_ADULT_AUC);
    check("xgb credit auc".into(), m(Preset::Credit, ModelKind::XgBoost, "auc"), XGB_CREDIT_AUC);
    check("xgb abalone mse".into(), m(Preset::Abalone, ModelKind::XgBoost, "mse"), XGB_ABALONE_MSE);
    check("xgb blog mse".into(), m(Preset::Blog, ModelKind::XgBoost, "mse"), XGB_BLOG_MSE);
    for model in [ModelKind::Gbdt, ModelKind::RandomForest] {
        for preset in Preset::ALL {
            let report = &reports[&(preset, model)];
            for s in &report.summary {
                let Some(cells) = published(model, preset, s.name) else { continue };
                // identity protection: both protocols train the same model
                for (cell, proto) in cells.iter().zip(["fg", "ls"]) {
                    let band = (cell.0, 2.0 * cell.1 + OTHER_ROW_ABS_SLACK);
                    check(format!("{model} {preset} {} ({proto})", s.name), s.mean, band);
                }
            }
        }
    }
    let over = elapsed > C2_BUDGET;
    let detail = format!(
        "{}/{checked} cells in band; {:.0}s (budget {}s){}",
        checked - misses.len(),
        elapsed.as_secs_f64(),
        C2_BUDGET.as_secs(),
        if misses.is_empty() { String::new() } else { format!("; {}", misses.join("; ")) }
    );
    if misses.is_empty() && !over {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn c3_exchange_order(data: &Data) -> Outcome {
    if let Some(b) = data.blocked(&Preset::ALL) {
        return fail(b);
    }
    let mut ok = true;
    let mut notes = Vec::new();
    for preset in Preset::ALL {
        let (train, _) = &data.tables[&preset];
        for model in [ModelKind::RandomForest, ModelKind::Gbdt, ModelKind::XgBoost] {
            let cfg = preset_config(preset, model, Protocol::FeatureGathering, 1);
            let parts = cfg.partition(train).unwrap();
            let mut c = cfg.train_config_for(0);
            let fg = train_federated(&parts, &c).unwrap().stats.exchanges;
            c.protocol = Protocol::LabelScattering;
            let ls = train_federated(&parts, &c).unwrap().stats.exchanges;
            if ls <= fg {
                ok = false;
            }
            let mut note = format!("{model}/{preset} {fg}/{ls}");
            if model == ModelKind::XgBoost && preset == Preset::Adult {
                let r = ls as f64 / fg as f64;
                ok &= within(r, ADULT_XGB_RATIO);
                note += &format!(" ratio {r:.2}");
            }
            notes.push(note);
        }
    }
    Outcome {
        pass: ok,
        detail: format!("fg/ls exchanges: {}", notes.join(", ")),
    }
}

fn c4_ldp_tradeoff(data: &Data) -> Outcome {
    if let Some(b) = data.blocked(&[Preset::Adult]) {
        return fail(b);
    }
    let (train, test) = &data.tables[&Preset::Adult];
    let base_cfg = preset_config(Preset::Adult, ModelKind::XgBoost, Protocol::FeatureGathering, 5);
    let base = run_on_tables(&base_cfg, train, test).unwrap();
    let b = base.metric("auc").unwrap().clone();
    let mut points = Vec::new();
    for p in LDP_GRID {
        let mut c = base_cfg.clone();
        c.train.protection = Protection::BucketLdp { stay_probability: p };
        let r = run_on_tables(&c, train, test).unwrap();
        points.push((p, r.metric("auc").unwrap().clone()));
    }
    let top = &points.last().unwrap().1;
    let low = &points[0].1;
    let near = (top.mean - b.mean).abs() <= b.std.max(top.std);
    let worse = top.mean - low.mean > low.std.max(top.std);
    let curve: Vec<String> = points.iter().map(|(p, m)| format!("{p}:{:.4}±{:.4}", m.mean, m.std)).collect();
    let detail = format!("baseline auc {:.4}±{:.4}; {}", b.mean, b.std, curve.join(" "));
    if near && worse {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn c5_distance_law() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    let mut checked = 0;
    for (k, &eps) in DLDP_EPSILONS.iter().enumerate() {
        let table = DistanceTable::new(DLDP_BUCKETS, eps).unwrap();
        for a in [0u16, 25, 49] {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * k as u64 + a as u64);
            let mut counts = vec![0usize; DLDP_BUCKETS];
            for i in 0..DLDP_DRAWS {
                // alternate the two sampling entry points
                let b = if i % 2 == 0 {
                    table.sample(a, &mut rng).unwrap()
                } else {
                    distance_ldp_map(a, DLDP_BUCKETS, eps, &mut rng).unwrap()
                };
                counts[b as usize] += 1;
            }
            // exact law: Pr[b | a] proportional to exp(-eps |a - b| / 2)
            let w: Vec<f64> = (0..DLDP_BUCKETS)
                .map(|b| (-eps * (a as f64 - b as f64).abs() / 2.0).exp())
                .collect();
            let z: f64 = w.iter().sum();
            for (b, &c) in counts.iter().enumerate() {
                let p = w[b] / z;
                let sigma = (p * (1.0 - p) / DLDP_DRAWS as f64).sqrt();
                let dev = (c as f64 / DLDP_DRAWS as f64 - p).abs();
                checked += 1;
                if sigma == 0.0 {
                    if c != 0 {
                        bad += 1;
                    }
                    continue;
                }
                let z = dev / sigma;
                if z > SIGMAS {
                    bad += 1;
                }
                worst = worst.max(z);
            }
        }
    }
    let detail = format!(
        "{bad}/{checked} bucket frequencies beyond {SIGMAS}σ (max {worst:.2}σ) over ε ∈ {DLDP_EPSILONS:?}, inputs 0/25/49, {DLDP_DRAWS} draws each"
    );
    if bad == 0 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn c6_key_scaling() -> Outcome {
    let start = Instant::now();
    let kv = KvConfig::parse(
        "dataset = synthetic\ntask = classification\nsynthetic.samples = 250\nsynthetic.features = 4\nmodel = xgboost\nprotocol = ls\nhyper.tree_count = 1\nhyper.max_depth = 2\nbucket_count = 16\nrepetitions = 1\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::from_kv(&kv).unwrap();
    let rows = sweep_keysize(&cfg, &[1024, 2048]).unwrap();
    let bytes = rows[1].bytes as f64 / rows[0].bytes as f64;
    let secs = rows[1].train_secs / rows[0].train_secs;
    let elapsed = start.elapsed();
    let ok = within(bytes, KEY_BYTES_RATIO) && secs > KEY_TIME_RATIO_MIN && elapsed <= C6_BUDGET;
    let detail = format!(
        "bytes {} -> {} (ratio {bytes:.3}), train {:.2}s -> {:.2}s (ratio {secs:.2}), plaintext baseline {} bytes; {:.0}s",
        rows[0].bytes,
        rows[1].bytes,
        rows[0].train_secs,
        rows[1].train_secs,
        rows[0].plain_bytes,
        elapsed.as_secs_f64()
    );
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn random_below(n: &BigUint, rng: &mut ChaCha8Rng) -> BigUint {
    let words = (n.bits() as usize).div_ceil(32) + 2;
    let digits: Vec<u32> = (0..words).map(|_| rng.gen()).collect();
    BigUint::from_slice(&digits) % n
}

fn chi_square(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

fn c7_crypto_suites() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for bits in [1024usize, 2048] {
        let kp = paillier_keygen(bits, bits as u64).unwrap();
        let pk = &kp.public;
        let n = pk.n();
        let codec = FixedPointCodec::new(40).unwrap();
        let mut failures = 0;
        for _ in 0..TRIALS {
            let a = random_below(n, &mut rng);
            let b = random_below(n, &mut rng);
            let k = random_below(n, &mut rng);
            let ca = kp.private.encrypt(&a, &mut rng).unwrap();
            let cb = kp.private.encrypt(&b, &mut rng).unwrap();
            let sum = kp.private.decrypt(&pk.add(&ca, &cb).unwrap()).unwrap();
            let prod = kp.private.decrypt(&pk.scalar_mul(&ca, &k).unwrap()).unwrap();
            let wire = pk.cipher_from_bytes(&pk.cipher_to_bytes(&cb).unwrap()).unwrap();
            let x: f64 = rng.gen_range(-1e6..1e6);
            let y: f64 = rng.gen_range(-1e6..1e6);
            let cx = pk.encrypt(&codec.encode_plain(x, n).unwrap(), &mut rng).unwrap();
            let cy = kp.private.encrypt(&codec.encode_plain(y, n).unwrap(), &mut rng).unwrap();
            let fx = codec
                .decode_plain(&kp.private.decrypt(&pk.add(&cx, &cy).unwrap()).unwrap(), n)
                .unwrap();
            let good = sum == (&a + &b) % n
                && prod == (&a * &k) % n
                && kp.private.decrypt(&wire).unwrap() == b
                && (fx - (x + y)).abs() <= 2.0 * codec.resolution();
            if !good {
                failures += 1;
            }
        }
        ok &= failures == 0;
        notes.push(format!("paillier-{bits}: {failures}/{TRIALS} failures"));
    }

    let field = Field::default();
    let q = field.modulus();
    let mut recon_fail = 0;
    let mut mul_fail = 0;
    let mut dealer = Dealer::new(field, 3, ChaCha8Rng::seed_from_u64(5));
    dealer.issue(TRIALS).unwrap();
    for _ in 0..TRIALS {
        let s = rng.gen_range(0..q);
        let t = rng.gen_range(0..q);
        let frames = ss_split(s, 3, &field, &mut rng).unwrap();
        if ss_reconstruct(&frames, &field) != s {
            recon_fail += 1;
        }
        let other = ss_split(t, 3, &field, &mut rng).unwrap();
        let z = ss_mul(&frames, &other, &mut dealer).unwrap();
        if ss_reconstruct(&z, &field) != field.mul(s, t) {
            mul_fail += 1;
        }
    }
    ok &= recon_fail == 0 && mul_fail == 0;
    notes.push(format!("reconstruction {recon_fail}/{TRIALS} failures, ss_mul {mul_fail}/{TRIALS} failures"));

    // any n-1 frames of a fixed secret must look uniform
    let bins = 20;
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(1.0 - CHI_LEVEL);
    let mut stats = Vec::new();
    for left_out in 0..3 {
        let mut counts = vec![0usize; bins];
        for _ in 0..TRIALS {
            let frames = ss_split(42, 3, &field, &mut rng).unwrap();
            for (i, f) in frames.iter().enumerate() {
                if i != left_out {
                    counts[((*f as u128 * bins as u128) / q as u128) as usize] += 1;
                }
            }
        }
        let x2 = chi_square(&counts);
        ok &= x2 <= critical;
        stats.push(format!("{x2:.1}"));
    }
    notes.push(format!(
        "leave-one-out chi-square [{}] vs critical {critical:.1}",
        stats.join(", ")
    ));
    Outcome {
        pass: ok,
        detail: notes.join("; "),
    }
}

fn random_tree(rng: &mut ChaCha8Rng, depth: usize, features: &[usize], classes: Option<u32>) -> TreeNode {
    if depth == 0 || rng.gen_bool(0.25) {
        return TreeNode::leaf(match classes {
            Some(k) => rng.gen_range(0..k) as f64,
            None => rng.gen_range(-3.0..3.0),
        });
    }
    let party = rng.gen_range(0..features.len());
    let split = SplitPointer {
        party: PartyId(party as u16),
        feature_ordinal: rng.gen_range(0..features[party]) as u32,
        bucket_ordinal: rng.gen_range(0..6),
    };
    TreeNode::internal(
        split,
        random_tree(rng, depth - 1, features, classes),
        random_tree(rng, depth - 1, features, classes),
    )
}

fn c8_inference(data: &Data, reports: &BTreeMap<(Preset, ModelKind), MetricsReport>) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // worked example: root on data feature, left subtree on data, right on task
    let sp = |p: u16, b: u16| SplitPointer {
        party: PartyId(p),
        feature_ordinal: 0,
        bucket_ordinal: b,
    };
    let tree = TreeNode::internal(
        sp(1, 0),
        TreeNode::internal(sp(1, 1), TreeNode::leaf(1.0), TreeNode::leaf(2.0)),
        TreeNode::internal(sp(0, 0), TreeNode::leaf(3.0), TreeNode::leaf(4.0)),
    );
    let view = |p: u16, v: f64, th: &[(u16, f64)]| {
        let data = TabularData::new(vec!["0".into()], vec![Column::numeric(format!("x{p}"), vec![v])], None).unwrap();
        let mut t = ThresholdTable::new(PartyId(p));
        for &(b, x) in th {
            t.entries.insert(
                (0, b),
                ThresholdEntry {
                    feature_name: format!("x{p}"),
                    threshold: x,
                },
            );
        }
        InferenceParty::new(PartyId(p), data, t).unwrap()
    };
    let task = view(0, 0.2, &[(0, 0.5)]);
    let dp = view(1, 0.9, &[(0, 0.5), (1, 0.1)]);
    let vd = dp.leaf_indicator(&tree, 0).unwrap();
    let vt = task.leaf_indicator(&tree, 0).unwrap();
    let anded: Vec<u8> = vd.iter().zip(&vt).map(|(a, b)| (*a && *b) as u8).collect();
    let hit = and_indicators(&[vd, vt]).unwrap();
    let example = anded == [0, 0, 1, 0] && hit == 2;
    ok &= example;
    notes.push(format!("worked example AND = {anded:?}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let key = paillier_keygen(512, 8).unwrap();
    let mut disagree = 0;
    for e in 0..RANDOM_ENSEMBLES {
        let parties = rng.gen_range(2..=4);
        let features: Vec<usize> = (0..parties).map(|_| rng.gen_range(1..=3)).collect();
        let n = 12;
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let (kind, task, classes) = match e % 3 {
            0 => (ModelKind::XgBoost, TaskKind::Classification { classes: 2 }, None),
            1 => (ModelKind::Gbdt, TaskKind::Regression, None),
            _ => (ModelKind::RandomForest, TaskKind::Classification { classes: 3 }, Some(3)),
        };
        let mut ens = Ensemble::new(kind, task, 0.3);
        for _ in 0..rng.gen_range(1..=4) {
            ens.trees.push(random_tree(&mut rng, 4, &features, classes));
        }
        let views: Vec<InferenceParty> = features
            .iter()
            .enumerate()
            .map(|(p, &k)| {
                let cols = (0..k)
                    .map(|f| Column::numeric(format!("p{p}f{f}"), (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()))
                    .collect();
                let mut t = ThresholdTable::new(PartyId(p as u16));
                for f in 0..k {
                    for b in 0..6u16 {
                        t.entries.insert(
                            (f as u32, b),
                            ThresholdEntry {
                                feature_name: format!("p{p}f{f}"),
                                threshold: rng.gen_range(0.0..1.0),
                            },
                        );
                    }
                }
                let labels = (p == 0).then(|| vec![0.0; n]);
                InferenceParty::new(PartyId(p as u16), TabularData::new(ids.clone(), cols, labels).unwrap(), t).unwrap()
            })
            .collect();
        let samples: Vec<usize> = (0..n).collect();
        let a = predict_task_led_batch(&ens, &views, &samples).unwrap();
        let agg = if e % 50 == 0 {
            Aggregation::PaillierMasked(&key)
        } else {
            Aggregation::Plaintext
        };
        let b = predict_indicator_batch(&ens, &views, &samples, agg).unwrap();
        if a.predictions != b.predictions {
            disagree += 1;
        }
    }
    ok &= disagree == 0;
    notes.push(format!("{disagree}/{RANDOM_ENSEMBLES} random ensembles disagree"));

    match data.blocked(&Preset::ALL) {
        Some(b) => {
            ok = false;
            notes.push(b);
        }
        None => {
            let bad: Vec<String> = reports
                .iter()
                .filter(|(_, r)| !r.paths_agree())
                .map(|((p, m), _)| format!("{m}/{p}"))
                .collect();
            ok &= bad.is_empty();
            notes.push(if bad.is_empty() {
                "every test sample of all four datasets agrees".into()
            } else {
                format!("disagreement on {}", bad.join(", "))
            });
        }
    }
    Outcome {
        pass: ok,
        detail: notes.join("; "),
    }
}

fn c9_determinism(data: &Data) -> Outcome {
    let mut runs: Vec<(String, Vec<TabularData>, TrainConfig)> = Vec::new();
    let (parts, task) = random_instance(3, 60);
    let base = |model, protocol| {
        let mut c = TrainConfig::new(model, task, protocol);
        c.bucket_count = 10;
        c.hyper = Hyperparams {
            tree_count: 3,
            max_depth: 3,
            feature_subsample_ratio: 0.8,
            seed: 17,
            ..Hyperparams::default()
        };
        c
    };
    let protections = [
        (Protocol::FeatureGathering, Protection::None),
        (Protocol::FeatureGathering, Protection::BucketLdp { stay_probability: 0.7 }),
        (Protocol::FeatureGathering, Protection::DistanceLdp { epsilon: 1.0 }),
        (Protocol::LabelScattering, Protection::None),
        (Protocol::LabelScattering, Protection::SecretSharing { prime_bits: 61 }),
        (Protocol::LabelScattering, Protection::Paillier { key_bits: 512, scale_bits: 40 }),
    ];
    for (proto, prot) in protections {
        for model in [ModelKind::XgBoost, ModelKind::RandomForest] {
            let mut c = base(model, proto);
            c.protection = prot;
            runs.push((format!("{model}/{proto}/{}", prot.kind_str()), parts.clone(), c));
        }
    }
    if let Some((train, _)) = data.tables.get(&Preset::Adult) {
        let cfg = preset_config(Preset::Adult, ModelKind::XgBoost, Protocol::LabelScattering, 1);
        runs.push(("xgboost/adult".into(), cfg.partition(train).unwrap(), cfg.train_config_for(0)));
    }
    let mut diverged = Vec::new();
    for (name, parts, c) in &runs {
        let a = train_federated(parts, c).unwrap();
        let b = train_federated(parts, c).unwrap();
        let docs = |m: &vfl_core::TrainedModel| {
            let mut s = serialize_ensemble(&m.ensemble);
            for t in &m.thresholds {
                s += &t.to_json();
            }
            s
        };
        if a.stats.to_csv() != b.stats.to_csv() || docs(&a) != docs(&b) || a.transcript_digest != b.transcript_digest {
            diverged.push(name.clone());
        }
    }
    let detail = format!("{} replayed configurations, {} diverged {:?}", runs.len(), diverged.len(), diverged);
    if diverged.is_empty() {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn main() {
    let mut data = Data {
        tables: BTreeMap::new(),
        missing: Vec::new(),
    };
    for p in Preset::ALL {
        match locate(p) {
            Ok(t) => {
                data.tables.insert(p, t);
            }
            Err(e) => data.missing.push(e),
        }
    }
    for m in &data.missing {
        println!("note: {m}");
    }

    // dataset runs shared by the utility and inference criteria
    let start = Instant::now();
    let mut reports = BTreeMap::new();
    if data.blocked(&Preset::ALL).is_none() {
        for preset in Preset::ALL {
            let (train, test) = &data.tables[&preset];
            for model in [ModelKind::XgBoost, ModelKind::Gbdt, ModelKind::RandomForest] {
                let cfg = preset_config(preset, model, Protocol::FeatureGathering, 5);
                reports.insert((preset, model), run_on_tables(&cfg, train, test).unwrap());
            }
        }
    }
    let utility_time = start.elapsed();

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("protocol/oracle equivalence", Box::new(|| c1_equivalence(&data))),
        ("utility reproduction", Box::new(|| c2_utility(&data, &reports, utility_time))),
        ("exchange ordering", Box::new(|| c3_exchange_order(&data))),
        ("LDP trade-off", Box::new(|| c4_ldp_tradeoff(&data))),
        ("distance-LDP law", Box::new(c5_distance_law)),
        ("Paillier key-size scaling", Box::new(c6_key_scaling)),
        ("crypto and sharing property suites", Box::new(c7_crypto_suites)),
        ("inference agreement", Box::new(|| c8_inference(&data, &reports))),
        ("determinism", Box::new(|| c9_determinism(&data))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {}: {} ({:.1}s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
