// SPDX-License-Identifier: Apache-2.0

//! `vfl`: prepare datasets, train, predict, benchmark and sweep.
//!
//! Every verb reads a `key = value` config file; `--set key=value` and the
//! dedicated flags override file values, in that order. Outputs are files
//! under `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vfl_core::config::KvConfig;
use vfl_core::datasets::{prepare_dataset, Preset};
use vfl_core::experiment::{
    describe, inference_parties, key_sweep_csv, ldp_sweep_csv, run_experiment, sweep_keysize, sweep_ldp,
    ExperimentConfig, InferenceMode,
};
use vfl_core::inference::{predict_indicator_batch, predict_task_led_batch, predictions_csv, Aggregation};
use vfl_core::privacy::paillier_keygen;
use vfl_core::tree::{deserialize_ensemble, serialize_ensemble, ThresholdTable};
use vfl_core::{train_federated, Protocol, VflError};

#[derive(Parser, Debug)]
#[command(name = "vfl", version, about = "Vertical federated tree models")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Convert raw dataset downloads into prepared train/test CSVs.
    Prepare(Common),
    /// Train one model and write its documents.
    Train(Common),
    /// Run a trained model over prepared rows.
    Predict(Common),
    /// Repeated train/evaluate runs with a metrics report.
    Bench(Common),
    /// LDP or key-size sweep.
    Sweep(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["fg", "ls"])]
    protocol: Option<String>,
    #[arg(long, value_parser = ["rf", "gbdt", "xgboost"])]
    model: Option<String>,
}

impl Common {
    fn load(&self) -> Result<KvConfig, VflError> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::default(),
        };
        for o in &self.overrides {
            kv.set_override(o)?;
        }
        if let Some(s) = self.seed {
            kv.set("seed", s.to_string());
        }
        if let Some(p) = &self.protocol {
            kv.set("protocol", p.as_str());
        }
        if let Some(m) = &self.model {
            kv.set("model", m.as_str());
        }
        Ok(kv)
    }
}

fn write(path: &Path, contents: &str) -> Result<(), VflError> {
    std::fs::write(path, contents).map_err(|e| VflError::Config(format!("cannot write {}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, VflError> {
    std::fs::read_to_string(path).map_err(|e| VflError::Config(format!("cannot read {}: {e}", path.display())))
}

fn out_dir(out: &Path) -> Result<(), VflError> {
    std::fs::create_dir_all(out).map_err(|e| VflError::Config(format!("cannot create {}: {e}", out.display())))
}

fn thresholds_path(dir: &Path, party: usize) -> PathBuf {
    dir.join(format!("party{party}_thresholds.json"))
}

fn prepare(kv: &KvConfig, out: &Path) -> Result<String, VflError> {
    let raw_root = PathBuf::from(kv.get_or("raw_dir", "data/raw"));
    let seed = kv.parsed_or("split_seed", 0u64)?;
    let wanted: Vec<Preset> = match kv.get("datasets") {
        Some(list) => list.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?,
        None => Preset::ALL
            .into_iter()
            .filter(|p| raw_root.join(p.name()).exists())
            .collect(),
    };
    if wanted.is_empty() {
        return Err(VflError::Config(format!(
            "no raw datasets under {}; run scripts/fetch_datasets.sh first",
            raw_root.display()
        )));
    }
    let mut summary = String::from("dataset,train_rows,test_rows,features\n");
    for p in wanted {
        let info = prepare_dataset(p, &raw_root.join(p.name()), out, seed)?;
        summary += &format!("{},{},{},{}\n", p, info.train_rows, info.test_rows, info.features);
    }
    write(&out.join("prepare_summary.csv"), &summary)?;
    Ok(summary)
}

fn train(kv: &KvConfig, out: &Path) -> Result<String, VflError> {
    let cfg = ExperimentConfig::from_kv(kv)?;
    let (train, _) = cfg.load_data()?;
    let parts = cfg.partition(&train)?;
    let model = train_federated(&parts, &cfg.train_config_for(0))?;
    write(&out.join("model.json"), &serialize_ensemble(&model.ensemble))?;
    for (i, t) in model.thresholds.iter().enumerate() {
        write(&thresholds_path(out, i), &t.to_json())?;
    }
    write(&out.join("train_stats.csv"), &model.stats.to_csv())?;
    if !model.train_raw.is_empty() {
        let mut s = String::from("sample_id,raw_score\n");
        for (id, r) in train.sample_ids().iter().zip(&model.train_raw) {
            s += &format!("{id},{r}\n");
        }
        write(&out.join("train_scores.csv"), &s)?;
    }
    write(&out.join("config.txt"), &kv.to_text())?;
    Ok(format!(
        "{}\ntrained {} trees: {} exchanges, {} bytes, {:.3}s\n",
        describe(&cfg),
        model.ensemble.trees.len(),
        model.stats.exchanges,
        model.stats.bytes,
        model.timings.train_secs
    ))
}

fn predict(kv: &KvConfig, out: &Path) -> Result<String, VflError> {
    let cfg = ExperimentConfig::from_kv(kv)?;
    let model_dir = PathBuf::from(kv.get_or("model_dir", &out.to_string_lossy()).to_string());
    let ensemble = deserialize_ensemble(&read(&model_dir.join("model.json"))?)?;
    let mut thresholds = Vec::new();
    while thresholds_path(&model_dir, thresholds.len()).exists() {
        let doc = read(&thresholds_path(&model_dir, thresholds.len()))?;
        thresholds.push(ThresholdTable::from_json(&doc)?);
    }
    let (train, test) = cfg.load_data()?;
    let rows = match kv.get_or("predict_on", "test") {
        "test" => test,
        "train" => train,
        other => return Err(VflError::Config(format!("predict_on must be train or test, got {other:?}"))),
    };
    let parts = cfg.partition(&rows)?;
    let parties = inference_parties(&parts, &thresholds)?;
    let samples: Vec<usize> = (0..rows.n_samples()).collect();
    let key = match cfg.inference {
        InferenceMode::Masked { key_bits } => Some(paillier_keygen(key_bits, cfg.seed)?),
        InferenceMode::Plaintext => None,
    };
    let batch = match kv.get_or("inference.path", "task_led") {
        "task_led" => predict_task_led_batch(&ensemble, &parties, &samples)?,
        "indicator" => {
            let agg = key.as_ref().map_or(Aggregation::Plaintext, Aggregation::PaillierMasked);
            predict_indicator_batch(&ensemble, &parties, &samples, agg)?
        }
        other => return Err(VflError::Config(format!("unknown inference.path {other:?}"))),
    };
    write(&out.join("predictions.csv"), &predictions_csv(rows.sample_ids(), &batch.predictions)?)?;
    write(&out.join("inference_stats.csv"), &batch.stats.to_csv())?;
    Ok(format!(
        "predicted {} samples: {} exchanges, {} bytes\n",
        samples.len(),
        batch.stats.exchanges,
        batch.stats.bytes
    ))
}

fn bench(kv: &KvConfig, out: &Path) -> Result<String, VflError> {
    let cfg = ExperimentConfig::from_kv(kv)?;
    let report = run_experiment(&cfg)?;
    write(&out.join("report.csv"), &report.to_csv())?;
    write(&out.join("report.txt"), &report.to_text())?;
    if let Some(r) = report.repetitions.first() {
        write(&out.join("train_stats.csv"), &r.train_stats.to_csv())?;
    }
    write(&out.join("config.txt"), &kv.to_text())?;
    Ok(report.to_text())
}

fn parse_grid<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, VflError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| VflError::Config(format!("bad sweep grid value {x:?}")))
        })
        .collect()
}

fn sweep(kv: &KvConfig, out: &Path) -> Result<String, VflError> {
    let mut kv = kv.clone();
    let kind = kv.get_or("sweep", "ldp").to_string();
    let csv = match kind.as_str() {
        "ldp" => {
            if kv.get("protection").is_none() {
                kv.set("protection", "bucket_ldp");
            }
            let cfg = ExperimentConfig::from_kv(&kv)?;
            let grid = parse_grid(kv.get_or("sweep.grid", "0.5,0.6,0.7,0.8,0.9,1.0"))?;
            ldp_sweep_csv(&sweep_ldp(&cfg, &grid)?)
        }
        "keysize" => {
            kv.set("protocol", Protocol::LabelScattering.as_str());
            kv.set("protection", "paillier");
            let cfg = ExperimentConfig::from_kv(&kv)?;
            let grid = parse_grid(kv.get_or("sweep.grid", "1024,2048,3072"))?;
            key_sweep_csv(&sweep_keysize(&cfg, &grid)?)
        }
        other => return Err(VflError::Config(format!("sweep must be ldp or keysize, got {other:?}"))),
    };
    write(&out.join(format!("sweep_{kind}.csv")), &csv)?;
    write(&out.join("config.txt"), &kv.to_text())?;
    Ok(csv)
}

fn execute(verb: &Verb) -> Result<String, VflError> {
    let (common, run): (&Common, fn(&KvConfig, &Path) -> Result<String, VflError>) = match verb {
        Verb::Prepare(c) => (c, prepare),
        Verb::Train(c) => (c, train),
        Verb::Predict(c) => (c, predict),
        Verb::Bench(c) => (c, bench),
        Verb::Sweep(c) => (c, sweep),
    };
    let kv = common.load()?;
    out_dir(&common.out)?;
    run(&kv, &common.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.verb) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
