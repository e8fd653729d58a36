// SPDX-License-Identifier: Apache-2.0

//! The four benchmark datasets: raw-file preparation, prepared-file
//! loading, and a synthetic stand-in for tests and micro-benchmarks.
//!
//! Prepared files are plain CSV with a header `id,<features...>,label`,
//! every feature numeric (categoricals one-hot encoded).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{load_csv, one_hot_encode, Column, TabularData};
use crate::error::{Result, VflError};
use crate::rng::derived;
use crate::tree::{Hyperparams, ModelKind, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Abalone,
    Blog,
    Adult,
    Credit,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Abalone, Preset::Blog, Preset::Adult, Preset::Credit];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Abalone => "abalone",
            Preset::Blog => "blog",
            Preset::Adult => "adult",
            Preset::Credit => "credit",
        }
    }

    pub fn task(self) -> TaskKind {
        match self {
            Preset::Abalone | Preset::Blog => TaskKind::Regression,
            Preset::Adult | Preset::Credit => TaskKind::Classification { classes: 2 },
        }
    }

    /// Tuned hyperparameters for each model on this dataset.
    pub fn hyperparams(self, model: ModelKind) -> Hyperparams {
        use ModelKind::*;
        use Preset::*;
        // (trees, depth, learning rate, feature subsample ratio)
        let (trees, depth, lr, ratio) = match (model, self) {
            (XgBoost, Abalone) => (14, 3, 0.19, 1.0),
            (XgBoost, Blog) => (15, 4, 0.17, 1.0),
            (XgBoost, Adult) => (10, 3, 0.56, 1.0),
            (XgBoost, Credit) => (6, 4, 0.35, 1.0),
            (Gbdt, Abalone) => (15, 3, 0.19, 1.0),
            (Gbdt, Blog) => (15, 4, 0.12, 1.0),
            (Gbdt, Adult) => (15, 4, 0.49, 1.0),
            (Gbdt, Credit) => (10, 4, 0.1, 1.0),
            (RandomForest, Abalone) => (10, 6, 1.0, 1.0),
            (RandomForest, Blog) => (13, 6, 1.0, 0.55),
            (RandomForest, Adult) => (10, 5, 1.0, 0.4),
            (RandomForest, Credit) => (10, 3, 1.0, 0.2),
        };
        Hyperparams {
            tree_count: trees,
            max_depth: depth,
            learning_rate: lr,
            lambda: 0.1,
            gamma: 0.0,
            feature_subsample_ratio: ratio,
            sample_subsample_ratio: 1.0,
            seed: 0,
        }
    }

    /// Whether the source ships a train/test split; otherwise 80/20.
    pub fn has_provided_split(self) -> bool {
        matches!(self, Preset::Blog | Preset::Adult)
    }

    pub fn prepared_dir(self, data_dir: &Path) -> PathBuf {
        data_dir.join(self.name())
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = VflError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| VflError::Config(format!("unknown dataset {s:?}")))
    }
}

fn read_rows(path: &Path, has_header: bool) -> Result<(Option<Vec<String>>, Vec<Vec<String>>)> {
    let file = std::fs::File::open(path).map_err(|e| VflError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut header = None;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| VflError::Parse {
            row: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        let fields: Vec<String> = rec.iter().map(str::to_owned).collect();
        if has_header && header.is_none() {
            header = Some(fields);
        } else if !(fields.len() == 1 && fields[0].is_empty()) {
            rows.push(fields);
        }
    }
    Ok((header, rows))
}

fn parse_num(s: &str, path: &Path, row: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| VflError::Parse {
        row,
        message: format!("{}: {s:?} is not a number", path.display()),
    })
}

/// Build a table from string rows: `numeric[j]` marks numeric columns, the
/// rest are one-hot encoded (categories in first-appearance order).
fn table_from_rows(names: &[String], rows: &[Vec<String>], numeric: &[bool], labels: Vec<f64>, path: &Path) -> Result<TabularData> {
    let mut columns = Vec::new();
    for (j, name) in names.iter().enumerate() {
        if numeric[j] {
            let v = rows
                .iter()
                .enumerate()
                .map(|(i, r)| parse_num(&r[j], path, i + 1))
                .collect::<Result<Vec<_>>>()?;
            columns.push(Column::numeric(name.clone(), v));
        } else {
            let v: Vec<String> = rows.iter().map(|r| r[j].clone()).collect();
            columns.extend(one_hot_encode(name, &v));
        }
    }
    let ids = (0..rows.len()).map(|i| i.to_string()).collect();
    TabularData::new(ids, columns, Some(labels))
}

fn check_width(rows: &[Vec<String>], width: usize, path: &Path) -> Result<()> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(VflError::Parse {
            row: i + 1,
            message: format!("{}: expected {width} fields, found {}", path.display(), r.len()),
        });
    }
    Ok(())
}

/// Raw files expected in `raw_dir` for each preset.
pub fn raw_files(preset: Preset) -> &'static [&'static str] {
    match preset {
        Preset::Abalone => &["abalone.data"],
        Preset::Blog => &["blogData_train.csv", "blogData_test-*.csv"],
        Preset::Adult => &["adult.data", "adult.test"],
        Preset::Credit => &["cs-training.csv"],
    }
}

const ADULT_COLUMNS: [(&str, bool); 14] = [
    ("age", true),
    ("workclass", false),
    ("fnlwgt", true),
    ("education", false),
    ("education_num", true),
    ("marital_status", false),
    ("occupation", false),
    ("relationship", false),
    ("race", false),
    ("sex", false),
    ("capital_gain", true),
    ("capital_loss", true),
    ("hours_per_week", true),
    ("native_country", false),
];

fn load_raw(preset: Preset, raw_dir: &Path) -> Result<(TabularData, Option<usize>)> {
    match preset {
        Preset::Abalone => {
            let path = raw_dir.join("abalone.data");
            let (_, rows) = read_rows(&path, false)?;
            check_width(&rows, 9, &path)?;
            let names: Vec<String> = [
                "sex", "length", "diameter", "height", "whole_weight", "shucked_weight", "viscera_weight", "shell_weight",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            let labels = rows.iter().enumerate().map(|(i, r)| parse_num(&r[8], &path, i + 1)).collect::<Result<_>>()?;
            let mut numeric = vec![true; 8];
            numeric[0] = false;
            Ok((table_from_rows(&names, &rows, &numeric, labels, &path)?, None))
        }
        Preset::Blog => {
            let train_path = raw_dir.join("blogData_train.csv");
            let (_, mut rows) = read_rows(&train_path, false)?;
            let n_train = rows.len();
            let mut tests: Vec<PathBuf> = std::fs::read_dir(raw_dir)
                .map_err(|e| VflError::io(raw_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("blogData_test-") && n.ends_with(".csv"))
                })
                .collect();
            tests.sort();
            if tests.is_empty() {
                return Err(VflError::Config(format!("no blogData_test-*.csv files in {}", raw_dir.display())));
            }
            for t in &tests {
                rows.extend(read_rows(t, false)?.1);
            }
            check_width(&rows, 281, &train_path)?;
            let names: Vec<String> = (0..280).map(|j| format!("f{j}")).collect();
            let labels = rows
                .iter()
                .enumerate()
                .map(|(i, r)| parse_num(&r[280], &train_path, i + 1))
                .collect::<Result<_>>()?;
            Ok((table_from_rows(&names, &rows, &[true; 280], labels, &train_path)?, Some(n_train)))
        }
        Preset::Adult => {
            let mut rows = Vec::new();
            let mut n_train = 0;
            for (k, file) in ["adult.data", "adult.test"].iter().enumerate() {
                let path = raw_dir.join(file);
                let (_, raw) = read_rows(&path, false)?;
                for r in raw {
                    // the test file opens with a non-data banner line
                    if r.len() == 1 && r[0].starts_with('|') {
                        continue;
                    }
                    if r.len() != 15 {
                        return Err(VflError::Parse {
                            row: rows.len() + 1,
                            message: format!("{}: expected 15 fields, found {}", path.display(), r.len()),
                        });
                    }
                    if r.iter().any(|f| f == "?") {
                        continue;
                    }
                    rows.push(r);
                }
                if k == 0 {
                    n_train = rows.len();
                }
            }
            let path = raw_dir.join("adult.data");
            let labels = rows
                .iter()
                .map(|r| match r[14].trim_end_matches('.') {
                    ">50K" => Ok(1.0),
                    "<=50K" => Ok(0.0),
                    other => Err(VflError::Parse {
                        row: 0,
                        message: format!("unknown income label {other:?}"),
                    }),
                })
                .collect::<Result<_>>()?;
            let names: Vec<String> = ADULT_COLUMNS.iter().map(|(n, _)| n.to_string()).collect();
            let numeric: Vec<bool> = ADULT_COLUMNS.iter().map(|(_, b)| *b).collect();
            Ok((table_from_rows(&names, &rows, &numeric, labels, &path)?, Some(n_train)))
        }
        Preset::Credit => {
            let path = raw_dir.join("cs-training.csv");
            let (header, mut rows) = read_rows(&path, true)?;
            let header = header.ok_or_else(|| VflError::Empty("credit file is empty".into()))?;
            check_width(&rows, header.len(), &path)?;
            if header.len() != 12 {
                return Err(VflError::Schema(format!("credit file has {} columns, expected 12", header.len())));
            }
            // MonthlyIncome and NumberOfDependents have gaps; -1 never occurs otherwise
            for r in rows.iter_mut() {
                for f in r.iter_mut().skip(2) {
                    if f == "NA" || f.is_empty() {
                        *f = "-1".into();
                    }
                }
            }
            let labels = rows.iter().enumerate().map(|(i, r)| parse_num(&r[1], &path, i + 1)).collect::<Result<_>>()?;
            let names: Vec<String> = header[2..].to_vec();
            let feats: Vec<Vec<String>> = rows.iter().map(|r| r[2..].to_vec()).collect();
            Ok((table_from_rows(&names, &feats, &[true; 10], labels, &path)?, None))
        }
    }
}

/// Seeded 80/20 row split: (train rows, test rows).
pub fn split_rows(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived(seed, "split", 0));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut test = idx.split_off(n - n_test.min(n));
    idx.sort_unstable();
    test.sort_unstable();
    (idx, test)
}

pub fn write_prepared(table: &TabularData, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| VflError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| VflError::Config(format!("{}: {e}", path.display())))?;
    let labels = table
        .labels()
        .ok_or_else(|| VflError::Schema("prepared tables carry labels".into()))?;
    let mut header = vec!["id".to_string()];
    let cols: Vec<&[f64]> = table
        .columns()
        .iter()
        .map(|c| {
            header.push(c.name.clone());
            c.as_numeric()
                .ok_or_else(|| VflError::Schema(format!("column {:?} is not numeric", c.name)))
        })
        .collect::<Result<_>>()?;
    header.push("label".into());
    let csv_err = |e: csv::Error| VflError::Config(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for (i, id) in table.sample_ids().iter().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(id.clone());
        rec.extend(cols.iter().map(|c| c[i].to_string()));
        rec.push(labels[i].to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| VflError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedInfo {
    pub preset: Preset,
    pub train_rows: usize,
    pub test_rows: usize,
    pub features: usize,
}

/// Convert the raw downloads in `raw_dir` into `out_dir/<name>/{train,test}.csv`.
pub fn prepare_dataset(preset: Preset, raw_dir: &Path, out_dir: &Path, split_seed: u64) -> Result<PreparedInfo> {
    let (table, n_train) = load_raw(preset, raw_dir)?;
    let n = table.n_samples();
    let (train_rows, test_rows) = match n_train {
        Some(k) => ((0..k).collect::<Vec<_>>(), (k..n).collect()),
        None => split_rows(n, 0.2, split_seed),
    };
    let train = table.select_rows(&train_rows);
    let test = table.select_rows(&test_rows);
    let dir = preset.prepared_dir(out_dir);
    write_prepared(&train, &dir.join("train.csv"))?;
    write_prepared(&test, &dir.join("test.csv"))?;
    Ok(PreparedInfo {
        preset,
        train_rows: train.n_samples(),
        test_rows: test.n_samples(),
        features: table.columns().len(),
    })
}

/// Load a prepared `id,...,label` file.
pub fn load_prepared(path: &Path) -> Result<TabularData> {
    load_csv(path, true)?.with_id_column("id")?.with_label_column("label")
}

/// Pooled synthetic table with a learnable signal spread over all features.
pub fn synthetic_dataset(n: usize, features: usize, task: TaskKind, seed: u64) -> Result<TabularData> {
    if n == 0 || features == 0 {
        return Err(VflError::Empty("synthetic dataset needs samples and features".into()));
    }
    let mut rng = derived(seed, "synthetic", 0);
    let weights: Vec<f64> = (0..features).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let cols: Vec<Vec<f64>> = (0..features)
        .map(|_| (0..n).map(|_| (rng.gen_range(0.0..100.0f64)).round() / 10.0).collect())
        .collect();
    let signal: Vec<f64> = (0..n)
        .map(|i| {
            cols.iter()
                .zip(&weights)
                .map(|(c, w)| w * c[i] + 0.3 * w * (c[i] * 0.7).sin() * 5.0)
                .sum::<f64>()
        })
        .collect();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let labels: Vec<f64> = match task {
        TaskKind::Regression => signal.iter().map(|s| s + rng.gen_range(-2.0..2.0)).collect(),
        TaskKind::Classification { classes } => signal
            .iter()
            .map(|s| {
                let z = s - mean + rng.gen_range(-8.0..8.0);
                if classes == 2 {
                    (z > 0.0) as u8 as f64
                } else {
                    ((z.abs() as u64) % classes as u64) as f64
                }
            })
            .collect(),
    };
    let columns = cols
        .into_iter()
        .enumerate()
        .map(|(j, v)| Column::numeric(format!("x{j}"), v))
        .collect();
    TabularData::new((0..n).map(|i| format!("r{i}")).collect(), columns, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn presets_roundtrip_names() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("mnist".parse::<Preset>().is_err());
        let h = Preset::Adult.hyperparams(ModelKind::XgBoost);
        assert_eq!((h.tree_count, h.max_depth, h.learning_rate), (10, 3, 0.56));
        assert_eq!(Preset::Credit.hyperparams(ModelKind::RandomForest).feature_subsample_ratio, 0.2);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a, b) = split_rows(100, 0.2, 4);
        assert_eq!((a.len(), b.len()), (80, 20));
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(split_rows(100, 0.2, 4), (a, b));
    }

    #[test]
    fn adult_preparation_drops_unknown_rows() {
        let dir = tempfile::tempdir().unwrap();
        let row = |age: u32, wc: &str, label: &str| {
            format!("{age}, {wc}, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, {label}\n")
        };
        let mut f = std::fs::File::create(dir.path().join("adult.data")).unwrap();
        f.write_all((row(39, "State-gov", "<=50K") + &row(50, "?", ">50K") + &row(31, "Private", ">50K")).as_bytes())
            .unwrap();
        let mut f = std::fs::File::create(dir.path().join("adult.test")).unwrap();
        f.write_all(("|1x3 Cross validator\n".to_string() + &row(25, "Private", "<=50K.") + "\n").as_bytes())
            .unwrap();
        let out = dir.path().join("prepared");
        let info = prepare_dataset(Preset::Adult, dir.path(), &out, 0).unwrap();
        assert_eq!((info.train_rows, info.test_rows), (2, 1));
        let train = load_prepared(&out.join("adult/train.csv")).unwrap();
        assert_eq!(train.labels().unwrap(), &[0.0, 1.0]);
        let wc: Vec<&str> = train
            .columns()
            .iter()
            .map(|c| c.name.as_str())
            .filter(|n| n.starts_with("workclass"))
            .collect();
        assert_eq!(wc.len(), 2);
        let test = load_prepared(&out.join("adult/test.csv")).unwrap();
        assert_eq!(test.labels().unwrap(), &[0.0]);
        assert_eq!(test.columns().len(), train.columns().len());
    }

    #[test]
    fn credit_gaps_become_sentinels() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from(",SeriousDlqin2yrs,a,b,c,d,MonthlyIncome,e,f,g,h,NumberOfDependents\n");
        for i in 0..10 {
            text += &format!("{i},{},0.5,45,0,0.8,NA,13,0,6,0,{}\n", i % 2, if i == 3 { "NA" } else { "2" });
        }
        std::fs::write(dir.path().join("cs-training.csv"), text).unwrap();
        let info = prepare_dataset(Preset::Credit, dir.path(), dir.path(), 1).unwrap();
        assert_eq!((info.train_rows, info.test_rows, info.features), (8, 2, 10));
        let t = load_prepared(&dir.path().join("credit/train.csv")).unwrap();
        assert!(t.column("MonthlyIncome").unwrap().as_numeric().unwrap().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_dataset(30, 3, TaskKind::Classification { classes: 2 }, 5).unwrap();
        let b = synthetic_dataset(30, 3, TaskKind::Classification { classes: 2 }, 5).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert!(a.labels().unwrap().iter().any(|&y| y == 1.0));
        assert!(a.labels().unwrap().iter().any(|&y| y == 0.0));
    }
}
