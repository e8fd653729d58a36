// SPDX-License-Identifier: Apache-2.0

//! Tabular data handling: CSV loading, sample alignment, one-hot encoding,
//! quantile binning and vertical partitioning across parties.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VflError};

/// Default number of histogram buckets per feature.
pub const DEFAULT_BUCKET_COUNT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            ColumnData::Numeric(_) => FeatureKind::Numeric,
            ColumnData::Categorical(_) => FeatureKind::Categorical,
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Numeric(values),
        }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<String>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Categorical(values),
        }
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }
}

/// One party's (or the pooled) view of the training table.
///
/// All columns and the optional label vector are aligned on `sample_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    sample_ids: Vec<String>,
    columns: Vec<Column>,
    labels: Option<Vec<f64>>,
}

impl TabularData {
    pub fn new(sample_ids: Vec<String>, columns: Vec<Column>, labels: Option<Vec<f64>>) -> Result<Self> {
        let n = sample_ids.len();
        let mut seen = HashSet::with_capacity(n);
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(VflError::Schema(format!("duplicate sample id {id:?}")));
            }
        }
        let mut names = HashSet::new();
        for col in &columns {
            if col.data.len() != n {
                return Err(VflError::Schema(format!(
                    "column {:?} has {} values, expected {n}",
                    col.name,
                    col.data.len()
                )));
            }
            if !names.insert(col.name.as_str()) {
                return Err(VflError::Schema(format!("duplicate column {:?}", col.name)));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(VflError::Schema(format!(
                    "label vector has {} values, expected {n}",
                    labels.len()
                )));
            }
        }
        Ok(TabularData {
            sample_ids,
            columns,
            labels,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn feature_kinds(&self) -> Vec<FeatureKind> {
        self.columns.iter().map(|c| c.data.kind()).collect()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    /// Detach the named numeric column and use it as the label vector.
    pub fn with_label_column(mut self, name: &str) -> Result<Self> {
        let pos = self
            .columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| VflError::Schema(format!("label column {name:?} not found")))?;
        let col = self.columns.remove(pos);
        match col.data {
            ColumnData::Numeric(values) => {
                self.labels = Some(values);
                Ok(self)
            }
            ColumnData::Categorical(_) => Err(VflError::Schema(format!(
                "label column {name:?} is not numeric"
            ))),
        }
    }

    /// Replace the synthetic row ids with the values of the named column.
    pub fn with_id_column(mut self, name: &str) -> Result<Self> {
        let pos = self
            .columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| VflError::Schema(format!("id column {name:?} not found")))?;
        let col = self.columns.remove(pos);
        let ids = match col.data {
            ColumnData::Categorical(v) => v,
            ColumnData::Numeric(v) => v.iter().map(|x| format_number(*x)).collect(),
        };
        TabularData::new(ids, self.columns, self.labels)
    }

    /// Expand every categorical column into one-hot numeric columns.
    pub fn one_hot_all(self) -> Self {
        let mut columns = Vec::with_capacity(self.columns.len());
        for col in self.columns {
            match &col.data {
                ColumnData::Numeric(_) => columns.push(col),
                ColumnData::Categorical(values) => columns.extend(one_hot_encode(&col.name, values)),
            }
        }
        TabularData {
            sample_ids: self.sample_ids,
            columns,
            labels: self.labels,
        }
    }

    /// Reorder rows to follow `order`, dropping samples not listed.
    pub fn reindex(&self, order: &[String]) -> Result<Self> {
        let pos: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = order
            .iter()
            .map(|id| {
                pos.get(id.as_str())
                    .copied()
                    .ok_or_else(|| VflError::Schema(format!("sample id {id:?} not held by this party")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_rows(&rows))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        TabularData {
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    data: c.data.select(rows),
                })
                .collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
        }
    }
}

fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "?" | "NA" | "NaN" | "nan" | "null")
}

/// Read a comma-separated file. Columns whose every value parses as a
/// number are numeric, the rest categorical. Sample ids are row ordinals.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<TabularData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| VflError::io(path, e))?;
    read_csv(file, has_header)
}

pub fn read_csv<R: std::io::Read>(reader: R, has_header: bool) -> Result<TabularData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| VflError::Parse {
            row,
            message: e.to_string(),
        })?;
        let fields: Vec<String> = record.iter().map(str::to_owned).collect();
        if header.is_none() && has_header {
            header = Some(fields);
            continue;
        }
        let width = header.as_ref().map(Vec::len).or_else(|| rows.first().map(Vec::len));
        if let Some(width) = width {
            if fields.len() != width {
                return Err(VflError::Parse {
                    row,
                    message: format!("expected {width} fields, found {}", fields.len()),
                });
            }
        }
        if let Some(col) = fields.iter().position(|f| is_missing(f)) {
            return Err(VflError::Parse {
                row,
                message: format!("missing value in field {}", col + 1),
            });
        }
        rows.push(fields);
    }
    if rows.is_empty() {
        return Err(VflError::Empty("csv file has no data rows".into()));
    }

    let width = rows[0].len();
    let names = header.unwrap_or_else(|| (0..width).map(|j| format!("c{j}")).collect());
    let mut columns = Vec::with_capacity(width);
    for (j, name) in names.into_iter().enumerate() {
        let parsed: Option<Vec<f64>> = rows.iter().map(|r| r[j].parse::<f64>().ok()).collect();
        columns.push(match parsed {
            Some(values) => Column::numeric(name, values),
            None => Column::categorical(name, rows.iter().map(|r| r[j].clone()).collect()),
        });
    }
    let ids = (0..rows.len()).map(|i| i.to_string()).collect();
    TabularData::new(ids, columns, None)
}

/// Sorted intersection of every party's sample id list.
///
/// Stands in for private set intersection: ids are compared in plaintext.
pub fn align_samples<T: Ord + Clone>(id_lists: &[Vec<T>]) -> Result<Vec<T>> {
    if id_lists.len() < 2 {
        return Err(VflError::Config("alignment needs at least two parties".into()));
    }
    let mut common: BTreeSet<T> = id_lists[0].iter().cloned().collect();
    for ids in &id_lists[1..] {
        let other: BTreeSet<&T> = ids.iter().collect();
        common.retain(|id| other.contains(id));
    }
    if common.is_empty() {
        return Err(VflError::Empty("sample alignment produced an empty intersection".into()));
    }
    Ok(common.into_iter().collect())
}

/// One 0/1 column per distinct category, in first-appearance order.
pub fn one_hot_encode(name: &str, values: &[String]) -> Vec<Column> {
    let mut categories: Vec<&str> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for v in values {
        if !index.contains_key(v.as_str()) {
            index.insert(v, categories.len());
            categories.push(v);
        }
    }
    let mut cols: Vec<Vec<f64>> = vec![vec![0.0; values.len()]; categories.len()];
    for (row, v) in values.iter().enumerate() {
        cols[index[v.as_str()]][row] = 1.0;
    }
    categories
        .into_iter()
        .zip(cols)
        .map(|(cat, data)| Column::numeric(format!("{name}={cat}"), data))
        .collect()
}

/// A numeric column quantized into buckets.
///
/// `bucket(v)` is the number of boundaries strictly below `v`, so a sample
/// lands in bucket `b` or lower exactly when `v <= boundaries[b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketizedColumn {
    pub boundaries: Vec<f64>,
    pub bucket_of: Vec<u16>,
}

impl BucketizedColumn {
    pub fn bucket_count(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn bucket_of_value(&self, value: f64) -> u16 {
        self.boundaries.partition_point(|&c| c < value) as u16
    }

    /// Raw threshold equivalent to "bucket <= b".
    pub fn threshold(&self, bucket: u16) -> Option<f64> {
        self.boundaries.get(bucket as usize).copied()
    }
}

/// Equal-frequency binning on empirical quantiles.
pub fn quantile_bin(values: &[f64], bucket_count: usize) -> Result<BucketizedColumn> {
    if values.is_empty() {
        return Err(VflError::Empty("cannot bin an empty column".into()));
    }
    if bucket_count < 2 {
        return Err(VflError::Config(format!("bucket_count must be >= 2, got {bucket_count}")));
    }
    if bucket_count > u16::MAX as usize {
        return Err(VflError::Config(format!("bucket_count {bucket_count} exceeds {}", u16::MAX)));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(VflError::Numeric("non-finite value in column".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();

    let max = *distinct.last().unwrap();
    let boundaries: Vec<f64> = if distinct.len() <= bucket_count {
        distinct[..distinct.len() - 1].to_vec()
    } else {
        let n = sorted.len();
        let mut cuts: Vec<f64> = (1..bucket_count)
            .map(|i| {
                let rank = (i * n).div_ceil(bucket_count);
                sorted[rank.max(1) - 1]
            })
            .filter(|&c| c < max)
            .collect();
        cuts.dedup();
        cuts
    };

    let mut col = BucketizedColumn {
        boundaries,
        bucket_of: Vec::with_capacity(values.len()),
    };
    col.bucket_of = values.iter().map(|&v| col.bucket_of_value(v)).collect();
    Ok(col)
}

/// Which party holds which feature, plus shared binning settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub party_count: usize,
    pub task_party: u16,
    pub party_assignment: BTreeMap<String, u16>,
    pub bucket_count: usize,
}

impl FeatureSchema {
    pub fn new(party_count: usize, task_party: u16, bucket_count: usize) -> Result<Self> {
        if party_count < 2 {
            return Err(VflError::Config("a session needs at least two parties".into()));
        }
        if task_party as usize >= party_count {
            return Err(VflError::Config(format!("task party {task_party} out of range")));
        }
        if bucket_count < 2 {
            return Err(VflError::Config(format!("bucket_count must be >= 2, got {bucket_count}")));
        }
        Ok(FeatureSchema {
            party_count,
            task_party,
            party_assignment: BTreeMap::new(),
            bucket_count,
        })
    }

    pub fn assign(mut self, feature: impl Into<String>, party: u16) -> Self {
        self.party_assignment.insert(feature.into(), party);
        self
    }

    /// Contiguous split of `names` over all parties, task party first.
    pub fn contiguous(names: &[String], party_count: usize, bucket_count: usize) -> Result<Self> {
        let mut schema = FeatureSchema::new(party_count, 0, bucket_count)?;
        let per = names.len().div_ceil(party_count).max(1);
        for (i, name) in names.iter().enumerate() {
            schema.party_assignment.insert(name.clone(), (i / per).min(party_count - 1) as u16);
        }
        Ok(schema)
    }
}

/// Split a pooled table into one table per party.
pub fn vertical_partition(data: &TabularData, schema: &FeatureSchema) -> Result<Vec<TabularData>> {
    let mut per_party: Vec<Vec<Column>> = vec![Vec::new(); schema.party_count];
    for col in data.columns() {
        let party = *schema
            .party_assignment
            .get(&col.name)
            .ok_or_else(|| VflError::Schema(format!("column {:?} is not assigned to any party", col.name)))?;
        let slot = per_party
            .get_mut(party as usize)
            .ok_or_else(|| VflError::Schema(format!("column {:?} assigned to unknown party {party}", col.name)))?;
        slot.push(col.clone());
    }
    per_party
        .into_iter()
        .enumerate()
        .map(|(p, cols)| {
            let labels = if p == schema.task_party as usize {
                data.labels().map(<[f64]>::to_vec)
            } else {
                None
            };
            TabularData::new(data.sample_ids().to_vec(), cols, labels)
        })
        .collect()
}
