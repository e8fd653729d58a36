// SPDX-License-Identifier: Apache-2.0

//! Training sessions: configuration, party setup, and the level-wise tree
//! builder that both protocols drive from the task party.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;

use crate::dataset::{quantile_bin, BucketizedColumn, ColumnData, TabularData};
use crate::error::{Result, VflError};
use crate::messaging::{Bus, CommStats, Envelope, Mailbox, PartyId, Role};
use crate::party::DataParty;
use crate::rng::derived;
use crate::split::{best_split, node_totals, Candidate, Criterion, FeatureHistogram, Histogram};
use crate::tree::{
    grad_pairs, initial_score, leaf_output, Ensemble, GradPair, Hyperparams, LeafInput, ModelKind, SplitPointer, TaskKind,
    ThresholdEntry, ThresholdTable, TreeNode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    FeatureGathering,
    LabelScattering,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::FeatureGathering => "fg",
            Protocol::LabelScattering => "ls",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = VflError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fg" | "feature_gathering" => Ok(Protocol::FeatureGathering),
            "ls" | "label_scattering" => Ok(Protocol::LabelScattering),
            other => Err(VflError::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protection {
    None,
    /// Feature-gathering: randomized response over buckets.
    BucketLdp { stay_probability: f64 },
    /// Feature-gathering: distance-weighted bucket resampling.
    DistanceLdp { epsilon: f64 },
    /// Label-scattering: encrypted label information and bucket sums.
    Paillier { key_bits: usize, scale_bits: u32 },
    /// Label-scattering: data-party indicators travel as additive frames and
    /// child membership is formed by a Beaver multiplication.
    SecretSharing { prime_bits: u32 },
}

impl Protection {
    pub fn kind_str(&self) -> &'static str {
        match self {
            Protection::None => "none",
            Protection::BucketLdp { .. } => "bucket_ldp",
            Protection::DistanceLdp { .. } => "distance_ldp",
            Protection::Paillier { .. } => "paillier",
            Protection::SecretSharing { .. } => "secret_sharing",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub task: TaskKind,
    pub protocol: Protocol,
    pub protection: Protection,
    pub hyper: Hyperparams,
    pub bucket_count: usize,
}

impl TrainConfig {
    pub fn new(model: ModelKind, task: TaskKind, protocol: Protocol) -> Self {
        TrainConfig {
            model,
            task,
            protocol,
            protection: Protection::None,
            hyper: Hyperparams::default(),
            bucket_count: crate::dataset::DEFAULT_BUCKET_COUNT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.bucket_count < 2 || self.bucket_count > u16::MAX as usize {
            return Err(VflError::Config(format!("bucket_count must be in 2..=65535, got {}", self.bucket_count)));
        }
        if let TaskKind::Classification { classes } = self.task {
            if classes < 2 {
                return Err(VflError::Config("classification needs at least 2 classes".into()));
            }
            if self.model.is_boosting() && classes != 2 {
                return Err(VflError::Config("boosted classifiers are binary".into()));
            }
        }
        match (self.protection, self.protocol) {
            (Protection::None, _) => {}
            (Protection::BucketLdp { stay_probability: p }, Protocol::FeatureGathering) => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(VflError::Config(format!("stay probability must be in (0, 1], got {p}")));
                }
            }
            (Protection::DistanceLdp { epsilon }, Protocol::FeatureGathering) => {
                if !(epsilon > 0.0) {
                    return Err(VflError::Config(format!("epsilon must be > 0, got {epsilon}")));
                }
            }
            (Protection::Paillier { key_bits, .. }, Protocol::LabelScattering) => {
                if key_bits < 512 {
                    return Err(VflError::Config(format!("paillier key must be at least 512 bits, got {key_bits}")));
                }
            }
            (Protection::SecretSharing { .. }, Protocol::LabelScattering) => {}
            (p, proto) => {
                return Err(VflError::Config(format!(
                    "{} protection does not apply to the {proto} protocol",
                    p.kind_str()
                )))
            }
        }
        Ok(())
    }
}

/// One party's features after local binning.
#[derive(Debug, Clone)]
pub struct PartyFeatures {
    pub party: PartyId,
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub columns: Vec<BucketizedColumn>,
}

impl PartyFeatures {
    /// Bin every numeric column of `data`; categorical columns must be
    /// one-hot encoded beforehand.
    pub fn from_table(party: PartyId, data: &TabularData, bucket_count: usize) -> Result<Self> {
        let mut names = Vec::new();
        let mut values = Vec::new();
        let mut columns = Vec::new();
        for c in data.columns() {
            let ColumnData::Numeric(v) = &c.data else {
                return Err(VflError::Schema(format!("column {:?} is categorical; one-hot encode it first", c.name)));
            };
            columns.push(quantile_bin(v, bucket_count)?);
            names.push(c.name.clone());
            values.push(v.clone());
        }
        Ok(PartyFeatures {
            party,
            names,
            values,
            columns,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.columns.len()
    }

    pub fn threshold_entry(&self, feature_ordinal: u32, bucket_ordinal: u16) -> Result<ThresholdEntry> {
        let col = self
            .columns
            .get(feature_ordinal as usize)
            .ok_or_else(|| VflError::Protocol(format!("{} has no feature {feature_ordinal}", self.party)))?;
        let threshold = col.threshold(bucket_ordinal).ok_or_else(|| {
            VflError::Protocol(format!(
                "{} feature {feature_ordinal} has no boundary {bucket_ordinal}",
                self.party
            ))
        })?;
        Ok(ThresholdEntry {
            feature_name: self.names[feature_ordinal as usize].clone(),
            threshold,
        })
    }

    /// Left indicator over `route` for a split on one of this party's features.
    pub fn indicator(&self, feature_ordinal: u32, bucket_ordinal: u16, route: &[u32]) -> Result<Vec<bool>> {
        let col = self
            .columns
            .get(feature_ordinal as usize)
            .ok_or_else(|| VflError::Protocol(format!("{} has no feature {feature_ordinal}", self.party)))?;
        Ok(route.iter().map(|&s| col.bucket_of[s as usize] <= bucket_ordinal).collect())
    }
}

/// The bus plus every data party's handler; the task party reads its
/// replies through a mailbox between bus runs.
pub struct Federation {
    pub bus: Bus,
    pub task: PartyId,
    inbox: Mailbox,
    pub data_parties: Vec<DataParty>,
}

impl Federation {
    pub fn new(bus: Bus, task: PartyId, data_parties: Vec<DataParty>) -> Self {
        Federation {
            bus,
            task,
            inbox: Mailbox::new(task),
            data_parties,
        }
    }

    /// Run the bus to quiescence and return what reached the task party.
    pub fn pump(&mut self) -> Result<Vec<Envelope>> {
        let Federation {
            bus,
            inbox,
            data_parties,
            ..
        } = self;
        let mut handlers: Vec<&mut dyn crate::messaging::Handler> = Vec::with_capacity(data_parties.len() + 1);
        handlers.push(inbox);
        for d in data_parties.iter_mut() {
            handlers.push(d);
        }
        bus.run_until_idle(&mut handlers)?;
        Ok(self.inbox.drain())
    }

    pub fn data_ids(&self) -> Vec<PartyId> {
        self.data_parties.iter().map(|d| d.id()).collect()
    }

    pub fn stats(&self) -> CommStats {
        self.bus.snapshot_stats()
    }
}

/// Per-tree randomness and label statistics held by the task party.
pub struct TreeCtx<'a> {
    pub criterion: Criterion,
    /// Sample-major, `criterion.width()` values per aligned sample.
    pub payload: &'a [f64],
    pub train: &'a [bool],
    /// `mask[party][feature]`: usable by this tree.
    pub mask: &'a [Vec<bool>],
    pub max_depth: usize,
    pub tree_index: usize,
}

impl TreeCtx<'_> {
    pub fn train_samples(&self, route: &[u32]) -> Vec<u32> {
        route.iter().copied().filter(|&s| self.train[s as usize]).collect()
    }

    pub fn expandable(&self, depth: usize, train_count: f64) -> bool {
        depth < self.max_depth && train_count >= 2.0
    }

    fn allowed(&self, party: PartyId, feature: u32) -> bool {
        self.mask
            .get(party.index())
            .and_then(|m| m.get(feature as usize))
            .copied()
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone)]
pub struct FrontierNode {
    pub depth: usize,
    pub route: Vec<u32>,
}

/// A feature histogram produced by some party for one frontier node.
#[derive(Debug, Clone)]
pub struct RemoteHistogram {
    pub party: PartyId,
    pub feature_ordinal: u32,
    pub histogram: Histogram,
}

/// The protocol-specific half of tree building.
pub trait TreeProtocol {
    fn begin_tree(&mut self, ctx: &TreeCtx<'_>, root_route: &[u32], root_expandable: bool) -> Result<()>;

    /// Data-party histograms for every frontier node.
    fn level_histograms(&mut self, ctx: &TreeCtx<'_>, frontier: &[FrontierNode]) -> Result<Vec<Vec<RemoteHistogram>>>;

    /// Resolve this level's splits. `local` holds indicators for splits the
    /// task party owns. Returns left indicators for data-party splits.
    fn resolve_splits(
        &mut self,
        ctx: &TreeCtx<'_>,
        frontier: &[FrontierNode],
        decisions: &[Option<Candidate>],
        local: &[Option<Vec<bool>>],
        next_nonempty: bool,
    ) -> Result<Vec<Option<Vec<bool>>>>;
}

enum Slot {
    Pending,
    Leaf,
    Split { pointer: SplitPointer, left: usize, right: usize },
}

struct ArenaNode {
    depth: usize,
    route: Vec<u32>,
    slot: Slot,
}

/// Grow one tree breadth-first. Returns the tree and each leaf's route in
/// left-to-right order.
pub fn build_tree<P: TreeProtocol>(
    proto: &mut P,
    ctx: &TreeCtx<'_>,
    task_features: &PartyFeatures,
    task_thresholds: &mut ThresholdTable,
    model: ModelKind,
    task: TaskKind,
    hyper: &Hyperparams,
    labels: &[f64],
    grads: &[GradPair],
    root_route: Vec<u32>,
) -> Result<(TreeNode, Vec<(f64, Vec<u32>)>)> {
    let width = ctx.criterion.width();
    let root_train = ctx.train_samples(&root_route).len() as f64;
    let root_expandable = ctx.expandable(0, root_train);
    let mut arena = vec![ArenaNode {
        depth: 0,
        route: root_route,
        slot: Slot::Pending,
    }];
    proto.begin_tree(ctx, &arena[0].route, root_expandable)?;
    let mut frontier_ids: Vec<usize> = if root_expandable { vec![0] } else { vec![] };

    while !frontier_ids.is_empty() {
        let frontier: Vec<FrontierNode> = frontier_ids
            .iter()
            .map(|&i| FrontierNode {
                depth: arena[i].depth,
                route: arena[i].route.clone(),
            })
            .collect();
        let remote = proto.level_histograms(ctx, &frontier)?;
        if remote.len() != frontier.len() {
            return Err(VflError::Protocol("histograms for the wrong number of nodes".into()));
        }

        let mut decisions = Vec::with_capacity(frontier.len());
        for (node, mut remote_hists) in frontier.iter().zip(remote) {
            let samples = ctx.train_samples(&node.route);
            let total = node_totals(&samples, ctx.payload, width);
            let own: Vec<Histogram> = task_features
                .columns
                .iter()
                .map(|c| Histogram::accumulate(&c.bucket_of, c.bucket_count(), &samples, ctx.payload, width))
                .collect::<Result<_>>()?;
            remote_hists.sort_by_key(|h| (h.party, h.feature_ordinal));
            let feats = own
                .iter()
                .enumerate()
                .map(|(f, h)| FeatureHistogram {
                    party: task_features.party,
                    feature_ordinal: f as u32,
                    histogram: h,
                })
                .chain(remote_hists.iter().map(|r| FeatureHistogram {
                    party: r.party,
                    feature_ordinal: r.feature_ordinal,
                    histogram: &r.histogram,
                }))
                .filter(|f| ctx.allowed(f.party, f.feature_ordinal));
            decisions.push(best_split(&ctx.criterion, &total, samples.len() as f64, feats)?);
        }

        let mut local = Vec::with_capacity(frontier.len());
        let mut next_nonempty = false;
        for (node, d) in frontier.iter().zip(&decisions) {
            let Some(c) = d else {
                local.push(None);
                continue;
            };
            next_nonempty |= ctx.expandable(node.depth + 1, c.left_count) || ctx.expandable(node.depth + 1, c.right_count);
            if c.pointer.party == task_features.party {
                let p = c.pointer;
                task_thresholds
                    .entries
                    .insert((p.feature_ordinal, p.bucket_ordinal), task_features.threshold_entry(p.feature_ordinal, p.bucket_ordinal)?);
                local.push(Some(task_features.indicator(p.feature_ordinal, p.bucket_ordinal, &node.route)?));
            } else {
                local.push(None);
            }
        }

        let remote_inds = proto.resolve_splits(ctx, &frontier, &decisions, &local, next_nonempty)?;

        let mut next = Vec::new();
        for (k, &id) in frontier_ids.iter().enumerate() {
            let Some(c) = decisions[k] else {
                arena[id].slot = Slot::Leaf;
                continue;
            };
            let ind = match (&local[k], &remote_inds[k]) {
                (Some(l), _) => l.clone(),
                (None, Some(r)) => r.clone(),
                (None, None) => return Err(VflError::Protocol(format!("no indicator for split {:?}", c.pointer))),
            };
            let route = &arena[id].route;
            if ind.len() != route.len() {
                return Err(VflError::Protocol(format!(
                    "indicator of length {} for a node of {} samples",
                    ind.len(),
                    route.len()
                )));
            }
            let (mut lr, mut rr) = (Vec::new(), Vec::new());
            for (&s, &left) in route.iter().zip(&ind) {
                if left {
                    lr.push(s);
                } else {
                    rr.push(s);
                }
            }
            let depth = arena[id].depth + 1;
            let (lt, rt) = (ctx.train_samples(&lr).len() as f64, ctx.train_samples(&rr).len() as f64);
            if lt != c.left_count || rt != c.right_count {
                return Err(VflError::Protocol(format!(
                    "partition of {:?} gives {lt}/{rt} samples, histograms said {}/{}",
                    c.pointer, c.left_count, c.right_count
                )));
            }
            let l = arena.len();
            arena.push(ArenaNode {
                depth,
                route: lr,
                slot: Slot::Pending,
            });
            arena.push(ArenaNode {
                depth,
                route: rr,
                slot: Slot::Pending,
            });
            arena[id].slot = Slot::Split {
                pointer: c.pointer,
                left: l,
                right: l + 1,
            };
            if ctx.expandable(depth, lt) {
                next.push(l);
            }
            if ctx.expandable(depth, rt) {
                next.push(l + 1);
            }
        }
        frontier_ids = next;
    }

    let mut leaves = Vec::new();
    let tree = assemble(&arena, 0, ctx, model, task, hyper, labels, grads, &mut leaves)?;
    Ok((tree, leaves))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    arena: &[ArenaNode],
    id: usize,
    ctx: &TreeCtx<'_>,
    model: ModelKind,
    task: TaskKind,
    hyper: &Hyperparams,
    labels: &[f64],
    grads: &[GradPair],
    leaves: &mut Vec<(f64, Vec<u32>)>,
) -> Result<TreeNode> {
    let node = &arena[id];
    match node.slot {
        Slot::Split { pointer, left, right } => Ok(TreeNode::internal(
            pointer,
            assemble(arena, left, ctx, model, task, hyper, labels, grads, leaves)?,
            assemble(arena, right, ctx, model, task, hyper, labels, grads, leaves)?,
        )),
        Slot::Leaf | Slot::Pending => {
            let samples = ctx.train_samples(&node.route);
            let value = if model.is_boosting() {
                let g: Vec<GradPair> = samples.iter().map(|&s| grads[s as usize]).collect();
                leaf_output(model, task, LeafInput::Grads(&g), hyper.lambda)?
            } else {
                let y: Vec<f64> = samples.iter().map(|&s| labels[s as usize]).collect();
                leaf_output(model, task, LeafInput::Labels(&y), hyper.lambda)?
            };
            leaves.push((value, node.route.clone()));
            Ok(TreeNode::leaf(value))
        }
    }
}

/// Root route, training mask and feature mask for tree `t`.
pub fn tree_sampling(
    t: usize,
    n: usize,
    model: ModelKind,
    hyper: &Hyperparams,
    catalog: &[usize],
) -> (Vec<u32>, Vec<bool>, Vec<Vec<bool>>) {
    let (route, train) = if model == ModelKind::RandomForest {
        // bootstrap: draws with replacement, kept sorted, duplicates kept
        let k = ((hyper.sample_subsample_ratio * n as f64).round() as usize).max(1);
        let mut rng = derived(hyper.seed, "bootstrap", t as u64);
        let mut route: Vec<u32> = (0..k).map(|_| rng.gen_range(0..n as u32)).collect();
        route.sort_unstable();
        let mut train = vec![false; n];
        for &s in &route {
            train[s as usize] = true;
        }
        (route, train)
    } else if hyper.sample_subsample_ratio < 1.0 {
        let k = ((hyper.sample_subsample_ratio * n as f64).round() as usize).clamp(1, n);
        let mut rng = derived(hyper.seed, "rows", t as u64);
        let mut train = vec![false; n];
        for i in index::sample(&mut rng, n, k) {
            train[i] = true;
        }
        ((0..n as u32).collect(), train)
    } else {
        ((0..n as u32).collect(), vec![true; n])
    };

    let total: usize = catalog.iter().sum();
    let mut mask: Vec<Vec<bool>> = catalog.iter().map(|&c| vec![true; c]).collect();
    if hyper.feature_subsample_ratio < 1.0 && total > 0 {
        let k = ((hyper.feature_subsample_ratio * total as f64).round() as usize).clamp(1, total);
        let mut rng = derived(hyper.seed, "features", t as u64);
        let mut chosen = vec![false; total];
        for i in index::sample(&mut rng, total, k) {
            chosen[i] = true;
        }
        let mut flat = chosen.into_iter();
        for m in mask.iter_mut() {
            for slot in m.iter_mut() {
                *slot = flat.next().unwrap();
            }
        }
    }
    (route, train, mask)
}

/// Everything a finished training session leaves behind.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub ensemble: Ensemble,
    /// Indexed by party id; each party's private split thresholds.
    pub thresholds: Vec<ThresholdTable>,
    /// Boosting: raw scores of the training samples as accumulated during
    /// training. Forests: empty.
    pub train_raw: Vec<f64>,
    pub stats: CommStats,
    pub transcript_digest: u64,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub setup_secs: f64,
    pub train_secs: f64,
}

/// Task-party state shared by both protocol drivers.
pub struct TaskState {
    pub features: PartyFeatures,
    pub labels: Vec<f64>,
    pub thresholds: ThresholdTable,
}

impl TaskState {
    pub fn n(&self) -> usize {
        self.labels.len()
    }
}

/// Bin every party's columns and register the parties on a fresh bus.
/// `parts[0]` is the task party and must carry labels.
pub fn setup_parties(parts: &[TabularData], config: &TrainConfig) -> Result<(Bus, TaskState, Vec<PartyFeatures>)> {
    config.validate()?;
    if parts.len() < 2 {
        return Err(VflError::Config("need a task party and at least one data party".into()));
    }
    let labels = parts[0]
        .labels()
        .ok_or_else(|| VflError::Schema("the task party holds no labels".into()))?
        .to_vec();
    let n = labels.len();
    if n == 0 {
        return Err(VflError::Empty("no training samples".into()));
    }
    for (i, p) in parts.iter().enumerate().skip(1) {
        if p.labels().is_some() {
            return Err(VflError::Schema(format!("data party {i} holds labels")));
        }
        if p.sample_ids() != parts[0].sample_ids() {
            return Err(VflError::Schema(format!("data party {i} is not aligned with the task party")));
        }
    }
    if let TaskKind::Classification { classes } = config.task {
        if let Some(bad) = labels.iter().find(|&&y| y < 0.0 || y.fract() != 0.0 || y >= classes as f64) {
            return Err(VflError::Schema(format!("label {bad} is not a class in 0..{classes}")));
        }
    }
    let mut bus = Bus::new();
    let mut features = Vec::with_capacity(parts.len());
    for (i, p) in parts.iter().enumerate() {
        let id = bus.register_party(if i == 0 { Role::Task } else { Role::Data })?;
        features.push(PartyFeatures::from_table(id, p, config.bucket_count)?);
    }
    let task_features = features.remove(0);
    let task = TaskState {
        thresholds: ThresholdTable::new(task_features.party),
        features: task_features,
        labels,
    };
    Ok((bus, task, features))
}

/// The boosting/forest outer loop, common to both protocols.
pub fn train_trees<P: TreeProtocol>(
    proto: &mut P,
    task: &mut TaskState,
    catalog: &[usize],
    config: &TrainConfig,
) -> Result<(Ensemble, Vec<f64>)> {
    let hyper = &config.hyper;
    let n = task.n();
    let lr = if config.model.is_boosting() { hyper.learning_rate } else { 1.0 };
    let mut ensemble = Ensemble::new(config.model, config.task, lr);
    ensemble.base_prediction = initial_score(config.model, config.task, &task.labels);
    let criterion = Criterion::for_model(config.model, config.task, hyper);
    let width = criterion.width();
    let mut leaf_sum = vec![0.0; n];
    let mut raw = vec![ensemble.base_prediction; n];
    let mut payload = vec![0.0; n * width];

    for t in 0..hyper.tree_count {
        let grads = if config.model.is_boosting() {
            grad_pairs(&task.labels, &raw, config.task.loss())?
        } else {
            Vec::new()
        };
        for s in 0..n {
            criterion.payload(grads.get(s).copied(), task.labels[s], &mut payload[s * width..(s + 1) * width])?;
        }
        let (route, train, mask) = tree_sampling(t, n, config.model, hyper, catalog);
        let ctx = TreeCtx {
            criterion,
            payload: &payload,
            train: &train,
            mask: &mask,
            max_depth: hyper.max_depth,
            tree_index: t,
        };
        let (tree, leaves) = build_tree(
            proto,
            &ctx,
            &task.features,
            &mut task.thresholds,
            config.model,
            config.task,
            hyper,
            &task.labels,
            &grads,
            route,
        )?;
        if config.model.is_boosting() {
            for (w, route) in &leaves {
                for &s in route {
                    leaf_sum[s as usize] += w;
                }
            }
            for s in 0..n {
                raw[s] = ensemble.base_prediction + lr * leaf_sum[s];
            }
        }
        ensemble.trees.push(tree);
    }
    let train_raw = if config.model.is_boosting() { raw } else { Vec::new() };
    Ok((ensemble, train_raw))
}

/// Train over the configured protocol. `parts[0]` is the task party.
pub fn train_federated(parts: &[TabularData], config: &TrainConfig) -> Result<TrainedModel> {
    let start = Instant::now();
    match config.protocol {
        Protocol::FeatureGathering => crate::fg::build_trees_fg(parts, config, start),
        Protocol::LabelScattering => crate::ls::build_trees_ls(parts, config, start),
    }
}
