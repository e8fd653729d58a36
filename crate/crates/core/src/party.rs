// SPDX-License-Identifier: Apache-2.0

//! The data-party side of training.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;

use num_bigint::BigUint;
use rand::Rng;

use crate::error::{Result, VflError};
use crate::messaging::{Envelope, Handler, Outbox, PartyId, Phase};
use crate::privacy::ldp::{bucket_members, shuffled_bucket_members, LdpConfig};
use crate::privacy::paillier::PublicKey;
use crate::privacy::secret_sharing::{beaver_finish, beaver_open, ss_split_vec, KeyedDealer};
use crate::protocol::{
    BucketSumsMsg, Cell, FeatureOrdinals, FeatureSums, FramesMsg, GradsMsg, IndicatorsMsg, NodeStatus,
    OrdinalsMsg, PublicKeyMsg, SplitPointerMsg,
};
use crate::rng::{derived, SessionRng};
use crate::session::PartyFeatures;
use crate::split::Histogram;
use crate::tree::ThresholdTable;

/// Tag of the triple used for node `node` of level `level` in tree `tree`.
pub(crate) fn triple_tag(tree: u64, level: u32, node: usize) -> u64 {
    (tree << 32) | ((level as u64) << 20) | node as u64
}

/// Shared-indicator mode: this party's view of the dealer and its frame RNG.
pub struct SharedIndicators {
    pub dealer: Rc<RefCell<KeyedDealer>>,
    rng: SessionRng,
    /// Kept frames of indicators already sent, awaiting the task's opening.
    kept: VecDeque<(u64, Vec<u64>)>,
}

impl SharedIndicators {
    pub fn new(dealer: Rc<RefCell<KeyedDealer>>, seed: u64, party: PartyId) -> Self {
        SharedIndicators {
            dealer,
            rng: derived(seed, "frames", party.0 as u64),
            kept: VecDeque::new(),
        }
    }
}

struct LsTree {
    index: u64,
    level: u32,
    train: Vec<bool>,
    width: usize,
    /// Plaintext sessions: dense sample-major payload, zero for non-training rows.
    plain: Vec<f64>,
    /// Encrypted sessions: cells of training rows, `row[s]` indexes them.
    cells: Vec<Cell>,
    row: Vec<Option<usize>>,
    frontier: Vec<(usize, Vec<u32>)>,
    /// Statuses of the current level while a partition relay is outstanding.
    waiting: Option<(Vec<NodeStatus>, Vec<Option<Vec<bool>>>)>,
}

pub struct DataParty {
    pub features: PartyFeatures,
    pub thresholds: ThresholdTable,
    task: PartyId,
    max_depth: usize,
    key: Option<PublicKey>,
    shared: Option<SharedIndicators>,
    tree: Option<LsTree>,
    trees_seen: u64,
}

impl DataParty {
    pub fn new(features: PartyFeatures, task: PartyId, max_depth: usize) -> Self {
        DataParty {
            thresholds: ThresholdTable::new(features.party),
            features,
            task,
            max_depth,
            key: None,
            shared: None,
            tree: None,
            trees_seen: 0,
        }
    }

    pub fn with_shared_indicators(mut self, shared: SharedIndicators) -> Self {
        self.shared = Some(shared);
        self
    }

    pub fn id(&self) -> PartyId {
        self.features.party
    }

    /// Bucket membership of every local feature. Without LDP, members of a
    /// bucket follow the rank order of their values; with LDP the buckets
    /// are perturbed and members shuffled within each bucket.
    pub fn compute_ordinals(&self, ldp: Option<&LdpConfig>) -> Result<OrdinalsMsg> {
        let mut features = Vec::with_capacity(self.features.feature_count());
        for (f, col) in self.features.columns.iter().enumerate() {
            let b = col.bucket_count();
            let members = match ldp {
                None => {
                    let mut members = bucket_members(&col.bucket_of, b);
                    let values = &self.features.values[f];
                    for m in members.iter_mut() {
                        m.sort_by(|&x, &y| values[x as usize].total_cmp(&values[y as usize]).then(x.cmp(&y)));
                    }
                    members
                }
                Some(cfg) => {
                    let mut rng = derived(cfg.seed, "ldp", ((self.id().0 as u64) << 32) | f as u64);
                    let noisy = cfg.perturb(&col.bucket_of, b, &mut rng)?;
                    shuffled_bucket_members(&noisy, b, &mut rng)
                }
            };
            features.push(FeatureOrdinals { members });
        }
        Ok(OrdinalsMsg { features })
    }

    fn record_threshold(&mut self, feature_ordinal: u32, bucket_ordinal: u16) -> Result<()> {
        let entry = self.features.threshold_entry(feature_ordinal, bucket_ordinal)?;
        self.thresholds.entries.insert((feature_ordinal, bucket_ordinal), entry);
        Ok(())
    }

    fn expandable(&self, depth: usize, route: &[u32], train: &[bool]) -> bool {
        depth < self.max_depth && route.iter().filter(|&&s| train[s as usize]).count() >= 2
    }

    fn on_grads(&mut self, payload: &[u8], out: &mut Outbox) -> Result<()> {
        let msg = GradsMsg::decode(payload, self.key.as_ref())?;
        let n = msg.train.len();
        if let Some(&s) = msg.route.iter().find(|&&s| s as usize >= n) {
            return Err(VflError::Protocol(format!("route names sample {s} of {n}")));
        }
        let mut row = vec![None; n];
        let mut plain = Vec::new();
        let mut k = 0;
        for (s, &t) in msg.train.iter().enumerate() {
            if t {
                row[s] = Some(k);
                k += 1;
            }
        }
        if self.key.is_none() {
            plain = vec![0.0; n * msg.width];
            for (s, r) in row.iter().enumerate() {
                if let Some(r) = r {
                    for j in 0..msg.width {
                        let Cell::Plain(v) = msg.payload[r * msg.width + j] else {
                            return Err(VflError::Protocol("ciphertext in a plaintext session".into()));
                        };
                        plain[s * msg.width + j] = v;
                    }
                }
            }
        }
        let frontier = if self.expandable(0, &msg.route, &msg.train) {
            vec![(0, msg.route)]
        } else {
            Vec::new()
        };
        self.tree = Some(LsTree {
            index: self.trees_seen,
            level: 0,
            train: msg.train,
            width: msg.width,
            plain,
            cells: if self.key.is_some() { msg.payload } else { Vec::new() },
            row,
            frontier,
            waiting: None,
        });
        self.trees_seen += 1;
        self.send_sums(out)
    }

    /// Per-bucket label sums of every local feature at every frontier node.
    pub fn bucket_partial_sums(&self) -> Result<BucketSumsMsg> {
        let tree = self.tree.as_ref().ok_or_else(|| VflError::Protocol("no tree in progress".into()))?;
        let w = tree.width;
        let mut nodes = Vec::with_capacity(tree.frontier.len());
        for (_, route) in &tree.frontier {
            let samples: Vec<u32> = route.iter().copied().filter(|&s| tree.train[s as usize]).collect();
            let mut feats = Vec::with_capacity(self.features.feature_count());
            for col in &self.features.columns {
                let b = col.bucket_count();
                match &self.key {
                    None => {
                        let h = Histogram::accumulate(&col.bucket_of, b, &samples, &tree.plain, w)?;
                        let mut cells = Vec::new();
                        for k in 0..b {
                            if h.counts[k] > 0.0 {
                                cells.extend(h.bucket(k).iter().map(|&v| Cell::Plain(v)));
                            }
                        }
                        feats.push(FeatureSums {
                            counts: h.counts.iter().map(|&c| c as u32).collect(),
                            cells,
                        });
                    }
                    Some(pk) => {
                        let mut counts = vec![0u32; b];
                        let mut acc: Vec<Option<Vec<_>>> = vec![None; b];
                        for &s in &samples {
                            let k = col.bucket_of[s as usize] as usize;
                            let r = tree.row[s as usize].ok_or_else(|| VflError::Protocol("untrained sample in sums".into()))?;
                            counts[k] += 1;
                            let slot = acc[k].get_or_insert_with(|| vec![pk.identity(); w]);
                            for j in 0..w {
                                let Cell::Cipher(c) = &tree.cells[r * w + j] else {
                                    return Err(VflError::Protocol("plaintext in an encrypted session".into()));
                                };
                                slot[j] = pk.add(&slot[j], c)?;
                            }
                        }
                        let cells = acc.into_iter().flatten().flatten().map(Cell::Cipher).collect();
                        feats.push(FeatureSums { counts, cells });
                    }
                }
            }
            nodes.push(feats);
        }
        Ok(BucketSumsMsg { width: w, nodes })
    }

    fn send_sums(&mut self, out: &mut Outbox) -> Result<()> {
        let nonempty = self.tree.as_ref().is_some_and(|t| !t.frontier.is_empty());
        if nonempty {
            let msg = self.bucket_partial_sums()?;
            out.send(self.task, Phase::BucketSums, msg.encode(self.key.as_ref())?);
        }
        Ok(())
    }

    fn on_split_pointer(&mut self, payload: &[u8], out: &mut Outbox) -> Result<()> {
        let msg = SplitPointerMsg::decode(payload)?;
        let Some(tree) = self.tree.as_ref() else {
            // feature-gathering: the pointer only tells the owner which threshold to keep
            for node in &msg.nodes {
                match node {
                    NodeStatus::Own {
                        feature_ordinal,
                        bucket_ordinal,
                    } => self.record_threshold(*feature_ordinal, *bucket_ordinal)?,
                    _ => return Err(VflError::Protocol("unexpected node status outside a tree".into())),
                }
            }
            return Ok(());
        };
        if msg.nodes.len() != tree.frontier.len() {
            return Err(VflError::Protocol(format!(
                "split pointers for {} nodes, frontier has {}",
                msg.nodes.len(),
                tree.frontier.len()
            )));
        }
        let (index, level) = (tree.index, tree.level);
        let n = tree.train.len();
        let mut known: Vec<Option<Vec<bool>>> = Vec::with_capacity(msg.nodes.len());
        let mut replies = Vec::new();
        let mut frames = Vec::new();
        let mut remote = false;
        let routes: Vec<Vec<u32>> = tree.frontier.iter().map(|(_, r)| r.clone()).collect();
        for (k, node) in msg.nodes.iter().enumerate() {
            let route = &routes[k];
            match node {
                NodeStatus::Leaf => known.push(None),
                NodeStatus::Own {
                    feature_ordinal,
                    bucket_ordinal,
                } => {
                    self.record_threshold(*feature_ordinal, *bucket_ordinal)?;
                    let ind = self.features.indicator(*feature_ordinal, *bucket_ordinal, route)?;
                    if let Some(sh) = self.shared.as_mut() {
                        let col = &self.features.columns[*feature_ordinal as usize];
                        let full: Vec<u64> = (0..n).map(|s| (col.bucket_of[s] <= *bucket_ordinal) as u64).collect();
                        let field = sh.dealer.borrow().field();
                        let mut split = ss_split_vec(&full, 2, &field, &mut sh.rng)?;
                        let kept = split.pop().unwrap();
                        frames.push(split.pop().unwrap());
                        sh.kept.push_back((triple_tag(index, level, k), kept));
                    } else {
                        replies.push(ind.clone());
                    }
                    known.push(Some(ind));
                }
                NodeStatus::TaskIndicator(bits) => {
                    if bits.len() != route.len() {
                        return Err(VflError::Protocol("task indicator does not match the node".into()));
                    }
                    known.push(Some(bits.clone()));
                }
                NodeStatus::Remote => {
                    remote = true;
                    known.push(None);
                }
            }
        }
        if self.shared.is_some() {
            if !frames.is_empty() {
                out.send(self.task, Phase::Indicator, FramesMsg { rows: frames }.encode(Phase::Indicator));
            }
        } else if !replies.is_empty() {
            out.send(self.task, Phase::Indicator, IndicatorsMsg { indicators: replies }.encode(Phase::Indicator));
        }
        if remote {
            self.tree.as_mut().unwrap().waiting = Some((msg.nodes, known));
            Ok(())
        } else {
            self.advance(&msg.nodes, known, out)
        }
    }

    fn on_partition(&mut self, payload: &[u8], out: &mut Outbox) -> Result<()> {
        let msg = IndicatorsMsg::decode(payload, Phase::Partition)?;
        let tree = self.tree.as_mut().ok_or_else(|| VflError::Protocol("partition outside a tree".into()))?;
        let (statuses, mut known) = tree
            .waiting
            .take()
            .ok_or_else(|| VflError::Protocol("partition without pending split pointers".into()))?;
        let mut relayed = msg.indicators.into_iter();
        for (k, st) in statuses.iter().enumerate() {
            if *st == NodeStatus::Remote {
                let bits = relayed
                    .next()
                    .ok_or_else(|| VflError::Protocol("partition is missing a node".into()))?;
                if bits.len() != tree.frontier[k].1.len() {
                    return Err(VflError::Protocol("partition indicator does not match the node".into()));
                }
                known[k] = Some(bits);
            }
        }
        if relayed.next().is_some() {
            return Err(VflError::Protocol("partition carries extra nodes".into()));
        }
        self.advance(&statuses, known, out)
    }

    /// Apply this level's partitions and report sums for the next frontier.
    pub fn partition_node(&mut self, statuses: &[NodeStatus], known: Vec<Option<Vec<bool>>>) -> Result<()> {
        let tree = self.tree.as_ref().ok_or_else(|| VflError::Protocol("no tree in progress".into()))?;
        let mut next = Vec::new();
        for ((st, ind), (depth, route)) in statuses.iter().zip(known).zip(&tree.frontier) {
            if *st == NodeStatus::Leaf {
                continue;
            }
            let ind = ind.ok_or_else(|| VflError::Protocol("split without an indicator".into()))?;
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for (&s, &left) in route.iter().zip(&ind) {
                if left {
                    l.push(s);
                } else {
                    r.push(s);
                }
            }
            for child in [l, r] {
                if self.expandable(depth + 1, &child, &tree.train) {
                    next.push((depth + 1, child));
                }
            }
        }
        let tree = self.tree.as_mut().unwrap();
        tree.frontier = next;
        tree.level += 1;
        Ok(())
    }

    fn advance(&mut self, statuses: &[NodeStatus], known: Vec<Option<Vec<bool>>>, out: &mut Outbox) -> Result<()> {
        self.partition_node(statuses, known)?;
        self.send_sums(out)
    }

    /// Second round of the shared-indicator product: the task's frames of
    /// the node membership plus its openings, answered with ours.
    fn on_share_open(&mut self, payload: &[u8], out: &mut Outbox) -> Result<()> {
        let msg = FramesMsg::decode(payload, Phase::ShareOpen)?;
        let sh = self
            .shared
            .as_mut()
            .ok_or_else(|| VflError::Protocol("share opening in a session without shared indicators".into()))?;
        if msg.rows.len() % 3 != 0 {
            return Err(VflError::Protocol("share opening rows come in threes".into()));
        }
        let field = sh.dealer.borrow().field();
        let mut rows = Vec::with_capacity(msg.rows.len());
        for chunk in msg.rows.chunks(3) {
            let (tag, l_o) = sh
                .kept
                .pop_front()
                .ok_or_else(|| VflError::Protocol("share opening without a kept frame".into()))?;
            let (n_o, d_t, e_t) = (&chunk[0], &chunk[1], &chunk[2]);
            let len = l_o.len();
            if n_o.len() != len || d_t.len() != len || e_t.len() != len {
                return Err(VflError::Protocol("share opening length mismatch".into()));
            }
            let triples = sh.dealer.borrow_mut().take(tag, 1, len)?;
            let (mut d_o, mut e_o, mut z_o) = (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
            for i in 0..len {
                let (d, e) = beaver_open(&field, n_o[i], l_o[i], &triples[i]);
                let z = beaver_finish(&field, 1, field.add(d, d_t[i]), field.add(e, e_t[i]), &triples[i]);
                d_o.push(d);
                e_o.push(e);
                z_o.push(z);
            }
            rows.extend([d_o, e_o, z_o]);
        }
        out.send(self.task, Phase::ShareOpen, FramesMsg { rows }.encode(Phase::ShareOpen));
        Ok(())
    }
}

impl Handler for DataParty {
    fn party(&self) -> PartyId {
        self.id()
    }

    fn handle(&mut self, env: Envelope, out: &mut Outbox) -> Result<()> {
        if env.from != self.task {
            return Err(VflError::Protocol(format!("{} accepts training messages only from the task party", self.id())));
        }
        match env.phase {
            Phase::PublicKey => {
                let msg = PublicKeyMsg::decode(&env.payload)?;
                self.key = Some(PublicKey::from_modulus(BigUint::from_bytes_be(&msg.modulus))?);
                Ok(())
            }
            Phase::Grads => self.on_grads(&env.payload, out),
            Phase::SplitPointer => self.on_split_pointer(&env.payload, out),
            Phase::Partition => self.on_partition(&env.payload, out),
            Phase::ShareOpen => self.on_share_open(&env.payload, out),
            other => Err(VflError::Protocol(format!("{} does not handle {other}", self.id()))),
        }
    }
}

/// Random field element; used by the task side of the shared-indicator product.
pub(crate) fn random_frame<R: Rng>(field: &crate::privacy::Field, len: usize, rng: &mut R) -> Vec<u64> {
    (0..len).map(|_| field.random(rng)).collect()
}
