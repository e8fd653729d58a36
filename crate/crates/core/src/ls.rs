// SPDX-License-Identifier: Apache-2.0

//! Label-scattering training: the task party sends label information out
//! once per tree, and data parties answer each level with bucket sums.

use std::cell::RefCell;
use std::rc::Rc;
use std::time::Instant;

use crate::dataset::TabularData;
use crate::error::{Result, VflError};
use crate::messaging::{Envelope, PartyId, Phase};
use crate::party::{random_frame, triple_tag, DataParty, SharedIndicators};
use crate::privacy::fixed_point::FixedPointCodec;
use crate::privacy::paillier::{paillier_keygen, PaillierKeyPair};
use crate::privacy::secret_sharing::{beaver_finish, beaver_open, Field, KeyedDealer};
use crate::protocol::{BucketSumsMsg, Cell, FramesMsg, GradsMsg, IndicatorsMsg, NodeStatus, PublicKeyMsg, SplitPointerMsg};
use crate::rng::{derive_seed, derived, SessionRng};
use crate::session::{
    setup_parties, train_trees, Federation, FrontierNode, Protection, RemoteHistogram, Timings, TrainConfig,
    TrainedModel, TreeCtx, TreeProtocol,
};
use crate::split::{Candidate, Histogram};

struct TaskShared {
    dealer: Rc<RefCell<KeyedDealer>>,
    field: Field,
    rng: SessionRng,
}

pub struct LsBackend<'f> {
    fed: &'f mut Federation,
    key: Option<PaillierKeyPair>,
    codec: FixedPointCodec,
    rng: SessionRng,
    shared: Option<TaskShared>,
    stash: Vec<Envelope>,
    tree_index: u64,
    level: u32,
}

impl<'f> LsBackend<'f> {
    fn pump(&mut self) -> Result<()> {
        let got = self.fed.pump()?;
        self.stash.extend(got);
        Ok(())
    }

    fn take(&mut self, from: PartyId, phase: Phase) -> Result<Envelope> {
        let pos = self
            .stash
            .iter()
            .position(|e| e.from == from && e.phase == phase)
            .ok_or_else(|| VflError::Protocol(format!("no {phase} message from {from}")))?;
        Ok(self.stash.remove(pos))
    }

    fn decode_cell(&self, c: &Cell) -> Result<f64> {
        match (c, &self.key) {
            (Cell::Plain(v), None) => Ok(*v),
            (Cell::Cipher(c), Some(k)) => self.codec.decode_plain(&k.private.decrypt(c)?, k.public.n()),
            _ => Err(VflError::Protocol("bucket sums do not match the session encryption".into())),
        }
    }

    /// Shared-indicator product for the nodes `owned` by `owner`: the owner
    /// sent its task-side frames of the full-space left indicator; return
    /// left indicators over each node's route.
    fn shared_product(
        &mut self,
        owner: PartyId,
        frontier: &[FrontierNode],
        owned: &[usize],
        n: usize,
    ) -> Result<Vec<Vec<bool>>> {
        let env = self.take(owner, Phase::Indicator)?;
        let frames = FramesMsg::decode(&env.payload, Phase::Indicator)?;
        if frames.rows.len() != owned.len() {
            return Err(VflError::Protocol("indicator frames for the wrong number of nodes".into()));
        }
        let (tree, level) = (self.tree_index, self.level);
        let sh = self.shared.as_mut().unwrap();
        let f = sh.field;
        let mut open_rows = Vec::with_capacity(3 * owned.len());
        let mut mine = Vec::with_capacity(owned.len());
        for (&k, l_t) in owned.iter().zip(&frames.rows) {
            if l_t.len() != n {
                return Err(VflError::Protocol("indicator frame is not full length".into()));
            }
            let mut membership = vec![0u64; n];
            for &s in &frontier[k].route {
                membership[s as usize] += 1;
            }
            let n_o = random_frame(&f, n, &mut sh.rng);
            let n_t: Vec<u64> = membership.iter().zip(&n_o).map(|(&p, &o)| f.sub(p, o)).collect();
            let triples = sh.dealer.borrow_mut().take(triple_tag(tree, level, k), 0, n)?;
            let (mut d_t, mut e_t) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                let (d, e) = beaver_open(&f, n_t[i], l_t[i], &triples[i]);
                d_t.push(d);
                e_t.push(e);
            }
            open_rows.extend([n_o, d_t.clone(), e_t.clone()]);
            mine.push((membership, d_t, e_t, triples));
        }
        let task = self.fed.task;
        self.fed
            .bus
            .send(task, owner, Phase::ShareOpen, FramesMsg { rows: open_rows }.encode(Phase::ShareOpen))?;
        self.pump()?;
        let env = self.take(owner, Phase::ShareOpen)?;
        let reply = FramesMsg::decode(&env.payload, Phase::ShareOpen)?;
        if reply.rows.len() != 3 * owned.len() || reply.rows.iter().any(|r| r.len() != n) {
            return Err(VflError::Protocol("malformed share opening reply".into()));
        }
        let mut out = Vec::with_capacity(owned.len());
        for ((&k, (membership, d_t, e_t, triples)), rows) in owned.iter().zip(mine).zip(reply.rows.chunks(3)) {
            let (d_o, e_o, z_o) = (&rows[0], &rows[1], &rows[2]);
            let mut left = vec![0u64; n];
            for i in 0..n {
                let z_t = beaver_finish(&f, 0, f.add(d_t[i], d_o[i]), f.add(e_t[i], e_o[i]), &triples[i]);
                left[i] = f.add(z_t, z_o[i]);
                if left[i] != 0 && left[i] != membership[i] {
                    return Err(VflError::Protocol(format!("shared product gave {} for sample {i}", left[i])));
                }
            }
            out.push(frontier[k].route.iter().map(|&s| left[s as usize] > 0).collect());
        }
        Ok(out)
    }
}

impl TreeProtocol for LsBackend<'_> {
    fn begin_tree(&mut self, ctx: &TreeCtx<'_>, root_route: &[u32], _root_expandable: bool) -> Result<()> {
        self.tree_index = ctx.tree_index as u64;
        self.level = 0;
        self.stash.clear();
        let width = ctx.criterion.width();
        let mut payload = Vec::new();
        for (s, &t) in ctx.train.iter().enumerate() {
            if !t {
                continue;
            }
            for &v in &ctx.payload[s * width..(s + 1) * width] {
                payload.push(match &self.key {
                    None => Cell::Plain(v),
                    Some(k) => {
                        let m = self.codec.encode_plain(v, k.public.n())?;
                        Cell::Cipher(k.private.encrypt(&m, &mut self.rng)?)
                    }
                });
            }
        }
        let msg = GradsMsg {
            route: root_route.to_vec(),
            train: ctx.train.to_vec(),
            width,
            payload,
        };
        let bytes = msg.encode(self.key.as_ref().map(|k| &k.public))?;
        let task = self.fed.task;
        for d in self.fed.data_ids() {
            self.fed.bus.send(task, d, Phase::Grads, bytes.clone())?;
        }
        self.pump()
    }

    fn level_histograms(&mut self, ctx: &TreeCtx<'_>, frontier: &[FrontierNode]) -> Result<Vec<Vec<RemoteHistogram>>> {
        let width = ctx.criterion.width();
        let mut out: Vec<Vec<RemoteHistogram>> = vec![Vec::new(); frontier.len()];
        for d in self.fed.data_ids() {
            let env = self.take(d, Phase::BucketSums)?;
            let msg = BucketSumsMsg::decode(&env.payload, self.key.as_ref().map(|k| &k.public))?;
            if msg.nodes.len() != frontier.len() || msg.width != width {
                return Err(VflError::Protocol(format!("bucket sums from {d} do not match the frontier")));
            }
            for (k, node) in msg.nodes.iter().enumerate() {
                for (f, sums) in node.iter().enumerate() {
                    let mut h = Histogram::zeros(sums.counts.len(), width);
                    let mut cells = sums.cells.iter();
                    for (b, &c) in sums.counts.iter().enumerate() {
                        h.counts[b] = c as f64;
                        if c == 0 {
                            continue;
                        }
                        for j in 0..width {
                            let cell = cells.next().ok_or_else(|| VflError::Protocol("bucket sums are short".into()))?;
                            h.sums[b * width + j] = self.decode_cell(cell)?;
                        }
                    }
                    out[k].push(RemoteHistogram {
                        party: d,
                        feature_ordinal: f as u32,
                        histogram: h,
                    });
                }
            }
        }
        Ok(out)
    }

    fn resolve_splits(
        &mut self,
        ctx: &TreeCtx<'_>,
        frontier: &[FrontierNode],
        decisions: &[Option<Candidate>],
        local: &[Option<Vec<bool>>],
        next_nonempty: bool,
    ) -> Result<Vec<Option<Vec<bool>>>> {
        let task = self.fed.task;
        let data = self.fed.data_ids();
        let n = ctx.train.len();
        let mut owned_by: Vec<Vec<usize>> = vec![Vec::new(); data.len()];
        for (di, &d) in data.iter().enumerate() {
            let mut owns = false;
            let nodes: Vec<NodeStatus> = decisions
                .iter()
                .enumerate()
                .map(|(k, dec)| match dec {
                    None => NodeStatus::Leaf,
                    Some(c) if c.pointer.party == task => NodeStatus::TaskIndicator(local[k].clone().unwrap_or_default()),
                    Some(c) if c.pointer.party == d => {
                        owns = true;
                        owned_by[di].push(k);
                        NodeStatus::Own {
                            feature_ordinal: c.pointer.feature_ordinal,
                            bucket_ordinal: c.pointer.bucket_ordinal,
                        }
                    }
                    Some(_) => NodeStatus::Remote,
                })
                .collect();
            if owns || next_nonempty {
                self.fed
                    .bus
                    .send(task, d, Phase::SplitPointer, SplitPointerMsg { nodes }.encode())?;
            }
        }
        self.pump()?;

        let mut remote: Vec<Option<Vec<bool>>> = vec![None; frontier.len()];
        for (di, &d) in data.iter().enumerate() {
            if owned_by[di].is_empty() {
                continue;
            }
            let inds = if self.shared.is_some() {
                self.shared_product(d, frontier, &owned_by[di], n)?
            } else {
                let env = self.take(d, Phase::Indicator)?;
                IndicatorsMsg::decode(&env.payload, Phase::Indicator)?.indicators
            };
            if inds.len() != owned_by[di].len() {
                return Err(VflError::Protocol(format!("{d} answered {} indicators for {} splits", inds.len(), owned_by[di].len())));
            }
            for (&k, ind) in owned_by[di].iter().zip(inds) {
                remote[k] = Some(ind);
            }
        }

        if data.len() >= 2 && next_nonempty {
            for &d in &data {
                let relay: Vec<Vec<bool>> = decisions
                    .iter()
                    .enumerate()
                    .filter(|(_, dec)| dec.is_some_and(|c| c.pointer.party != task && c.pointer.party != d))
                    .map(|(k, _)| remote[k].clone().unwrap_or_default())
                    .collect();
                if !relay.is_empty() {
                    self.fed.bus.send(
                        task,
                        d,
                        Phase::Partition,
                        IndicatorsMsg { indicators: relay }.encode(Phase::Partition),
                    )?;
                }
            }
            self.pump()?;
        }
        self.level += 1;
        Ok(remote)
    }
}

/// Train over label-scattering. `parts[0]` is the task party.
pub fn build_trees_ls(parts: &[TabularData], config: &TrainConfig, start: Instant) -> Result<TrainedModel> {
    let (bus, mut task, features) = setup_parties(parts, config)?;
    let seed = config.hyper.seed;
    let task_id = task.features.party;
    let mut key = None;
    let mut codec = FixedPointCodec::default();
    let mut shared = None;
    let mut data: Vec<DataParty> = Vec::with_capacity(features.len());
    match config.protection {
        Protection::Paillier { key_bits, scale_bits } => {
            codec = FixedPointCodec::new(scale_bits)?;
            let pair = paillier_keygen(key_bits, derive_seed(seed, "keygen", 0))?;
            key = Some(pair);
        }
        Protection::SecretSharing { prime_bits } => {
            let field = Field::with_prime_bits(prime_bits)?;
            if (task.n() as u64) >= field.modulus() {
                return Err(VflError::Config(format!(
                    "a {prime_bits}-bit field cannot hold sample multiplicities up to {}",
                    task.n()
                )));
            }
            let dealer = Rc::new(RefCell::new(KeyedDealer::new(field, derive_seed(seed, "dealer", 0))));
            shared = Some(TaskShared {
                dealer,
                field,
                rng: derived(seed, "frames", task_id.0 as u64),
            });
        }
        _ => {}
    }
    for f in features {
        let mut d = DataParty::new(f, task_id, config.hyper.max_depth);
        if let Some(sh) = &shared {
            let id = d.id();
            d = d.with_shared_indicators(SharedIndicators::new(sh.dealer.clone(), seed, id));
        }
        data.push(d);
    }
    let catalog: Vec<usize> = std::iter::once(task.features.feature_count())
        .chain(data.iter().map(|d| d.features.feature_count()))
        .collect();
    let mut fed = Federation::new(bus, task_id, data);
    if let Some(pair) = &key {
        let msg = PublicKeyMsg {
            modulus: pair.public.n().to_bytes_be(),
        };
        for d in fed.data_ids() {
            fed.bus.send(task_id, d, Phase::PublicKey, msg.encode())?;
        }
        let stray = fed.pump()?;
        if !stray.is_empty() {
            return Err(VflError::Protocol("unexpected reply to the public key".into()));
        }
        // per-sample payload magnitudes are bounded by the largest label or gradient
        let max_abs = task.labels.iter().fold(1.0f64, |m, y| m.max(y.abs() * y.abs()).max(y.abs()));
        codec.check_capacity(max_abs.max(1.0), task.n(), pair.public.bits())?;
    }
    let setup_secs = start.elapsed().as_secs_f64();

    let mut backend = LsBackend {
        fed: &mut fed,
        key,
        codec,
        rng: derived(seed, "encrypt", 0),
        shared,
        stash: Vec::new(),
        tree_index: 0,
        level: 0,
    };
    let (ensemble, train_raw) = train_trees(&mut backend, &mut task, &catalog, config)?;

    let mut thresholds = vec![task.thresholds];
    thresholds.extend(fed.data_parties.iter().map(|d| d.thresholds.clone()));
    Ok(TrainedModel {
        ensemble,
        thresholds,
        train_raw,
        stats: fed.stats(),
        transcript_digest: fed.bus.transcript_digest(),
        timings: Timings {
            setup_secs,
            train_secs: start.elapsed().as_secs_f64(),
        },
    })
}
