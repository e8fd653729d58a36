// SPDX-License-Identifier: Apache-2.0

//! Federated inference.
//!
//! Two procedures: the task party walks each tree and asks the owner of every
//! remote split which way a sample goes, or every party reports which leaves
//! a sample can still reach given the splits it owns and the task party ANDs
//! the vectors. Leaves are numbered left to right.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::Rng;

use crate::dataset::TabularData;
use crate::error::{Result, VflError};
use crate::messaging::{Bus, CommStats, Envelope, Handler, Mailbox, Outbox, PartyId, Phase, Role};
use crate::privacy::paillier::{PaillierKeyPair, PublicKey};
use crate::rng::derived;
use crate::tree::{ensemble_predict, Ensemble, Prediction, SplitPointer, ThresholdTable, TreeNode};
use crate::wire::{Decoder, Encoder};

/// One party's inference-time view: its feature slice and its thresholds.
#[derive(Debug, Clone)]
pub struct InferenceParty {
    pub party: PartyId,
    pub data: TabularData,
    pub thresholds: ThresholdTable,
    by_name: HashMap<String, usize>,
}

impl InferenceParty {
    pub fn new(party: PartyId, data: TabularData, thresholds: ThresholdTable) -> Result<Self> {
        if thresholds.party != party {
            return Err(VflError::Model(format!("thresholds of {} given to {party}", thresholds.party)));
        }
        let by_name = data.columns().iter().enumerate().map(|(i, c)| (c.name.clone(), i)).collect();
        Ok(InferenceParty {
            party,
            data,
            thresholds,
            by_name,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.data.n_samples()
    }

    /// Whether `sample` takes the left branch of a split this party owns.
    pub fn go_left(&self, split: &SplitPointer, sample: usize) -> Result<bool> {
        if split.party != self.party {
            return Err(VflError::Model(format!("{} cannot resolve a split of {}", self.party, split.party)));
        }
        let entry = self
            .thresholds
            .lookup(split.feature_ordinal, split.bucket_ordinal)
            .ok_or_else(|| {
                VflError::Model(format!(
                    "{} has no threshold for feature {} bucket {}",
                    self.party, split.feature_ordinal, split.bucket_ordinal
                ))
            })?;
        let col = self
            .by_name
            .get(&entry.feature_name)
            .and_then(|&i| self.data.columns()[i].as_numeric())
            .ok_or_else(|| VflError::Schema(format!("{} has no numeric column {:?}", self.party, entry.feature_name)))?;
        let v = *col
            .get(sample)
            .ok_or_else(|| VflError::Schema(format!("sample {sample} out of range at {}", self.party)))?;
        Ok(v <= entry.threshold)
    }

    /// Reachable leaves of `tree` for `sample` given only this party's splits.
    pub fn leaf_indicator(&self, tree: &TreeNode, sample: usize) -> Result<Vec<bool>> {
        let mut out = Vec::with_capacity(tree.leaf_count());
        self.expand(tree, sample, true, &mut out)?;
        Ok(out)
    }

    fn expand(&self, node: &TreeNode, sample: usize, reachable: bool, out: &mut Vec<bool>) -> Result<()> {
        match node {
            TreeNode::Leaf { .. } => out.push(reachable),
            TreeNode::Internal { split, left, right } => {
                let (l, r) = if !reachable {
                    (false, false)
                } else if split.party == self.party {
                    let go = self.go_left(split, sample)?;
                    (go, !go)
                } else {
                    (true, true)
                };
                self.expand(left, sample, l, out)?;
                self.expand(right, sample, r, out)?;
            }
        }
        Ok(())
    }
}

/// Index of the single set bit of the element-wise AND.
pub fn and_indicators(vectors: &[Vec<bool>]) -> Result<usize> {
    let len = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != len) {
        return Err(VflError::Protocol("leaf indicators differ in length".into()));
    }
    let hits: Vec<usize> = (0..len).filter(|&i| vectors.iter().all(|v| v[i])).collect();
    match hits.as_slice() {
        [one] => Ok(*one),
        _ => Err(VflError::Protocol(format!("AND of leaf indicators has {} set bits", hits.len()))),
    }
}

fn check_parties(parties: &[InferenceParty]) -> Result<()> {
    if parties.is_empty() {
        return Err(VflError::Config("no parties".into()));
    }
    for (i, p) in parties.iter().enumerate() {
        if p.party.index() != i {
            return Err(VflError::Config(format!("party {} listed at position {i}", p.party)));
        }
    }
    Ok(())
}

/// Task-led traversal of one sample. `parties[0]` is the task party.
/// Returns the prediction and the number of remote queries.
pub fn predict_task_led(ensemble: &Ensemble, parties: &[InferenceParty], sample: usize) -> Result<(Prediction, u64)> {
    check_parties(parties)?;
    let mut queries = 0;
    let mut leaves = Vec::with_capacity(ensemble.trees.len());
    for tree in &ensemble.trees {
        let mut node = tree;
        loop {
            match node {
                TreeNode::Leaf { value } => {
                    leaves.push(*value);
                    break;
                }
                TreeNode::Internal { split, left, right } => {
                    let owner = parties
                        .get(split.party.index())
                        .ok_or(VflError::UnknownParty(split.party))?;
                    if split.party != parties[0].party {
                        queries += 1;
                    }
                    node = if owner.go_left(split, sample)? { left } else { right };
                }
            }
        }
    }
    Ok((ensemble_predict(ensemble, &leaves)?, queries))
}

#[derive(Debug, Clone, Copy)]
pub enum Aggregation<'k> {
    Plaintext,
    /// The task party encrypts its bits; each data party multiplies in its
    /// own bit homomorphically; the task party decrypts the product.
    PaillierMasked(&'k PaillierKeyPair),
}

/// Indicator-vector inference of one sample. `parties[0]` is the task party.
pub fn predict_indicator(
    ensemble: &Ensemble,
    parties: &[InferenceParty],
    sample: usize,
    aggregation: Aggregation<'_>,
) -> Result<Prediction> {
    check_parties(parties)?;
    let mut rng = derived(sample as u64, "mask", 0);
    let mut leaves = Vec::with_capacity(ensemble.trees.len());
    for tree in &ensemble.trees {
        let vectors = parties
            .iter()
            .map(|p| p.leaf_indicator(tree, sample))
            .collect::<Result<Vec<_>>>()?;
        let hit = match aggregation {
            Aggregation::Plaintext => and_indicators(&vectors)?,
            Aggregation::PaillierMasked(key) => {
                let pk = &key.public;
                let mut cells = vectors[0]
                    .iter()
                    .map(|&b| key.private.encrypt(&BigUint::from(b as u8), &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                for v in &vectors[1..] {
                    cells = mask_product(pk, &cells, v, &mut rng)?;
                }
                let bits = cells
                    .iter()
                    .map(|c| Ok(!key.private.decrypt(c)?.is_zero()))
                    .collect::<Result<Vec<bool>>>()?;
                and_indicators(&[bits])?
            }
        };
        leaves.push(tree.leaf_values()[hit]);
    }
    ensemble_predict(ensemble, &leaves)
}

fn mask_product<R: Rng>(
    pk: &PublicKey,
    cells: &[crate::privacy::CipherScalar],
    bits: &[bool],
    rng: &mut R,
) -> Result<Vec<crate::privacy::CipherScalar>> {
    if cells.len() != bits.len() {
        return Err(VflError::Protocol("masked indicator length mismatch".into()));
    }
    let one = BigUint::one();
    let zero = BigUint::zero();
    cells
        .iter()
        .zip(bits)
        .map(|(c, &b)| pk.rerandomize(&pk.scalar_mul(c, if b { &one } else { &zero })?, rng))
        .collect()
}

struct QueryMsg {
    id: u32,
    feature_ordinal: u32,
    bucket_ordinal: u16,
    samples: Vec<u32>,
}

impl QueryMsg {
    fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u32(self.id).u32(self.feature_ordinal).u16(self.bucket_ordinal).u32s(&self.samples);
        e.into_record(Phase::SplitQuery)
    }

    fn decode(payload: &[u8]) -> Result<Self> {
        let mut d = Decoder::record(payload, Phase::SplitQuery)?;
        let msg = QueryMsg {
            id: d.u32()?,
            feature_ordinal: d.u32()?,
            bucket_ordinal: d.u16()?,
            samples: d.u32s()?,
        };
        d.finish()?;
        Ok(msg)
    }
}

fn encode_answer(id: u32, bits: &[bool]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u32(id).bits(bits);
    e.into_record(Phase::SplitAnswer)
}

fn decode_answer(payload: &[u8]) -> Result<(u32, Vec<bool>)> {
    let mut d = Decoder::record(payload, Phase::SplitAnswer)?;
    let id = d.u32()?;
    let bits = d.bits()?;
    d.finish()?;
    Ok((id, bits))
}

/// Leaf indicators of one tree for a batch, sample-major.
enum IndicatorBody {
    Plain(Vec<bool>),
    Masked(Vec<crate::privacy::CipherScalar>),
}

fn encode_indicator(tree: u32, leaves: u32, body: &IndicatorBody, key: Option<&PublicKey>) -> Result<Vec<u8>> {
    let mut e = Encoder::new();
    e.u32(tree).u32(leaves);
    match (body, key) {
        (IndicatorBody::Plain(bits), None) => {
            e.bits(bits);
        }
        (IndicatorBody::Masked(cells), Some(pk)) => {
            e.len(cells.len());
            for c in cells {
                e.raw(&pk.cipher_to_bytes(c)?);
            }
        }
        _ => return Err(VflError::Protocol("indicator masking does not match the session".into())),
    }
    Ok(e.into_record(Phase::LeafIndicator))
}

fn decode_indicator(payload: &[u8], key: Option<&PublicKey>) -> Result<(u32, u32, IndicatorBody)> {
    let mut d = Decoder::record(payload, Phase::LeafIndicator)?;
    let tree = d.u32()?;
    let leaves = d.u32()?;
    let body = match key {
        None => IndicatorBody::Plain(d.bits()?),
        Some(pk) => {
            let n = d.len()?;
            IndicatorBody::Masked(
                (0..n)
                    .map(|_| pk.cipher_from_bytes(d.raw(pk.cipher_bytes())?))
                    .collect::<Result<_>>()?,
            )
        }
    };
    d.finish()?;
    Ok((tree, leaves, body))
}

/// A data party answering inference traffic.
struct Responder<'a> {
    view: &'a InferenceParty,
    ensemble: &'a Ensemble,
    samples: &'a [usize],
    key: Option<&'a PublicKey>,
    next: PartyId,
    rng: crate::rng::SessionRng,
}

impl Responder<'_> {
    fn indicator_bits(&self, tree: usize) -> Result<Vec<bool>> {
        let mut bits = Vec::new();
        for &s in self.samples {
            bits.extend(self.view.leaf_indicator(&self.ensemble.trees[tree], s)?);
        }
        Ok(bits)
    }
}

impl Handler for Responder<'_> {
    fn party(&self) -> PartyId {
        self.view.party
    }

    fn handle(&mut self, env: Envelope, out: &mut Outbox) -> Result<()> {
        match env.phase {
            Phase::SplitQuery => {
                let q = QueryMsg::decode(&env.payload)?;
                let split = SplitPointer {
                    party: self.view.party,
                    feature_ordinal: q.feature_ordinal,
                    bucket_ordinal: q.bucket_ordinal,
                };
                let bits = q
                    .samples
                    .iter()
                    .map(|&s| self.view.go_left(&split, s as usize))
                    .collect::<Result<Vec<_>>>()?;
                out.send(env.from, Phase::SplitAnswer, encode_answer(q.id, &bits));
                Ok(())
            }
            Phase::LeafIndicator => {
                let pk = self
                    .key
                    .ok_or_else(|| VflError::Protocol("masked indicator in a plaintext session".into()))?;
                let (tree, leaves, body) = decode_indicator(&env.payload, Some(pk))?;
                let IndicatorBody::Masked(cells) = body else {
                    unreachable!("decoded with a key")
                };
                let own = self.indicator_bits(tree as usize)?;
                let product = mask_product(pk, &cells, &own, &mut self.rng)?;
                let msg = encode_indicator(tree, leaves, &IndicatorBody::Masked(product), Some(pk))?;
                out.send(self.next, Phase::LeafIndicator, msg);
                Ok(())
            }
            other => Err(VflError::Protocol(format!("{} does not handle {other} at inference", self.view.party))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchPredictions {
    pub predictions: Vec<Prediction>,
    /// Remote queries per sample (task-led only).
    pub queries: Vec<u64>,
    pub stats: CommStats,
}

fn inference_bus(parties: &[InferenceParty]) -> Result<Bus> {
    check_parties(parties)?;
    let n = parties[0].n_samples();
    if parties.iter().any(|p| p.n_samples() != n) {
        return Err(VflError::Schema("parties hold different numbers of samples".into()));
    }
    if parties.iter().any(|p| p.data.sample_ids() != parties[0].data.sample_ids()) {
        return Err(VflError::Schema("parties are not aligned on sample ids".into()));
    }
    let mut bus = Bus::new();
    for i in 0..parties.len() {
        bus.register_party(if i == 0 { Role::Task } else { Role::Data })?;
    }
    Ok(bus)
}

fn responders<'a>(
    parties: &'a [InferenceParty],
    ensemble: &'a Ensemble,
    samples: &'a [usize],
    key: Option<&'a PublicKey>,
) -> Vec<Responder<'a>> {
    let m = parties.len();
    parties[1..]
        .iter()
        .map(|p| Responder {
            view: p,
            ensemble,
            samples,
            key,
            next: if p.party.index() + 1 < m { PartyId(p.party.0 + 1) } else { parties[0].party },
            rng: derived(p.party.0 as u64, "mask", 1),
        })
        .collect()
}

fn pump(bus: &mut Bus, inbox: &mut Mailbox, resp: &mut [Responder<'_>]) -> Result<Vec<Envelope>> {
    let mut handlers: Vec<&mut dyn Handler> = Vec::with_capacity(resp.len() + 1);
    handlers.push(inbox);
    for r in resp.iter_mut() {
        handlers.push(r);
    }
    bus.run_until_idle(&mut handlers)?;
    Ok(inbox.drain())
}

/// Task-led inference over the bus for a batch of samples; one query per
/// (tree, node) carries every sample waiting at that node.
pub fn predict_task_led_batch(ensemble: &Ensemble, parties: &[InferenceParty], samples: &[usize]) -> Result<BatchPredictions> {
    let mut bus = inference_bus(parties)?;
    let task = parties[0].party;
    let mut inbox = Mailbox::new(task);
    let mut resp = responders(parties, ensemble, samples, None);
    let mut queries = vec![0u64; samples.len()];
    let mut leaves = vec![Vec::with_capacity(ensemble.trees.len()); samples.len()];

    for tree in &ensemble.trees {
        let mut frontier: Vec<(&TreeNode, Vec<usize>)> = vec![(tree, (0..samples.len()).collect())];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            let mut pending = Vec::new();
            for (node, pos) in frontier {
                match node {
                    TreeNode::Leaf { value } => {
                        for &p in &pos {
                            leaves[p].push(*value);
                        }
                    }
                    TreeNode::Internal { split, left, right } => {
                        if split.party == task {
                            let (mut l, mut r) = (Vec::new(), Vec::new());
                            for p in pos {
                                if parties[0].go_left(split, samples[p])? {
                                    l.push(p);
                                } else {
                                    r.push(p);
                                }
                            }
                            next.push((&**left, l));
                            next.push((&**right, r));
                        } else {
                            if split.party.index() >= parties.len() {
                                return Err(VflError::UnknownParty(split.party));
                            }
                            let id = pending.len() as u32;
                            let msg = QueryMsg {
                                id,
                                feature_ordinal: split.feature_ordinal,
                                bucket_ordinal: split.bucket_ordinal,
                                samples: pos.iter().map(|&p| samples[p] as u32).collect(),
                            };
                            bus.send(task, split.party, Phase::SplitQuery, msg.encode())?;
                            pending.push((&**left, &**right, pos));
                        }
                    }
                }
            }
            if !pending.is_empty() {
                let mut answers: HashMap<u32, Vec<bool>> = HashMap::new();
                for env in pump(&mut bus, &mut inbox, &mut resp)? {
                    let (id, bits) = decode_answer(&env.payload)?;
                    answers.insert(id, bits);
                }
                for (id, (left, right, pos)) in pending.into_iter().enumerate() {
                    let bits = answers
                        .remove(&(id as u32))
                        .ok_or_else(|| VflError::Protocol(format!("no answer to query {id}")))?;
                    if bits.len() != pos.len() {
                        return Err(VflError::Protocol("answer length mismatch".into()));
                    }
                    let (mut l, mut r) = (Vec::new(), Vec::new());
                    for (p, go) in pos.into_iter().zip(bits) {
                        queries[p] += 1;
                        if go {
                            l.push(p);
                        } else {
                            r.push(p);
                        }
                    }
                    next.push((left, l));
                    next.push((right, r));
                }
            }
            frontier = next.into_iter().filter(|(_, p)| !p.is_empty()).collect();
        }
    }
    let predictions = leaves
        .iter()
        .map(|l| ensemble_predict(ensemble, l))
        .collect::<Result<_>>()?;
    Ok(BatchPredictions {
        predictions,
        queries,
        stats: bus.snapshot_stats(),
    })
}

/// Indicator inference over the bus for a batch of samples. Plaintext: one
/// `leaf_indicator` message per data party per tree. Masked: the task
/// party's encrypted vector travels through every data party and back.
pub fn predict_indicator_batch(
    ensemble: &Ensemble,
    parties: &[InferenceParty],
    samples: &[usize],
    aggregation: Aggregation<'_>,
) -> Result<BatchPredictions> {
    let mut bus = inference_bus(parties)?;
    let task = parties[0].party;
    let mut inbox = Mailbox::new(task);
    let key = match aggregation {
        Aggregation::Plaintext => None,
        Aggregation::PaillierMasked(k) => Some(k),
    };
    let mut resp = responders(parties, ensemble, samples, key.map(|k| &k.public));
    let mut rng = derived(0, "mask", 0);
    let mut leaves = vec![Vec::with_capacity(ensemble.trees.len()); samples.len()];

    for (t, tree) in ensemble.trees.iter().enumerate() {
        let width = tree.leaf_count();
        let mut own = Vec::with_capacity(samples.len() * width);
        for &s in samples {
            own.extend(parties[0].leaf_indicator(tree, s)?);
        }
        let combined: Vec<bool> = match key {
            None => {
                for r in &resp {
                    let bits = r.indicator_bits(t)?;
                    let msg = encode_indicator(t as u32, width as u32, &IndicatorBody::Plain(bits), None)?;
                    bus.send(r.view.party, task, Phase::LeafIndicator, msg)?;
                }
                let mut acc = own;
                for env in pump(&mut bus, &mut inbox, &mut resp)? {
                    let (_, _, IndicatorBody::Plain(bits)) = decode_indicator(&env.payload, None)? else {
                        unreachable!("decoded without a key")
                    };
                    if bits.len() != acc.len() {
                        return Err(VflError::Protocol("leaf indicator length mismatch".into()));
                    }
                    for (a, b) in acc.iter_mut().zip(bits) {
                        *a &= b;
                    }
                }
                acc
            }
            Some(k) => {
                let cells = own
                    .iter()
                    .map(|&b| k.private.encrypt(&BigUint::from(b as u8), &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                if parties.len() == 1 {
                    own
                } else {
                    let msg = encode_indicator(t as u32, width as u32, &IndicatorBody::Masked(cells), Some(&k.public))?;
                    bus.send(task, PartyId(1), Phase::LeafIndicator, msg)?;
                    let got = pump(&mut bus, &mut inbox, &mut resp)?;
                    let [env] = got.as_slice() else {
                        return Err(VflError::Protocol("masked indicator did not come back".into()));
                    };
                    let (_, _, IndicatorBody::Masked(cells)) = decode_indicator(&env.payload, Some(&k.public))? else {
                        unreachable!("decoded with a key")
                    };
                    cells
                        .iter()
                        .map(|c| Ok(!k.private.decrypt(c)?.is_zero()))
                        .collect::<Result<_>>()?
                }
            }
        };
        let values = tree.leaf_values();
        for (i, row) in combined.chunks(width).enumerate() {
            let hit = and_indicators(&[row.to_vec()])?;
            leaves[i].push(values[hit]);
        }
    }
    let predictions = leaves
        .iter()
        .map(|l| ensemble_predict(ensemble, l))
        .collect::<Result<_>>()?;
    Ok(BatchPredictions {
        predictions,
        queries: vec![0; samples.len()],
        stats: bus.snapshot_stats(),
    })
}

/// `sample_id,raw_score,output` rows.
pub fn predictions_csv(sample_ids: &[String], predictions: &[Prediction]) -> Result<String> {
    if sample_ids.len() != predictions.len() {
        return Err(VflError::Schema("one prediction per sample id".into()));
    }
    let mut out = String::from("sample_id,raw_score,output\n");
    for (id, p) in sample_ids.iter().zip(predictions) {
        writeln!(out, "{id},{},{}", p.raw_score, p.output).expect("write to string");
    }
    Ok(out)
}
