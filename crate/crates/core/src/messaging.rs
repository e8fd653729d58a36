// SPDX-License-Identifier: Apache-2.0

//! Deterministic in-process message bus.
//!
//! Parties interact only through envelopes. Delivery is global FIFO in send
//! order, and every send is accounted in [`CommStats`]: one envelope is one
//! exchange, and a broadcast to `M` recipients is `M` exchanges.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VflError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub u16);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Task,
    Data,
}

/// Protocol phase carried as the 1-byte tag of every payload record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Ordinals,
    SplitPointer,
    Grads,
    BucketSums,
    Indicator,
    Partition,
    PublicKey,
    ShareOpen,
    SplitQuery,
    SplitAnswer,
    LeafIndicator,
    Ping,
}

impl Phase {
    pub const ALL: [Phase; 12] = [
        Phase::Ordinals,
        Phase::SplitPointer,
        Phase::Grads,
        Phase::BucketSums,
        Phase::Indicator,
        Phase::Partition,
        Phase::PublicKey,
        Phase::ShareOpen,
        Phase::SplitQuery,
        Phase::SplitAnswer,
        Phase::LeafIndicator,
        Phase::Ping,
    ];

    pub fn code(self) -> u8 {
        match self {
            Phase::Ordinals => 1,
            Phase::SplitPointer => 2,
            Phase::Grads => 3,
            Phase::BucketSums => 4,
            Phase::Indicator => 5,
            Phase::Partition => 6,
            Phase::PublicKey => 7,
            Phase::ShareOpen => 8,
            Phase::SplitQuery => 9,
            Phase::SplitAnswer => 10,
            Phase::LeafIndicator => 11,
            Phase::Ping => 12,
        }
    }

    pub fn from_code(code: u8) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ordinals => "ordinals",
            Phase::SplitPointer => "split_pointer",
            Phase::Grads => "grads",
            Phase::BucketSums => "bucket_sums",
            Phase::Indicator => "indicator",
            Phase::Partition => "partition",
            Phase::PublicKey => "public_key",
            Phase::ShareOpen => "share_open",
            Phase::SplitQuery => "split_query",
            Phase::SplitAnswer => "split_answer",
            Phase::LeafIndicator => "leaf_indicator",
            Phase::Ping => "ping",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: PartyId,
    pub to: PartyId,
    pub phase: Phase,
    pub payload: Vec<u8>,
    pub sequence: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub exchanges: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommStats {
    pub exchanges: u64,
    pub bytes: u64,
    pub breakdown: BTreeMap<(PartyId, PartyId, Phase), EdgeStats>,
}

impl CommStats {
    fn record(&mut self, from: PartyId, to: PartyId, phase: Phase, bytes: usize) {
        self.exchanges += 1;
        self.bytes += bytes as u64;
        let edge = self.breakdown.entry((from, to, phase)).or_default();
        edge.exchanges += 1;
        edge.bytes += bytes as u64;
    }

    pub fn phase_exchanges(&self, phase: Phase) -> u64 {
        self.breakdown
            .iter()
            .filter(|((_, _, p), _)| *p == phase)
            .map(|(_, e)| e.exchanges)
            .sum()
    }

    pub fn phase_bytes(&self, phase: Phase) -> u64 {
        self.breakdown
            .iter()
            .filter(|((_, _, p), _)| *p == phase)
            .map(|(_, e)| e.bytes)
            .sum()
    }

    /// Difference against an earlier snapshot of the same session.
    pub fn since(&self, earlier: &CommStats) -> CommStats {
        let mut out = CommStats {
            exchanges: self.exchanges - earlier.exchanges,
            bytes: self.bytes - earlier.bytes,
            breakdown: BTreeMap::new(),
        };
        for (key, edge) in &self.breakdown {
            let before = earlier.breakdown.get(key).copied().unwrap_or_default();
            if edge.exchanges > before.exchanges {
                out.breakdown.insert(
                    *key,
                    EdgeStats {
                        exchanges: edge.exchanges - before.exchanges,
                        bytes: edge.bytes - before.bytes,
                    },
                );
            }
        }
        out
    }

    /// CSV with columns `from,to,phase,exchanges,bytes`, one row per edge.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("from,to,phase,exchanges,bytes\n");
        for ((from, to, phase), edge) in &self.breakdown {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                from.0, to.0, phase, edge.exchanges, edge.bytes
            ));
        }
        out
    }
}

/// Per-party message handler. Each handler owns its party's private state.
pub trait Handler {
    fn party(&self) -> PartyId;
    fn handle(&mut self, envelope: Envelope, outbox: &mut Outbox) -> Result<()>;
}

/// Sends queued by a handler while it processes one envelope.
#[derive(Debug)]
pub struct Outbox {
    from: PartyId,
    pending: Vec<(Option<PartyId>, Phase, Vec<u8>)>,
}

impl Outbox {
    pub fn send(&mut self, to: PartyId, phase: Phase, payload: Vec<u8>) {
        self.pending.push((Some(to), phase, payload));
    }

    pub fn broadcast(&mut self, phase: Phase, payload: Vec<u8>) {
        self.pending.push((None, phase, payload));
    }

    pub fn party(&self) -> PartyId {
        self.from
    }
}

/// Collects everything addressed to one party; used by protocol drivers
/// that read replies between bus runs.
#[derive(Debug)]
pub struct Mailbox {
    party: PartyId,
    received: VecDeque<Envelope>,
}

impl Mailbox {
    pub fn new(party: PartyId) -> Self {
        Mailbox {
            party,
            received: VecDeque::new(),
        }
    }

    pub fn drain(&mut self) -> Vec<Envelope> {
        self.received.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.received.len()
    }

    pub fn is_empty(&self) -> bool {
        self.received.is_empty()
    }
}

impl Handler for Mailbox {
    fn party(&self) -> PartyId {
        self.party
    }

    fn handle(&mut self, envelope: Envelope, _outbox: &mut Outbox) -> Result<()> {
        self.received.push_back(envelope);
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

#[derive(Debug)]
pub struct Bus {
    roles: Vec<Role>,
    queue: VecDeque<Envelope>,
    next_sequence: u64,
    stats: CommStats,
    transcript: u64,
}

impl Default for Bus {
    fn default() -> Self {
        Bus::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Bus {
            roles: Vec::new(),
            queue: VecDeque::new(),
            next_sequence: 0,
            stats: CommStats::default(),
            transcript: FNV_OFFSET,
        }
    }

    pub fn register_party(&mut self, role: Role) -> Result<PartyId> {
        if role == Role::Task && self.roles.contains(&Role::Task) {
            return Err(VflError::Config("a session has exactly one task party".into()));
        }
        let id = PartyId(u16::try_from(self.roles.len()).map_err(|_| VflError::Config("too many parties".into()))?);
        self.roles.push(role);
        Ok(id)
    }

    pub fn role(&self, party: PartyId) -> Option<Role> {
        self.roles.get(party.index()).copied()
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> + '_ {
        (0..self.roles.len()).map(|i| PartyId(i as u16))
    }

    pub fn task_party(&self) -> Option<PartyId> {
        self.roles
            .iter()
            .position(|r| *r == Role::Task)
            .map(|i| PartyId(i as u16))
    }

    pub fn data_parties(&self) -> Vec<PartyId> {
        self.parties().filter(|p| self.role(*p) == Some(Role::Data)).collect()
    }

    fn check(&self, party: PartyId) -> Result<()> {
        if party.index() < self.roles.len() {
            Ok(())
        } else {
            Err(VflError::UnknownParty(party))
        }
    }

    pub fn send(&mut self, from: PartyId, to: PartyId, phase: Phase, payload: Vec<u8>) -> Result<u64> {
        self.check(from)?;
        self.check(to)?;
        if from == to {
            return Err(VflError::Protocol(format!("{from} cannot send to itself")));
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.stats.record(from, to, phase, payload.len());
        self.transcript = fnv1a(self.transcript, &sequence.to_le_bytes());
        self.transcript = fnv1a(self.transcript, &from.0.to_le_bytes());
        self.transcript = fnv1a(self.transcript, &to.0.to_le_bytes());
        self.transcript = fnv1a(self.transcript, &[phase.code()]);
        self.transcript = fnv1a(self.transcript, &(payload.len() as u64).to_le_bytes());
        self.transcript = fnv1a(self.transcript, &payload);
        self.queue.push_back(Envelope {
            from,
            to,
            phase,
            payload,
            sequence,
        });
        Ok(sequence)
    }

    /// One send to every other registered party, in id order.
    pub fn broadcast(&mut self, from: PartyId, phase: Phase, payload: Vec<u8>) -> Result<Vec<u64>> {
        self.check(from)?;
        let targets: Vec<PartyId> = self.parties().filter(|p| *p != from).collect();
        targets
            .into_iter()
            .map(|to| self.send(from, to, phase, payload.clone()))
            .collect()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Deliver envelopes in sequence order until every inbox is empty.
    pub fn run_until_idle(&mut self, handlers: &mut [&mut dyn Handler]) -> Result<()> {
        while let Some(envelope) = self.queue.pop_front() {
            let (sequence, phase, from, to) = (envelope.sequence, envelope.phase, envelope.from, envelope.to);
            let handler = handlers
                .iter_mut()
                .find(|h| h.party() == to)
                .ok_or_else(|| VflError::Protocol(format!("no handler registered for {to}")))?;
            let mut outbox = Outbox {
                from: to,
                pending: Vec::new(),
            };
            handler.handle(envelope, &mut outbox).map_err(|e| VflError::Handler {
                sequence,
                phase,
                from,
                to,
                source: Box::new(e),
            })?;
            for (target, phase, payload) in outbox.pending {
                match target {
                    Some(target) => {
                        self.send(outbox.from, target, phase, payload)?;
                    }
                    None => {
                        self.broadcast(outbox.from, phase, payload)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn snapshot_stats(&self) -> CommStats {
        self.stats.clone()
    }

    /// Running FNV-1a digest over every envelope sent so far.
    pub fn transcript_digest(&self) -> u64 {
        self.transcript
    }
}
