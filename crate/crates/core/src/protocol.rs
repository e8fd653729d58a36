// SPDX-License-Identifier: Apache-2.0

//! Training message bodies and their wire encodings.
//!
//! Node-scoped messages carry one entry per node of the current frontier,
//! in breadth-first order; neither side sends node ids.

use crate::error::{Result, VflError};
use crate::messaging::Phase;
use crate::privacy::paillier::{CipherScalar, PublicKey};
use crate::wire::{Decoder, Encoder};

/// One feature's bucket membership: sample positions listed bucket by bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureOrdinals {
    pub members: Vec<Vec<u32>>,
}

impl FeatureOrdinals {
    pub fn bucket_count(&self) -> usize {
        self.members.len()
    }

    /// Per-sample bucket index over `n` samples.
    pub fn bucket_of(&self, n: usize) -> Result<Vec<u16>> {
        let mut out = vec![u16::MAX; n];
        for (b, ms) in self.members.iter().enumerate() {
            for &s in ms {
                let slot = out
                    .get_mut(s as usize)
                    .ok_or_else(|| VflError::Protocol(format!("ordinal for unknown sample {s}")))?;
                if *slot != u16::MAX {
                    return Err(VflError::Protocol(format!("sample {s} listed twice")));
                }
                *slot = b as u16;
            }
        }
        if out.contains(&u16::MAX) {
            return Err(VflError::Protocol("ordinal table does not cover every sample".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrdinalsMsg {
    pub features: Vec<FeatureOrdinals>,
}

impl OrdinalsMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.len(self.features.len());
        for f in &self.features {
            e.u16(f.members.len() as u16);
            for ms in &f.members {
                e.u32s(ms);
            }
        }
        e.into_record(Phase::Ordinals)
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut d = Decoder::record(payload, Phase::Ordinals)?;
        let nf = d.len()?;
        let mut features = Vec::with_capacity(nf);
        for _ in 0..nf {
            let nb = d.u16()? as usize;
            let members = (0..nb).map(|_| d.u32s()).collect::<Result<_>>()?;
            features.push(FeatureOrdinals { members });
        }
        d.finish()?;
        Ok(OrdinalsMsg { features })
    }
}

/// A payload scalar: plaintext, or a Paillier ciphertext of its fixed-point code.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Plain(f64),
    Cipher(CipherScalar),
}

fn put_cell(e: &mut Encoder, c: &Cell, key: Option<&PublicKey>) -> Result<()> {
    match (c, key) {
        (Cell::Plain(v), None) => {
            e.f64(*v);
        }
        (Cell::Cipher(c), Some(pk)) => {
            e.raw(&pk.cipher_to_bytes(c)?);
        }
        _ => return Err(VflError::Protocol("payload encryption does not match session".into())),
    }
    Ok(())
}

fn get_cell(d: &mut Decoder<'_>, key: Option<&PublicKey>) -> Result<Cell> {
    Ok(match key {
        None => Cell::Plain(d.f64()?),
        Some(pk) => Cell::Cipher(pk.cipher_from_bytes(d.raw(pk.cipher_bytes())?)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublicKeyMsg {
    pub modulus: Vec<u8>,
}

impl PublicKeyMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(&self.modulus);
        e.into_record(Phase::PublicKey)
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut d = Decoder::record(payload, Phase::PublicKey)?;
        let modulus = d.bytes()?.to_vec();
        d.finish()?;
        Ok(PublicKeyMsg { modulus })
    }
}

/// Label information for one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct GradsMsg {
    /// Root node samples, ascending, repeated for bootstrap duplicates.
    pub route: Vec<u32>,
    /// Per aligned sample: contributes to split statistics.
    pub train: Vec<bool>,
    pub width: usize,
    /// `width` cells per training sample, samples ascending.
    pub payload: Vec<Cell>,
}

impl GradsMsg {
    pub fn encode(&self, key: Option<&PublicKey>) -> Result<Vec<u8>> {
        let mut e = Encoder::new();
        e.u32s(&self.route).bits(&self.train).u8(self.width as u8).len(self.payload.len());
        for c in &self.payload {
            put_cell(&mut e, c, key)?;
        }
        Ok(e.into_record(Phase::Grads))
    }

    pub fn decode(payload: &[u8], key: Option<&PublicKey>) -> Result<Self> {
        let mut d = Decoder::record(payload, Phase::Grads)?;
        let route = d.u32s()?;
        let train = d.bits()?;
        let width = d.u8()? as usize;
        let n = d.u32()? as usize;
        let cells = (0..n).map(|_| get_cell(&mut d, key)).collect::<Result<Vec<_>>>()?;
        d.finish()?;
        let trained = train.iter().filter(|&&t| t).count();
        if cells.len() != trained * width {
            return Err(VflError::Protocol(format!(
                "{} payload cells for {trained} samples of width {width}",
                cells.len()
            )));
        }
        Ok(GradsMsg {
            route,
            train,
            width,
            payload: cells,
        })
    }
}

/// Sums of one feature's buckets at one node. Empty buckets carry no cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSums {
    pub counts: Vec<u32>,
    /// `width` cells for each bucket with a non-zero count, buckets ascending.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketSumsMsg {
    pub width: usize,
    /// Per frontier node, per local feature.
    pub nodes: Vec<Vec<FeatureSums>>,
}

impl BucketSumsMsg {
    pub fn encode(&self, key: Option<&PublicKey>) -> Result<Vec<u8>> {
        let mut e = Encoder::new();
        e.u8(self.width as u8).len(self.nodes.len());
        for node in &self.nodes {
            e.len(node.len());
            for f in node {
                e.u32s(&f.counts);
                for c in &f.cells {
                    put_cell(&mut e, c, key)?;
                }
            }
        }
        Ok(e.into_record(Phase::BucketSums))
    }

    pub fn decode(payload: &[u8], key: Option<&PublicKey>) -> Result<Self> {
        let mut d = Decoder::record(payload, Phase::BucketSums)?;
        let width = d.u8()? as usize;
        let nn = d.len()?;
        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let nf = d.len()?;
            let mut feats = Vec::with_capacity(nf);
            for _ in 0..nf {
                let counts = d.u32s()?;
                let filled = counts.iter().filter(|&&c| c > 0).count();
                let cells = (0..filled * width).map(|_| get_cell(&mut d, key)).collect::<Result<_>>()?;
                feats.push(FeatureSums { counts, cells });
            }
            nodes.push(feats);
        }
        d.finish()?;
        Ok(BucketSumsMsg { width, nodes })
    }
}

/// What one data party learns about one frontier node after split finding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeStatus {
    Leaf,
    /// The recipient owns this split.
    Own { feature_ordinal: u32, bucket_ordinal: u16 },
    /// Split owned by the task party: left indicator over the node's route.
    TaskIndicator(Vec<bool>),
    /// Split owned by another data party; its indicator follows in a partition message.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPointerMsg {
    pub nodes: Vec<NodeStatus>,
}

impl SplitPointerMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.len(self.nodes.len());
        for n in &self.nodes {
            match n {
                NodeStatus::Leaf => {
                    e.u8(0);
                }
                NodeStatus::Own {
                    feature_ordinal,
                    bucket_ordinal,
                } => {
                    e.u8(1).u32(*feature_ordinal).u16(*bucket_ordinal);
                }
                NodeStatus::TaskIndicator(bits) => {
                    e.u8(2).bits(bits);
                }
                NodeStatus::Remote => {
                    e.u8(3);
                }
            }
        }
        e.into_record(Phase::SplitPointer)
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut d = Decoder::record(payload, Phase::SplitPointer)?;
        let n = d.len()?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(match d.u8()? {
                0 => NodeStatus::Leaf,
                1 => NodeStatus::Own {
                    feature_ordinal: d.u32()?,
                    bucket_ordinal: d.u16()?,
                },
                2 => NodeStatus::TaskIndicator(d.bits()?),
                3 => NodeStatus::Remote,
                t => return Err(VflError::Decode(format!("unknown node status {t}"))),
            });
        }
        d.finish()?;
        Ok(SplitPointerMsg { nodes })
    }
}

/// Bit vectors, one per node, for the `indicator` and `partition` phases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorsMsg {
    pub indicators: Vec<Vec<bool>>,
}

impl IndicatorsMsg {
    pub fn encode(&self, phase: Phase) -> Vec<u8> {
        let mut e = Encoder::new();
        e.len(self.indicators.len());
        for v in &self.indicators {
            e.bits(v);
        }
        e.into_record(phase)
    }

    pub fn decode(payload: &[u8], phase: Phase) -> Result<Self> {
        let mut d = Decoder::record(payload, phase)?;
        let n = d.len()?;
        let indicators = (0..n).map(|_| d.bits()).collect::<Result<_>>()?;
        d.finish()?;
        Ok(IndicatorsMsg { indicators })
    }
}

/// Field-element vectors: indicator frames and Beaver openings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramesMsg {
    pub rows: Vec<Vec<u64>>,
}

impl FramesMsg {
    pub fn encode(&self, phase: Phase) -> Vec<u8> {
        let mut e = Encoder::new();
        e.len(self.rows.len());
        for r in &self.rows {
            e.len(r.len());
            for &v in r {
                e.u64(v);
            }
        }
        e.into_record(phase)
    }

    pub fn decode(payload: &[u8], phase: Phase) -> Result<Self> {
        let mut d = Decoder::record(payload, phase)?;
        let n = d.len()?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let m = d.len()?;
            rows.push((0..m).map(|_| d.u64()).collect::<Result<_>>()?);
        }
        d.finish()?;
        Ok(FramesMsg { rows })
    }
}
