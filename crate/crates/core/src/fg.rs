// SPDX-License-Identifier: Apache-2.0

//! Feature-gathering training: data parties ship bucket membership once,
//! and the task party grows every tree on its own.

use std::time::Instant;

use crate::dataset::TabularData;
use crate::error::{Result, VflError};
use crate::messaging::{PartyId, Phase};
use crate::party::DataParty;
use crate::privacy::ldp::{LdpConfig, LdpKind};
use crate::protocol::{NodeStatus, OrdinalsMsg, SplitPointerMsg};
use crate::session::{
    setup_parties, train_trees, Federation, FrontierNode, Protection, RemoteHistogram, Timings, TrainConfig,
    TrainedModel, TreeCtx, TreeProtocol,
};
use crate::split::{best_split, node_totals, Candidate, Criterion, FeatureHistogram, Histogram};

/// What the task party knows of one data party's features.
#[derive(Debug, Clone)]
pub struct OrdinalTable {
    pub party: PartyId,
    /// `bucket_of[feature][sample]`, as reported (possibly perturbed).
    pub bucket_of: Vec<Vec<u16>>,
    pub bucket_counts: Vec<usize>,
}

impl OrdinalTable {
    pub fn from_msg(party: PartyId, msg: &OrdinalsMsg, n: usize) -> Result<Self> {
        let mut bucket_of = Vec::with_capacity(msg.features.len());
        let mut bucket_counts = Vec::with_capacity(msg.features.len());
        for f in &msg.features {
            bucket_of.push(f.bucket_of(n)?);
            bucket_counts.push(f.bucket_count());
        }
        Ok(OrdinalTable {
            party,
            bucket_of,
            bucket_counts,
        })
    }

    pub fn histograms(&self, samples: &[u32], payload: &[f64], width: usize) -> Result<Vec<Histogram>> {
        self.bucket_of
            .iter()
            .zip(&self.bucket_counts)
            .map(|(b, &c)| Histogram::accumulate(b, c, samples, payload, width))
            .collect()
    }
}

pub fn ldp_config(protection: Protection, seed: u64) -> Option<LdpConfig> {
    match protection {
        Protection::BucketLdp { stay_probability } => Some(LdpConfig {
            kind: LdpKind::Bucket { stay_probability },
            seed,
        }),
        Protection::DistanceLdp { epsilon } => Some(LdpConfig {
            kind: LdpKind::Distance { epsilon },
            seed,
        }),
        _ => None,
    }
}

/// One `ordinals` message per data party, decoded at the task party.
pub fn gather_feature_info(fed: &mut Federation, ldp: Option<&LdpConfig>, n: usize) -> Result<Vec<OrdinalTable>> {
    let task = fed.task;
    let mut msgs = Vec::with_capacity(fed.data_parties.len());
    for d in &fed.data_parties {
        msgs.push((d.id(), d.compute_ordinals(ldp)?.encode()));
    }
    for (from, payload) in msgs {
        fed.bus.send(from, task, Phase::Ordinals, payload)?;
    }
    let mut tables = Vec::new();
    for env in fed.pump()? {
        if env.phase != Phase::Ordinals {
            return Err(VflError::Protocol(format!("expected ordinals, got {}", env.phase)));
        }
        tables.push(OrdinalTable::from_msg(env.from, &OrdinalsMsg::decode(&env.payload)?, n)?);
    }
    tables.sort_by_key(|t| t.party);
    if tables.len() != fed.data_parties.len() {
        return Err(VflError::Protocol("missing ordinals from a data party".into()));
    }
    Ok(tables)
}

/// Best split of one node over the task party's own histograms and the
/// gathered ordinal tables.
pub fn find_best_split_fg(
    criterion: &Criterion,
    samples: &[u32],
    payload: &[f64],
    own: (PartyId, &[Histogram]),
    tables: &[OrdinalTable],
) -> Result<Option<Candidate>> {
    let width = criterion.width();
    let total = node_totals(samples, payload, width);
    let remote: Vec<(PartyId, Vec<Histogram>)> = tables
        .iter()
        .map(|t| Ok((t.party, t.histograms(samples, payload, width)?)))
        .collect::<Result<_>>()?;
    let feats = own
        .1
        .iter()
        .enumerate()
        .map(|(f, h)| FeatureHistogram {
            party: own.0,
            feature_ordinal: f as u32,
            histogram: h,
        })
        .chain(remote.iter().flat_map(|(p, hs)| {
            hs.iter().enumerate().map(move |(f, h)| FeatureHistogram {
                party: *p,
                feature_ordinal: f as u32,
                histogram: h,
            })
        }));
    best_split(criterion, &total, samples.len() as f64, feats)
}

pub struct FgBackend<'f> {
    pub fed: &'f mut Federation,
    pub tables: Vec<OrdinalTable>,
}

impl TreeProtocol for FgBackend<'_> {
    fn begin_tree(&mut self, _ctx: &TreeCtx<'_>, _root_route: &[u32], _root_expandable: bool) -> Result<()> {
        Ok(())
    }

    fn level_histograms(&mut self, ctx: &TreeCtx<'_>, frontier: &[FrontierNode]) -> Result<Vec<Vec<RemoteHistogram>>> {
        let width = ctx.criterion.width();
        frontier
            .iter()
            .map(|node| {
                let samples = ctx.train_samples(&node.route);
                let mut out = Vec::new();
                for t in &self.tables {
                    for (f, h) in t.histograms(&samples, ctx.payload, width)?.into_iter().enumerate() {
                        out.push(RemoteHistogram {
                            party: t.party,
                            feature_ordinal: f as u32,
                            histogram: h,
                        });
                    }
                }
                Ok(out)
            })
            .collect()
    }

    fn resolve_splits(
        &mut self,
        _ctx: &TreeCtx<'_>,
        frontier: &[FrontierNode],
        decisions: &[Option<Candidate>],
        _local: &[Option<Vec<bool>>],
        _next_nonempty: bool,
    ) -> Result<Vec<Option<Vec<bool>>>> {
        let task = self.fed.task;
        let mut out = Vec::with_capacity(frontier.len());
        for (node, d) in frontier.iter().zip(decisions) {
            let Some(c) = d.filter(|c| c.pointer.party != task) else {
                out.push(None);
                continue;
            };
            let p = c.pointer;
            let table = self
                .tables
                .iter()
                .find(|t| t.party == p.party)
                .ok_or(VflError::UnknownParty(p.party))?;
            let col = &table.bucket_of[p.feature_ordinal as usize];
            out.push(Some(node.route.iter().map(|&s| col[s as usize] <= p.bucket_ordinal).collect()));
            let msg = SplitPointerMsg {
                nodes: vec![NodeStatus::Own {
                    feature_ordinal: p.feature_ordinal,
                    bucket_ordinal: p.bucket_ordinal,
                }],
            };
            self.fed.bus.send(task, p.party, Phase::SplitPointer, msg.encode())?;
        }
        let stray = self.fed.pump()?;
        if let Some(env) = stray.first() {
            return Err(VflError::Protocol(format!("unexpected {} from {}", env.phase, env.from)));
        }
        Ok(out)
    }
}

/// Train over feature-gathering. `parts[0]` is the task party.
pub fn build_trees_fg(parts: &[TabularData], config: &TrainConfig, start: Instant) -> Result<TrainedModel> {
    let (bus, mut task, features) = setup_parties(parts, config)?;
    let n = task.n();
    let data: Vec<DataParty> = features
        .into_iter()
        .map(|f| DataParty::new(f, task.features.party, config.hyper.max_depth))
        .collect();
    let mut fed = Federation::new(bus, task.features.party, data);
    let ldp = ldp_config(config.protection, config.hyper.seed);
    let tables = gather_feature_info(&mut fed, ldp.as_ref(), n)?;
    let setup_secs = start.elapsed().as_secs_f64();

    let mut catalog = vec![task.features.feature_count()];
    catalog.extend(tables.iter().map(|t| t.bucket_of.len()));
    let mut backend = FgBackend { fed: &mut fed, tables };
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
