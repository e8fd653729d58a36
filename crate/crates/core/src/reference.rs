// SPDX-License-Identifier: Apache-2.0

//! Centralized trainer over the pooled features. It shares the split scores
//! and sampling with the federated trainers but nothing else: candidates
//! are scored by enumerating samples directly and trees grow depth-first.

use crate::dataset::TabularData;
use crate::error::{Result, VflError};
use crate::messaging::PartyId;
use crate::session::{tree_sampling, PartyFeatures, TrainConfig};
use crate::split::{gains_tied, Criterion};
use crate::tree::{grad_pairs, initial_score, leaf_output, Ensemble, GradPair, LeafInput, SplitPointer, TreeNode};

struct Pooled<'a> {
    parties: &'a [PartyFeatures],
    criterion: Criterion,
    rows: Vec<Vec<f64>>,
    train: Vec<bool>,
    mask: Vec<Vec<bool>>,
    max_depth: usize,
}

impl Pooled<'_> {
    fn stats(&self, samples: &[u32]) -> (Vec<f64>, f64) {
        let mut s = vec![0.0; self.criterion.width()];
        for &i in samples {
            for (a, v) in s.iter_mut().zip(&self.rows[i as usize]) {
                *a += v;
            }
        }
        (s, samples.len() as f64)
    }

    fn best(&self, route: &[u32]) -> Result<Option<SplitPointer>> {
        let samples: Vec<u32> = route.iter().copied().filter(|&s| self.train[s as usize]).collect();
        let (total, n) = self.stats(&samples);
        let floor = self.criterion.min_score(&total, n)?;
        let mut best: Option<(f64, SplitPointer)> = None;
        for (pi, p) in self.parties.iter().enumerate() {
            for (f, col) in p.columns.iter().enumerate() {
                if !self.mask[pi][f] {
                    continue;
                }
                for b in 0..col.bucket_count().saturating_sub(1) {
                    let left: Vec<u32> = samples
                        .iter()
                        .copied()
                        .filter(|&s| col.bucket_of[s as usize] as usize <= b)
                        .collect();
                    let (ls, ln) = self.stats(&left);
                    let rs: Vec<f64> = total.iter().zip(&ls).map(|(t, l)| t - l).collect();
                    let Some(gain) = self.criterion.score(&ls, ln, &rs, n - ln)? else {
                        continue;
                    };
                    if !(gain > floor) {
                        continue;
                    }
                    let ptr = SplitPointer {
                        party: p.party,
                        feature_ordinal: f as u32,
                        bucket_ordinal: b as u16,
                    };
                    let better = match best {
                        None => true,
                        Some((g, cur)) => {
                            if gains_tied(gain, g) {
                                ptr < cur
                            } else {
                                gain > g
                            }
                        }
                    };
                    if better {
                        best = Some((gain, ptr));
                    }
                }
            }
        }
        Ok(best.map(|(_, p)| p))
    }

    fn grow(
        &self,
        route: Vec<u32>,
        depth: usize,
        leaf: &mut dyn FnMut(&[u32]) -> Result<f64>,
    ) -> Result<TreeNode> {
        let n_train = route.iter().filter(|&&s| self.train[s as usize]).count();
        if depth < self.max_depth && n_train >= 2 {
            if let Some(ptr) = self.best(&route)? {
                let party = self
                    .parties
                    .iter()
                    .find(|p| p.party == ptr.party)
                    .ok_or(VflError::UnknownParty(ptr.party))?;
                let col = &party.columns[ptr.feature_ordinal as usize];
                let (l, r): (Vec<u32>, Vec<u32>) = route
                    .iter()
                    .partition(|&&s| col.bucket_of[s as usize] <= ptr.bucket_ordinal);
                let left = self.grow(l, depth + 1, leaf)?;
                let right = self.grow(r, depth + 1, leaf)?;
                return Ok(TreeNode::internal(ptr, left, right));
            }
        }
        Ok(TreeNode::leaf(leaf(&route)?))
    }
}

/// Train on pooled features with the same configuration as a federated run.
/// Returns the ensemble and, for boosting, the training raw scores.
pub fn train_centralized(parts: &[TabularData], config: &TrainConfig) -> Result<(Ensemble, Vec<f64>)> {
    config.validate()?;
    let labels = parts
        .first()
        .and_then(|p| p.labels())
        .ok_or_else(|| VflError::Schema("the first part must hold labels".into()))?
        .to_vec();
    let parties: Vec<PartyFeatures> = parts
        .iter()
        .enumerate()
        .map(|(i, p)| PartyFeatures::from_table(PartyId(i as u16), p, config.bucket_count))
        .collect::<Result<_>>()?;
    let catalog: Vec<usize> = parties.iter().map(|p| p.feature_count()).collect();
    let n = labels.len();
    let hyper = &config.hyper;
    let boosting = config.model.is_boosting();
    let lr = if boosting { hyper.learning_rate } else { 1.0 };
    let mut ensemble = Ensemble::new(config.model, config.task, lr);
    ensemble.base_prediction = initial_score(config.model, config.task, &labels);
    let criterion = Criterion::for_model(config.model, config.task, hyper);
    let mut raw = vec![ensemble.base_prediction; n];
    let mut leaf_sum = vec![0.0; n];

    for t in 0..hyper.tree_count {
        let grads: Vec<GradPair> = if boosting {
            grad_pairs(&labels, &raw, config.task.loss())?
        } else {
            Vec::new()
        };
        let mut rows = Vec::with_capacity(n);
        for s in 0..n {
            let mut row = vec![0.0; criterion.width()];
            criterion.payload(grads.get(s).copied(), labels[s], &mut row)?;
            rows.push(row);
        }
        let (route, train, mask) = tree_sampling(t, n, config.model, hyper, &catalog);
        let pooled = Pooled {
            parties: &parties,
            criterion,
            rows,
            train: train.clone(),
            mask,
            max_depth: hyper.max_depth,
        };
        let mut updates: Vec<(f64, Vec<u32>)> = Vec::new();
        let mut leaf = |route: &[u32]| -> Result<f64> {
            let samples: Vec<u32> = route.iter().copied().filter(|&s| train[s as usize]).collect();
            let v = if boosting {
                let g: Vec<GradPair> = samples.iter().map(|&s| grads[s as usize]).collect();
                leaf_output(config.model, config.task, LeafInput::Grads(&g), hyper.lambda)?
            } else {
                let y: Vec<f64> = samples.iter().map(|&s| labels[s as usize]).collect();
                leaf_output(config.model, config.task, LeafInput::Labels(&y), hyper.lambda)?
            };
            updates.push((v, route.to_vec()));
            Ok(v)
        };
        let tree = pooled.grow(route, 0, &mut leaf)?;
        if boosting {
            for (v, r) in &updates {
                for &s in r {
                    leaf_sum[s as usize] += v;
                }
            }
            for s in 0..n {
                raw[s] = ensemble.base_prediction + lr * leaf_sum[s];
            }
        }
        ensemble.trees.push(tree);
    }
    Ok((ensemble, if boosting { raw } else { Vec::new() }))
}
