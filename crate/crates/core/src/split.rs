// SPDX-License-Identifier: Apache-2.0

//! Histogram split finding shared by both training protocols.
//!
//! A party that holds a node's bucket column and the node's per-sample
//! payload accumulates one histogram per feature. The task party scans
//! prefix sums over buckets and keeps the best candidate under the global
//! tie-break: highest gain, then lowest `(party, feature, bucket)`.

use crate::error::{Result, VflError};
use crate::messaging::PartyId;
use crate::tree::{
    gbdt_gain, gini_impurity, rf_split_score, variance_reduction, xgb_gain, GradPair, Hyperparams,
    ModelKind, SplitPointer, TaskKind,
};

/// How split candidates are scored, with the per-sample payload it needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// Payload `[g, h]`.
    XgBoost { lambda: f64, gamma: f64 },
    /// Payload `[g]`.
    Gbdt { lambda: f64 },
    /// Payload: one-hot class indicator.
    Gini { classes: usize },
    /// Payload `[y, y^2]`.
    Variance,
}

impl Criterion {
    pub fn for_model(kind: ModelKind, task: TaskKind, hyper: &Hyperparams) -> Self {
        match kind {
            ModelKind::XgBoost => Criterion::XgBoost {
                lambda: hyper.lambda,
                gamma: hyper.gamma,
            },
            ModelKind::Gbdt => Criterion::Gbdt { lambda: hyper.lambda },
            ModelKind::RandomForest => match task {
                TaskKind::Classification { classes } => Criterion::Gini {
                    classes: classes as usize,
                },
                TaskKind::Regression => Criterion::Variance,
            },
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            Criterion::XgBoost { .. } => 2,
            Criterion::Gbdt { .. } => 1,
            Criterion::Gini { classes } => classes,
            Criterion::Variance => 2,
        }
    }

    /// Write one sample's payload into `out` (length `width()`).
    pub fn payload(&self, grad: Option<GradPair>, label: f64, out: &mut [f64]) -> Result<()> {
        match *self {
            Criterion::XgBoost { .. } | Criterion::Gbdt { .. } => {
                let gp = grad.ok_or_else(|| VflError::Numeric("boosting payload needs gradients".into()))?;
                out[0] = gp.g;
                if out.len() > 1 {
                    out[1] = gp.h;
                }
            }
            Criterion::Gini { classes } => {
                let c = label as usize;
                if label < 0.0 || label.fract() != 0.0 || c >= classes {
                    return Err(VflError::Numeric(format!("label {label} is not a class in 0..{classes}")));
                }
                out.fill(0.0);
                out[c] = 1.0;
            }
            Criterion::Variance => {
                out[0] = label;
                out[1] = label * label;
            }
        }
        Ok(())
    }

    /// Score of one candidate; `None` when a child is empty.
    pub fn score(&self, left: &[f64], n_left: f64, right: &[f64], n_right: f64) -> Result<Option<f64>> {
        if !(n_left > 0.0 && n_right > 0.0) {
            return Ok(None);
        }
        let s = match *self {
            Criterion::XgBoost { lambda, gamma } => xgb_gain(left[0], left[1], right[0], right[1], lambda, gamma)?,
            Criterion::Gbdt { lambda } => gbdt_gain(left[0], n_left, right[0], n_right, lambda)?,
            Criterion::Gini { .. } => rf_split_score(left, right)?,
            Criterion::Variance => variance_reduction((n_left, left[0], left[1]), (n_right, right[0], right[1]))?,
        };
        Ok(Some(s))
    }

    /// A candidate must score strictly above this to be worth splitting.
    pub fn min_score(&self, total: &[f64], n: f64) -> Result<f64> {
        let eps = |parent: f64| 1e-12 * parent.abs().max(1.0);
        Ok(match *self {
            Criterion::XgBoost { lambda, .. } => eps(total[0] * total[0] / (total[1] + lambda)),
            Criterion::Gbdt { lambda } => {
                // the printed GBDT gain has no parent term, so compare against it
                let parent = total[0] * total[0] / (n + lambda);
                parent + eps(parent)
            }
            Criterion::Gini { .. } => eps(gini_impurity(total)?),
            Criterion::Variance => eps((total[1] - total[0] * total[0] / n) / n),
        })
    }
}

/// Gains this close are ties and fall through to the pointer order.
pub fn gains_tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Whether `(gain, pointer)` beats the incumbent under the global tie-break.
pub fn beats(gain: f64, pointer: SplitPointer, best: &Candidate) -> bool {
    if gains_tied(gain, best.gain) {
        pointer < best.pointer
    } else {
        gain > best.gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub pointer: SplitPointer,
    pub gain: f64,
    /// Training samples sent left and right.
    pub left_count: f64,
    pub right_count: f64,
}

/// Per-bucket payload sums and counts for one feature at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bucket_count: usize,
    pub width: usize,
    /// Bucket-major: bucket `b` occupies `sums[b * width..(b + 1) * width]`.
    pub sums: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn zeros(bucket_count: usize, width: usize) -> Self {
        Histogram {
            bucket_count,
            width,
            sums: vec![0.0; bucket_count * width],
            counts: vec![0.0; bucket_count],
        }
    }

    /// Accumulate node samples in the order given. `payload` is sample-major
    /// with `width` values per sample. Both protocols call this with node
    /// samples in ascending order so their floating-point sums agree.
    pub fn accumulate(bucket_of: &[u16], bucket_count: usize, samples: &[u32], payload: &[f64], width: usize) -> Result<Self> {
        let mut h = Histogram::zeros(bucket_count, width);
        for &s in samples {
            let s = s as usize;
            let b = *bucket_of
                .get(s)
                .ok_or_else(|| VflError::Protocol(format!("sample {s} out of range")))? as usize;
            if b >= bucket_count {
                return Err(VflError::Protocol(format!("bucket {b} out of range 0..{bucket_count}")));
            }
            let row = &payload[s * width..(s + 1) * width];
            for (acc, v) in h.sums[b * width..(b + 1) * width].iter_mut().zip(row) {
                *acc += v;
            }
            h.counts[b] += 1.0;
        }
        Ok(h)
    }

    pub fn bucket(&self, b: usize) -> &[f64] {
        &self.sums[b * self.width..(b + 1) * self.width]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureHistogram<'a> {
    pub party: PartyId,
    pub feature_ordinal: u32,
    pub histogram: &'a Histogram,
}

/// Node totals in sample order.
pub fn node_totals(samples: &[u32], payload: &[f64], width: usize) -> Vec<f64> {
    let mut total = vec![0.0; width];
    for &s in samples {
        let s = s as usize;
        for (acc, v) in total.iter_mut().zip(&payload[s * width..(s + 1) * width]) {
            *acc += v;
        }
    }
    total
}

/// Best candidate over all features, or `None` when the node should be a leaf.
///
/// Left statistics are prefix sums over buckets `0..=b`; right statistics
/// are the node total minus the left.
pub fn best_split<'a>(
    criterion: &Criterion,
    total: &[f64],
    n: f64,
    features: impl IntoIterator<Item = FeatureHistogram<'a>>,
) -> Result<Option<Candidate>> {
    let floor = criterion.min_score(total, n)?;
    let width = criterion.width();
    let mut best: Option<Candidate> = None;
    let mut left = vec![0.0; width];
    let mut right = vec![0.0; width];
    for f in features {
        let h = f.histogram;
        if h.width != width {
            return Err(VflError::Protocol(format!("histogram width {} != {width}", h.width)));
        }
        left.fill(0.0);
        let mut n_left = 0.0;
        for b in 0..h.bucket_count.saturating_sub(1) {
            for (acc, v) in left.iter_mut().zip(h.bucket(b)) {
                *acc += v;
            }
            n_left += h.counts[b];
            for k in 0..width {
                right[k] = total[k] - left[k];
            }
            let Some(gain) = criterion.score(&left, n_left, &right, n - n_left)? else {
                continue;
            };
            if !(gain > floor) {
                continue;
            }
            let pointer = SplitPointer {
                party: f.party,
                feature_ordinal: f.feature_ordinal,
                bucket_ordinal: b as u16,
            };
            match &best {
                Some(cur) if !beats(gain, pointer, cur) => {}
                _ => {
                    best = Some(Candidate {
                        pointer,
                        gain,
                        left_count: n_left,
                        right_count: n - n_left,
                    })
                }
            }
        }
    }
    Ok(best)
}
