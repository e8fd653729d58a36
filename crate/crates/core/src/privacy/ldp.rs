// SPDX-License-Identifier: Apache-2.0

//! Local differential privacy over bucket ordinals.
//!
//! Bucket LDP is randomized response over buckets: a sample keeps its bucket
//! with probability `p` and otherwise moves to one of the other `B - 1`
//! buckets uniformly. For any two inputs `a != a'` and output `o`, the
//! likelihood ratio is at most `p / ((1 - p) / (B - 1))`, so the mechanism
//! is `ln(p (B - 1) / (1 - p))`-LDP whenever `p > 1/B`. At `p = 1/B` the
//! output is uniform and independent of the input.
//!
//! Distance LDP samples the output bucket `b` for input `a` with weight
//! `exp(-|a - b| * eps / 2)`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, VflError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LdpKind {
    Bucket { stay_probability: f64 },
    Distance { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpConfig {
    pub kind: LdpKind,
    pub seed: u64,
}

impl LdpConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LdpKind::Bucket { stay_probability: p } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(VflError::Config(format!("stay probability must be in (0, 1], got {p}")));
                }
            }
            LdpKind::Distance { epsilon } => {
                if !(epsilon > 0.0) {
                    return Err(VflError::Config(format!("epsilon must be > 0, got {epsilon}")));
                }
            }
        }
        Ok(())
    }

    /// Perturb one feature's bucket column according to the configured law.
    pub fn perturb<R: Rng>(&self, buckets: &[u16], bucket_count: usize, rng: &mut R) -> Result<Vec<u16>> {
        match self.kind {
            LdpKind::Bucket { stay_probability } => ldp_bucket_perturb(buckets, bucket_count, stay_probability, rng),
            LdpKind::Distance { epsilon } => {
                let table = DistanceTable::new(bucket_count, epsilon)?;
                buckets.iter().map(|&a| table.sample(a, rng)).collect()
            }
        }
    }
}

/// The LDP level of bucket randomized response, if it is finite and positive.
pub fn bucket_ldp_epsilon(stay_probability: f64, bucket_count: usize) -> Option<f64> {
    let b = bucket_count as f64;
    if bucket_count < 2 || stay_probability <= 1.0 / b {
        return None;
    }
    if stay_probability >= 1.0 {
        return Some(f64::INFINITY);
    }
    Some((stay_probability * (b - 1.0) / (1.0 - stay_probability)).ln())
}

pub fn ldp_bucket_perturb<R: Rng>(buckets: &[u16], bucket_count: usize, stay_probability: f64, rng: &mut R) -> Result<Vec<u16>> {
    if !(stay_probability > 0.0 && stay_probability <= 1.0) {
        return Err(VflError::Config(format!(
            "stay probability must be in (0, 1], got {stay_probability}"
        )));
    }
    buckets
        .iter()
        .map(|&a| {
            if a as usize >= bucket_count {
                return Err(VflError::Numeric(format!("bucket {a} out of range 0..{bucket_count}")));
            }
            if bucket_count < 2 || rng.gen::<f64>() < stay_probability {
                return Ok(a);
            }
            // uniform over the other B - 1 buckets
            let other = rng.gen_range(0..bucket_count as u16 - 1);
            Ok(if other >= a { other + 1 } else { other })
        })
        .collect()
}

/// Sample positions grouped by bucket, each group in shuffled order.
///
/// This is what leaves a party under bucket LDP: the membership of each
/// bucket, without the rank order inside it.
pub fn shuffled_bucket_members<R: Rng>(buckets: &[u16], bucket_count: usize, rng: &mut R) -> Vec<Vec<u32>> {
    let mut groups = bucket_members(buckets, bucket_count);
    for g in &mut groups {
        g.shuffle(rng);
    }
    groups
}

pub fn bucket_members(buckets: &[u16], bucket_count: usize) -> Vec<Vec<u32>> {
    let mut groups = vec![Vec::new(); bucket_count];
    for (i, &b) in buckets.iter().enumerate() {
        groups[b as usize].push(i as u32);
    }
    groups
}

/// Exact output distribution of distance LDP for input bucket `a`.
pub fn distance_ldp_probabilities(a: u16, bucket_count: usize, epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(VflError::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    if a as usize >= bucket_count {
        return Err(VflError::Numeric(format!("bucket {a} out of range 0..{bucket_count}")));
    }
    let w: Vec<f64> = (0..bucket_count)
        .map(|j| (-((a as f64 - j as f64).abs()) * epsilon / 2.0).exp())
        .collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

pub fn distance_ldp_map<R: Rng>(a: u16, bucket_count: usize, epsilon: f64, rng: &mut R) -> Result<u16> {
    let probs = distance_ldp_probabilities(a, bucket_count, epsilon)?;
    let dist = WeightedIndex::new(&probs).map_err(|e| VflError::Numeric(e.to_string()))?;
    Ok(dist.sample(rng) as u16)
}

/// Per-input samplers for one (bucket count, epsilon), reused across a column.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    rows: Vec<WeightedIndex<f64>>,
}

impl DistanceTable {
    pub fn new(bucket_count: usize, epsilon: f64) -> Result<Self> {
        let rows = (0..bucket_count)
            .map(|a| {
                let p = distance_ldp_probabilities(a as u16, bucket_count, epsilon)?;
                WeightedIndex::new(&p).map_err(|e| VflError::Numeric(e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(DistanceTable { rows })
    }

    pub fn sample<R: Rng>(&self, a: u16, rng: &mut R) -> Result<u16> {
        let row = self
            .rows
            .get(a as usize)
            .ok_or_else(|| VflError::Numeric(format!("bucket {a} out of range")))?;
        Ok(row.sample(rng) as u16)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn stay_probability_one_changes_nothing() {
        let mut rng = seeded(1);
        let b: Vec<u16> = (0..500).map(|i| (i % 50) as u16).collect();
        assert_eq!(ldp_bucket_perturb(&b, 50, 1.0, &mut rng).unwrap(), b);
        assert!(ldp_bucket_perturb(&b, 50, 0.0, &mut rng).is_err());
        assert!(ldp_bucket_perturb(&b, 50, 1.5, &mut rng).is_err());
    }

    #[test]
    fn uniform_at_one_over_b() {
        let mut rng = seeded(2);
        let n = 40_000;
        let out = ldp_bucket_perturb(&vec![0u16; n], 4, 0.25, &mut rng).unwrap();
        for k in 0..4u16 {
            let f = out.iter().filter(|&&b| b == k).count() as f64 / n as f64;
            // 4 sigma of a binomial(40000, 1/4) proportion is about 0.0087
            assert!((f - 0.25).abs() < 0.01, "bucket {k}: {f}");
        }
    }

    #[test]
    fn stay_fraction_matches_p() {
        let mut rng = seeded(3);
        let n = 100_000;
        let input: Vec<u16> = (0..n).map(|i| (i % 50) as u16).collect();
        let out = ldp_bucket_perturb(&input, 50, 0.9, &mut rng).unwrap();
        let stay = input.iter().zip(&out).filter(|(a, b)| a == b).count() as f64 / n as f64;
        assert!((stay - 0.9).abs() < 0.01, "{stay}");
    }

    #[test]
    fn epsilon_of_bucket_law() {
        assert_eq!(bucket_ldp_epsilon(0.02, 50), None);
        let e = bucket_ldp_epsilon(0.9, 50).unwrap();
        assert!((e - (0.9f64 * 49.0 / 0.1).ln()).abs() < 1e-12);
        assert_eq!(bucket_ldp_epsilon(1.0, 50), Some(f64::INFINITY));
    }

    #[test]
    fn shuffled_members_keep_membership() {
        let mut rng = seeded(4);
        let b = [2u16, 0, 2, 1, 2, 0];
        let g = shuffled_bucket_members(&b, 3, &mut rng);
        let mut sorted: Vec<Vec<u32>> = g.clone();
        sorted.iter_mut().for_each(|v| v.sort());
        assert_eq!(sorted, bucket_members(&b, 3));
    }

    #[test]
    fn distance_law_examples() {
        let p = distance_ldp_probabilities(0, 2, 2.0).unwrap();
        // direct normalization: 1 / (1 + e^-1)
        assert!((p[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        let sharp = distance_ldp_probabilities(10, 50, 50.0).unwrap();
        assert!(sharp[10] > 1.0 - 1e-6);
        let flat = distance_ldp_probabilities(10, 50, 1e-12).unwrap();
        assert!(flat.iter().all(|&x| (x - 0.02).abs() < 1e-9));
        assert!(distance_ldp_probabilities(0, 50, 0.0).is_err());
        assert!(distance_ldp_probabilities(50, 50, 1.0).is_err());
    }

    #[test]
    fn distance_map_stays_in_range() {
        let mut rng = seeded(5);
        for a in 0..10u16 {
            let b = distance_ldp_map(a, 10, 1.0, &mut rng).unwrap();
            assert!(b < 10);
        }
    }
}
