// SPDX-License-Identifier: Apache-2.0

//! Additive secret sharing over a prime field, with Beaver-triple
//! multiplication.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VflError};
use crate::messaging::PartyId;

/// `2^61 - 1`.
pub const DEFAULT_PRIME: u64 = (1 << 61) - 1;

/// Arithmetic modulo a prime below `2^63`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Field {
    q: u64,
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller-Rabin; these bases are exact for all `u64`.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'base: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'base;
            }
        }
        return false;
    }
    true
}

impl Default for Field {
    fn default() -> Self {
        Field { q: DEFAULT_PRIME }
    }
}

impl Field {
    pub fn new(q: u64) -> Result<Self> {
        if q >= 1 << 63 || !is_prime_u64(q) {
            return Err(VflError::Config(format!("{q} is not a prime below 2^63")));
        }
        Ok(Field { q })
    }

    /// The largest prime below `2^prime_bits`.
    pub fn with_prime_bits(prime_bits: u32) -> Result<Self> {
        if !(8..=63).contains(&prime_bits) {
            return Err(VflError::Config(format!("prime bits must be in 8..=63, got {prime_bits}")));
        }
        let mut c = (1u64 << prime_bits) - 1;
        while !is_prime_u64(c) {
            c -= 2;
        }
        Ok(Field { q: c })
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + b as u128) % self.q as u128) as u64
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        self.add(a, self.q - b % self.q)
    }

    pub fn neg(&self, a: u64) -> u64 {
        (self.q - a % self.q) % self.q
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        mul_mod(a, b, self.q)
    }

    pub fn random<R: Rng>(&self, rng: &mut R) -> u64 {
        rng.gen_range(0..self.q)
    }
}

/// One party's fragment of a shared value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareFrame {
    pub party: PartyId,
    pub value: u64,
    /// Links the frames of one secret.
    pub tag: u64,
}

pub fn ss_split<R: Rng>(secret: u64, n_frames: usize, field: &Field, rng: &mut R) -> Result<Vec<u64>> {
    if n_frames < 2 {
        return Err(VflError::Config(format!("need at least 2 frames, got {n_frames}")));
    }
    if secret >= field.q {
        return Err(VflError::Numeric(format!("secret {secret} outside Z_{}", field.q)));
    }
    let mut frames: Vec<u64> = (0..n_frames - 1).map(|_| field.random(rng)).collect();
    let partial = frames.iter().fold(0, |acc, &f| field.add(acc, f));
    frames.push(field.sub(secret, partial));
    Ok(frames)
}

pub fn ss_reconstruct(frames: &[u64], field: &Field) -> u64 {
    frames.iter().fold(0, |acc, &f| field.add(acc, f))
}

/// Split every element of a vector; result is frame-major.
pub fn ss_split_vec<R: Rng>(secrets: &[u64], n_frames: usize, field: &Field, rng: &mut R) -> Result<Vec<Vec<u64>>> {
    let mut out = vec![Vec::with_capacity(secrets.len()); n_frames];
    for &s in secrets {
        for (k, f) in ss_split(s, n_frames, field, rng)?.into_iter().enumerate() {
            out[k].push(f);
        }
    }
    Ok(out)
}

pub fn ss_reconstruct_vec(frames: &[Vec<u64>], field: &Field) -> Result<Vec<u64>> {
    let len = frames.first().map_or(0, Vec::len);
    if frames.iter().any(|f| f.len() != len) {
        return Err(VflError::Protocol("frame vectors differ in length".into()));
    }
    Ok((0..len)
        .map(|i| frames.iter().fold(0, |acc, f| field.add(acc, f[i])))
        .collect())
}

/// One party's shares of a Beaver triple `(a, b, c = a b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripleShare {
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

/// Simulation-only trusted dealer. It issues random multiplication triples
/// and never receives any shared value.
#[derive(Debug)]
pub struct Dealer<R: Rng> {
    field: Field,
    parties: usize,
    rng: R,
    stock: VecDeque<Vec<TripleShare>>,
}

impl<R: Rng> Dealer<R> {
    pub fn new(field: Field, parties: usize, rng: R) -> Self {
        Dealer {
            field,
            parties,
            rng,
            stock: VecDeque::new(),
        }
    }

    /// Pre-issue `count` triples.
    pub fn issue(&mut self, count: usize) -> Result<()> {
        for _ in 0..count {
            let a = self.field.random(&mut self.rng);
            let b = self.field.random(&mut self.rng);
            let c = self.field.mul(a, b);
            let sa = ss_split(a, self.parties, &self.field, &mut self.rng)?;
            let sb = ss_split(b, self.parties, &self.field, &mut self.rng)?;
            let sc = ss_split(c, self.parties, &self.field, &mut self.rng)?;
            self.stock.push_back(
                (0..self.parties)
                    .map(|i| TripleShare {
                        a: sa[i],
                        b: sb[i],
                        c: sc[i],
                    })
                    .collect(),
            );
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.stock.len()
    }

    /// Take the next triple, one share per party.
    pub fn take(&mut self) -> Result<Vec<TripleShare>> {
        self.stock
            .pop_front()
            .ok_or_else(|| VflError::Protocol("no multiplication triple left".into()))
    }

    pub fn field(&self) -> &Field {
        &self.field
    }
}

/// Two-party vector triples keyed by a tag both parties derive on their
/// own. Each side takes its half once; the entry is dropped after both have.
#[derive(Debug)]
pub struct KeyedDealer {
    field: Field,
    seed: u64,
    issued: HashMap<u64, [Option<Vec<TripleShare>>; 2]>,
}

impl KeyedDealer {
    pub fn new(field: Field, seed: u64) -> Self {
        KeyedDealer {
            field,
            seed,
            issued: HashMap::new(),
        }
    }

    pub fn field(&self) -> Field {
        self.field
    }

    /// Party `index` (0 or 1) takes its shares of `len` triples for `tag`.
    pub fn take(&mut self, tag: u64, index: usize, len: usize) -> Result<Vec<TripleShare>> {
        if index > 1 {
            return Err(VflError::Protocol(format!("two-party dealer asked for share {index}")));
        }
        let field = self.field;
        let seed = self.seed;
        let slot = match self.issued.entry(tag) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(v) => {
                let mut dealer = Dealer::new(field, 2, crate::rng::derived(seed, "triples", tag));
                dealer.issue(len)?;
                let mut halves = [Vec::with_capacity(len), Vec::with_capacity(len)];
                for _ in 0..len {
                    let t = dealer.take()?;
                    halves[0].push(t[0]);
                    halves[1].push(t[1]);
                }
                let [h0, h1] = halves;
                v.insert([Some(h0), Some(h1)])
            }
        };
        let share = slot[index]
            .take()
            .ok_or_else(|| VflError::Protocol(format!("triple {tag} already taken by party {index}")))?;
        if share.len() != len {
            return Err(VflError::Protocol(format!("triple {tag} has length {}, wanted {len}", share.len())));
        }
        if slot.iter().all(Option::is_none) {
            self.issued.remove(&tag);
        }
        Ok(share)
    }

    pub fn outstanding(&self) -> usize {
        self.issued.len()
    }
}

/// Party-local first step: the masked differences `(x_i - a_i, y_i - b_i)`
/// that this party publishes.
pub fn beaver_open(field: &Field, x: u64, y: u64, t: &TripleShare) -> (u64, u64) {
    (field.sub(x, t.a), field.sub(y, t.b))
}

/// Party-local second step once `d = x - a` and `e = y - b` are public.
/// Party 0 adds the public term `d e`.
pub fn beaver_finish(field: &Field, index: usize, d: u64, e: u64, t: &TripleShare) -> u64 {
    let mut z = field.add(t.c, field.add(field.mul(d, t.b), field.mul(e, t.a)));
    if index == 0 {
        z = field.add(z, field.mul(d, e));
    }
    z
}

/// Shares of `x y` from shares of `x` and `y`, consuming one dealer triple.
pub fn ss_mul<R: Rng>(x: &[u64], y: &[u64], dealer: &mut Dealer<R>) -> Result<Vec<u64>> {
    if x.len() != y.len() || x.len() != dealer.parties {
        return Err(VflError::Protocol("frame topology mismatch".into()));
    }
    let field = dealer.field;
    let triple = dealer.take()?;
    let opened: Vec<(u64, u64)> = (0..x.len()).map(|i| beaver_open(&field, x[i], y[i], &triple[i])).collect();
    let d = opened.iter().fold(0, |acc, o| field.add(acc, o.0));
    let e = opened.iter().fold(0, |acc, o| field.add(acc, o.1));
    Ok((0..x.len()).map(|i| beaver_finish(&field, i, d, e, &triple[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn field_setup() {
        assert!(is_prime_u64(DEFAULT_PRIME));
        assert!(!is_prime_u64(561));
        assert!(Field::new(15).is_err());
        assert_eq!(Field::with_prime_bits(61).unwrap().modulus(), DEFAULT_PRIME);
        assert_eq!(Field::with_prime_bits(8).unwrap().modulus(), 251);
    }

    #[test]
    fn split_examples() {
        let f = Field::default();
        let mut rng = seeded(1);
        let s = ss_split(10, 3, &f, &mut rng).unwrap();
        assert_eq!(ss_reconstruct(&s, &f), 10);
        let z = ss_split(0, 2, &f, &mut rng).unwrap();
        assert_eq!(f.add(z[0], z[1]), 0);
        assert_eq!(z[1], f.neg(z[0]));
        assert!(ss_split(1, 1, &f, &mut rng).is_err());
    }

    #[test]
    fn beaver_examples() {
        let f = Field::default();
        let mut rng = seeded(2);
        let mut dealer = Dealer::new(f, 2, seeded(3));
        dealer.issue(2).unwrap();
        let x = ss_split(3, 2, &f, &mut rng).unwrap();
        let y = ss_split(4, 2, &f, &mut rng).unwrap();
        assert_eq!(ss_reconstruct(&ss_mul(&x, &y, &mut dealer).unwrap(), &f), 12);
        let zero = ss_split(0, 2, &f, &mut rng).unwrap();
        assert_eq!(ss_reconstruct(&ss_mul(&zero, &y, &mut dealer).unwrap(), &f), 0);
        assert!(ss_mul(&x, &y, &mut dealer).is_err());
    }

    #[test]
    fn keyed_dealer_halves_agree() {
        let f = Field::default();
        let mut d = KeyedDealer::new(f, 11);
        let a = d.take(7, 1, 3).unwrap();
        let b = d.take(7, 0, 3).unwrap();
        assert_eq!(d.outstanding(), 0);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(f.add(x.c, y.c), f.mul(f.add(x.a, y.a), f.add(x.b, y.b)));
        }
        assert!(d.take(8, 0, 2).is_ok());
        assert!(d.take(8, 0, 2).is_err());
    }

    #[test]
    fn indicator_and_via_shares() {
        let f = Field::default();
        let mut rng = seeded(4);
        let u = [1u64, 0, 1, 1, 0];
        let v = [1u64, 1, 0, 1, 0];
        let su = ss_split_vec(&u, 2, &f, &mut rng).unwrap();
        let sv = ss_split_vec(&v, 2, &f, &mut rng).unwrap();
        let mut dealer = Dealer::new(f, 2, seeded(5));
        dealer.issue(u.len()).unwrap();
        let mut prod = vec![Vec::new(); 2];
        for i in 0..u.len() {
            let z = ss_mul(&[su[0][i], su[1][i]], &[sv[0][i], sv[1][i]], &mut dealer).unwrap();
            prod[0].push(z[0]);
            prod[1].push(z[1]);
        }
        let and: Vec<u64> = u.iter().zip(&v).map(|(a, b)| a & b).collect();
        assert_eq!(ss_reconstruct_vec(&prod, &f).unwrap(), and);
    }
}
