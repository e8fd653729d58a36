// SPDX-License-Identifier: Apache-2.0

//! Paillier additively homomorphic encryption with `g = n + 1`.
//!
//! Not constant time; for simulation and measurement only.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

use crate::error::{Result, VflError};
use crate::rng::seeded;

pub const SUPPORTED_KEY_BITS: [usize; 4] = [512, 1024, 2048, 3072];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_sq: BigUint,
    bits: usize,
    key_id: u64,
}

#[derive(Debug, Clone)]
pub struct PrivateKey {
    public: PublicKey,
    p: BigUint,
    q: BigUint,
    p_sq: BigUint,
    q_sq: BigUint,
    // L_p(g^(p-1) mod p^2)^-1 mod p, same for q
    h_p: BigUint,
    h_q: BigUint,
    // p^-1 mod q, for recombination
    p_inv_q: BigUint,
    // n mod p(p-1) and n mod q(q-1): reduced exponents for owner-side encryption
    n_mod_phi_p_sq: BigUint,
    n_mod_phi_q_sq: BigUint,
    // p^2 ^-1 mod q^2
    p_sq_inv_q_sq: BigUint,
}

#[derive(Debug, Clone)]
pub struct PaillierKeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

/// A ciphertext in `Z_{n^2}` tagged with the fingerprint of its key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherScalar {
    value: BigUint,
    key_id: u64,
}

impl CipherScalar {
    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }
}

fn fingerprint(n: &BigUint) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in n.to_bytes_be() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

const SMALL_PRIMES: [u32; 54] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233,
    239, 241, 251, 257,
];

/// Miller-Rabin with random bases; error probability at most `4^-rounds`.
pub fn is_probable_prime<R: Rng>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if *n == sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return *n == two;
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits and the top two bits set.
fn random_prime<R: Rng>(bits: usize, rng: &mut R) -> BigUint {
    loop {
        let mut c = rng.gen_biguint(bits as u64);
        c.set_bit(bits as u64 - 1, true);
        c.set_bit(bits as u64 - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, 40, rng) {
            return c;
        }
    }
}

/// `L(x) = (x - 1) / m`.
fn l_func(x: &BigUint, m: &BigUint) -> BigUint {
    (x - 1u32) / m
}

pub fn paillier_keygen(key_bits: usize, seed: u64) -> Result<PaillierKeyPair> {
    if key_bits < 512 || key_bits % 16 != 0 {
        return Err(VflError::Crypto(format!(
            "key size must be a multiple of 16 and at least 512 bits, got {key_bits}"
        )));
    }
    let mut rng = seeded(seed);
    loop {
        let p = random_prime(key_bits / 2, &mut rng);
        let q = random_prime(key_bits / 2, &mut rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        if n.bits() as usize != key_bits {
            continue;
        }
        // gcd(n, (p-1)(q-1)) = 1 holds for equal-length primes; check anyway
        if !n.gcd(&((&p - 1u32) * (&q - 1u32))).is_one() {
            continue;
        }
        return Ok(assemble(p, q, key_bits));
    }
}

fn assemble(p: BigUint, q: BigUint, bits: usize) -> PaillierKeyPair {
    let n = &p * &q;
    let n_sq = &n * &n;
    let g = &n + 1u32;
    let p_sq = &p * &p;
    let q_sq = &q * &q;
    let h_p = l_func(&g.modpow(&(&p - 1u32), &p_sq), &p)
        .modinv(&p)
        .expect("h_p invertible");
    let h_q = l_func(&g.modpow(&(&q - 1u32), &q_sq), &q)
        .modinv(&q)
        .expect("h_q invertible");
    let p_inv_q = p.modinv(&q).expect("p invertible mod q");
    let n_mod_phi_p_sq = &n % (&p * (&p - 1u32));
    let n_mod_phi_q_sq = &n % (&q * (&q - 1u32));
    let p_sq_inv_q_sq = p_sq.modinv(&q_sq).expect("p^2 invertible mod q^2");
    let public = PublicKey {
        key_id: fingerprint(&n),
        n,
        n_sq,
        bits,
    };
    PaillierKeyPair {
        private: PrivateKey {
            public: public.clone(),
            p,
            q,
            p_sq,
            q_sq,
            h_p,
            h_q,
            p_inv_q,
            n_mod_phi_p_sq,
            n_mod_phi_q_sq,
            p_sq_inv_q_sq,
        },
        public,
    }
}

impl PublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    /// Serialized ciphertext width: `2 * bits / 8` bytes.
    pub fn cipher_bytes(&self) -> usize {
        2 * self.bits.div_ceil(8)
    }

    fn check_plain(&self, m: &BigUint) -> Result<()> {
        if *m >= self.n {
            return Err(VflError::Crypto("plaintext outside Z_n".into()));
        }
        Ok(())
    }

    fn check_key(&self, c: &CipherScalar) -> Result<()> {
        if c.key_id != self.key_id {
            return Err(VflError::Crypto("ciphertext belongs to a different key".into()));
        }
        Ok(())
    }

    fn random_unit<R: Rng>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// `(1 + m n) mod n^2`, the deterministic part of an encryption.
    fn g_pow(&self, m: &BigUint) -> BigUint {
        (m * &self.n + 1u32) % &self.n_sq
    }

    pub fn encrypt<R: Rng>(&self, m: &BigUint, rng: &mut R) -> Result<CipherScalar> {
        self.check_plain(m)?;
        let r = self.random_unit(rng);
        let rn = r.modpow(&self.n, &self.n_sq);
        Ok(CipherScalar {
            value: self.g_pow(m) * rn % &self.n_sq,
            key_id: self.key_id,
        })
    }

    /// Encryption of zero with randomness 1; the neutral element of `add`.
    pub fn identity(&self) -> CipherScalar {
        CipherScalar {
            value: BigUint::one(),
            key_id: self.key_id,
        }
    }

    pub fn add(&self, a: &CipherScalar, b: &CipherScalar) -> Result<CipherScalar> {
        self.check_key(a)?;
        self.check_key(b)?;
        Ok(CipherScalar {
            value: &a.value * &b.value % &self.n_sq,
            key_id: self.key_id,
        })
    }

    pub fn scalar_mul(&self, c: &CipherScalar, k: &BigUint) -> Result<CipherScalar> {
        self.check_key(c)?;
        self.check_plain(k)?;
        Ok(CipherScalar {
            value: c.value.modpow(k, &self.n_sq),
            key_id: self.key_id,
        })
    }

    /// Multiply by a fresh encryption of zero so the result is unlinkable.
    pub fn rerandomize<R: Rng>(&self, c: &CipherScalar, rng: &mut R) -> Result<CipherScalar> {
        self.check_key(c)?;
        let zero = self.encrypt(&BigUint::zero(), rng)?;
        self.add(c, &zero)
    }

    /// Fixed-width big-endian encoding.
    pub fn cipher_to_bytes(&self, c: &CipherScalar) -> Result<Vec<u8>> {
        self.check_key(c)?;
        let raw = c.value.to_bytes_be();
        let width = self.cipher_bytes();
        let mut out = vec![0u8; width - raw.len()];
        out.extend_from_slice(&raw);
        Ok(out)
    }

    pub fn cipher_from_bytes(&self, bytes: &[u8]) -> Result<CipherScalar> {
        if bytes.len() != self.cipher_bytes() {
            return Err(VflError::Decode(format!(
                "ciphertext of {} bytes, expected {}",
                bytes.len(),
                self.cipher_bytes()
            )));
        }
        let value = BigUint::from_bytes_be(bytes);
        if value >= self.n_sq {
            return Err(VflError::Decode("ciphertext outside Z_{n^2}".into()));
        }
        Ok(CipherScalar {
            value,
            key_id: self.key_id,
        })
    }

    /// Decimal modulus, as written to key sidecars.
    pub fn to_decimal(&self) -> String {
        self.n.to_str_radix(10)
    }

    pub fn from_decimal(n: &str) -> Result<Self> {
        let n = BigUint::parse_bytes(n.trim().as_bytes(), 10)
            .ok_or_else(|| VflError::Decode("modulus is not a decimal integer".into()))?;
        PublicKey::from_modulus(n)
    }

    pub fn from_modulus(n: BigUint) -> Result<Self> {
        if n.bits() < 16 {
            return Err(VflError::Decode("modulus too small".into()));
        }
        Ok(PublicKey {
            n_sq: &n * &n,
            bits: n.bits() as usize,
            key_id: fingerprint(&n),
            n,
        })
    }
}

impl PrivateKey {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &CipherScalar) -> Result<BigUint> {
        self.public.check_key(c)?;
        let cp = c.value.modpow(&(&self.p - 1u32), &self.p_sq);
        let mp = l_func(&cp, &self.p) * &self.h_p % &self.p;
        let cq = c.value.modpow(&(&self.q - 1u32), &self.q_sq);
        let mq = l_func(&cq, &self.q) * &self.h_q % &self.q;
        // m = mp + p * ((mq - mp) * p^-1 mod q)
        let diff = (&mq + &self.q - (&mp % &self.q)) % &self.q;
        Ok(&mp + &self.p * (diff * &self.p_inv_q % &self.q))
    }

    /// Key-holder encryption: same distribution as [`PublicKey::encrypt`],
    /// with `r^n mod n^2` computed modulo `p^2` and `q^2` separately.
    pub fn encrypt<R: Rng>(&self, m: &BigUint, rng: &mut R) -> Result<CipherScalar> {
        let pk = &self.public;
        pk.check_plain(m)?;
        let r = pk.random_unit(rng);
        let a = (&r % &self.p_sq).modpow(&self.n_mod_phi_p_sq, &self.p_sq);
        let b = (&r % &self.q_sq).modpow(&self.n_mod_phi_q_sq, &self.q_sq);
        // CRT: x = a + p^2 * ((b - a) * (p^2)^-1 mod q^2)
        let diff = (&b + &self.q_sq - (&a % &self.q_sq)) % &self.q_sq;
        let rn = &a + &self.p_sq * (diff * &self.p_sq_inv_q_sq % &self.q_sq);
        Ok(CipherScalar {
            value: pk.g_pow(m) * rn % &pk.n_sq,
            key_id: pk.key_id,
        })
    }

    /// Decimal `p` and `q`.
    pub fn to_decimal(&self) -> (String, String) {
        (self.p.to_str_radix(10), self.q.to_str_radix(10))
    }

    pub fn from_decimal(p: &str, q: &str) -> Result<PaillierKeyPair> {
        let parse = |s: &str| {
            BigUint::parse_bytes(s.trim().as_bytes(), 10).ok_or_else(|| VflError::Decode("prime is not a decimal integer".into()))
        };
        let (p, q) = (parse(p)?, parse(q)?);
        let bits = (&p * &q).bits() as usize;
        Ok(assemble(p, q, bits))
    }
}
