// SPDX-License-Identifier: Apache-2.0

//! Fixed-point encoding of reals into Paillier plaintexts.
//!
//! `x` encodes to `round(x * 2^scale_bits)` as a signed integer. Negative
//! integers live in the upper half of `Z_n` (`v -> n - |v|`) and are
//! recentred on decode: any residue above `n / 2` is read as negative.
//! Sums stay exact as long as the true sum stays below `n / 2` in magnitude.

use num_bigint::BigUint;
use num_traits::ToPrimitive;

use crate::error::{Result, VflError};

pub const DEFAULT_SCALE_BITS: u32 = 40;

/// Largest encoded magnitude; keeps every encoded value and sums of up to
/// 2^20 of them inside `i128`.
const MAX_ENCODED_BITS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointCodec {
    pub scale_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec {
            scale_bits: DEFAULT_SCALE_BITS,
        }
    }
}

impl FixedPointCodec {
    pub fn new(scale_bits: u32) -> Result<Self> {
        if scale_bits == 0 || scale_bits > 64 {
            return Err(VflError::Config(format!("fixed-point scale 2^{scale_bits} out of range")));
        }
        Ok(FixedPointCodec { scale_bits })
    }

    pub fn scale(&self) -> f64 {
        (self.scale_bits as f64).exp2()
    }

    /// Resolution of the encoding, `2^-scale_bits`.
    pub fn resolution(&self) -> f64 {
        1.0 / self.scale()
    }

    pub fn encode(&self, x: f64) -> Result<i128> {
        let v = (x * self.scale()).round();
        if !v.is_finite() || v.abs() >= (MAX_ENCODED_BITS as f64).exp2() {
            return Err(VflError::Numeric(format!("{x} overflows the fixed-point range")));
        }
        Ok(v as i128)
    }

    pub fn decode(&self, v: i128) -> f64 {
        v as f64 / self.scale()
    }

    pub fn to_plaintext(&self, v: i128, n: &BigUint) -> Result<BigUint> {
        let mag = BigUint::from(v.unsigned_abs());
        if mag.clone() * 2u32 >= *n {
            return Err(VflError::Numeric("encoded value exceeds half the modulus".into()));
        }
        Ok(if v < 0 { n - mag } else { mag })
    }

    pub fn from_plaintext(&self, m: &BigUint, n: &BigUint) -> Result<i128> {
        if m >= n {
            return Err(VflError::Numeric("plaintext outside Z_n".into()));
        }
        let half = n >> 1;
        let overflow = || VflError::Numeric("decoded magnitude exceeds i128".into());
        if *m > half {
            let mag = (n - m).to_i128().ok_or_else(overflow)?;
            Ok(-mag)
        } else {
            m.to_i128().ok_or_else(overflow)
        }
    }

    pub fn encode_plain(&self, x: f64, n: &BigUint) -> Result<BigUint> {
        self.to_plaintext(self.encode(x)?, n)
    }

    pub fn decode_plain(&self, m: &BigUint, n: &BigUint) -> Result<f64> {
        Ok(self.decode(self.from_plaintext(m, n)?))
    }

    /// Whether `count` values of magnitude at most `max_abs` can be summed
    /// without wrapping modulo an `n_bits`-bit modulus.
    pub fn check_capacity(&self, max_abs: f64, count: usize, n_bits: usize) -> Result<()> {
        let need = (max_abs * self.scale() * count.max(1) as f64).log2() + 1.0;
        if need >= (n_bits as f64 - 1.0) || need >= MAX_ENCODED_BITS as f64 + 20.0 {
            return Err(VflError::Config(format!(
                "{count} values of magnitude {max_abs} need {need:.0} bits at scale 2^{}, modulus has {n_bits}",
                self.scale_bits
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn encode_examples() {
        let c16 = FixedPointCodec::new(16).unwrap();
        assert_eq!(c16.encode(1.25).unwrap(), 81920);
        assert_eq!(FixedPointCodec::default().encode(0.0).unwrap(), 0);
        assert!(FixedPointCodec::default().encode(f64::NAN).is_err());
        assert!(FixedPointCodec::default().encode(1e30).is_err());
    }

    #[test]
    fn negative_values_recentre() {
        let c = FixedPointCodec::default();
        let n = BigUint::from(1u128 << 120) + 1u32;
        let m = c.encode_plain(-3.5, &n).unwrap();
        assert!(m > (&n >> 1));
        assert_eq!(c.decode_plain(&m, &n).unwrap(), -3.5);
    }

    #[test]
    fn large_sums_stay_exact() {
        let c = FixedPointCodec::default();
        let n = BigUint::from(1u32) << 1023u32;
        c.check_capacity(1e3, 1_000_000, 1024).unwrap();
        let mut rng = crate::rng::seeded(9);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plain_sum: f64 = xs.iter().sum();
        let mut acc = BigUint::from(0u32);
        for &x in &xs {
            acc = (acc + c.encode_plain(x, &n).unwrap()) % &n;
        }
        let decoded = c.decode_plain(&acc, &n).unwrap();
        assert!((decoded - plain_sum).abs() < 1e-6, "{decoded} vs {plain_sum}");
    }

    #[test]
    fn capacity_violation_is_reported() {
        let c = FixedPointCodec::default();
        assert!(c.check_capacity(1e3, 1_000_000, 64).is_err());
    }
}
