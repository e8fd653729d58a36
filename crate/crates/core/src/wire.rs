// SPDX-License-Identifier: Apache-2.0

//! Byte-level payload encoding.
//!
//! Every envelope payload is one record: a 1-byte phase tag, a little-endian
//! `u32` body length, then the body. Body fields are little-endian fixed
//! width; variable-length sequences carry a `u32` element count first.

use crate::error::{Result, VflError};
use crate::messaging::Phase;

pub const RECORD_HEADER_LEN: usize = 5;

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Encoder::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Encoder {
            buf: Vec::with_capacity(cap),
        }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn len(&mut self, n: usize) -> &mut Self {
        self.u32(u32::try_from(n).expect("sequence longer than u32::MAX"))
    }

    /// Raw bytes without a length prefix.
    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.len(bytes.len());
        self.raw(bytes)
    }

    pub fn u32s(&mut self, values: &[u32]) -> &mut Self {
        self.len(values.len());
        for &v in values {
            self.u32(v);
        }
        self
    }

    pub fn f64s(&mut self, values: &[f64]) -> &mut Self {
        self.len(values.len());
        for &v in values {
            self.f64(v);
        }
        self
    }

    /// Bit vector packed LSB-first, preceded by its bit length.
    pub fn bits(&mut self, bits: &[bool]) -> &mut Self {
        self.len(bits.len());
        for chunk in bits.chunks(8) {
            let mut byte = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                byte |= (b as u8) << i;
            }
            self.buf.push(byte);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    /// Wrap the body into a tagged, length-prefixed record.
    pub fn into_record(self, phase: Phase) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECORD_HEADER_LEN + self.buf.len());
        out.push(phase.code());
        out.extend_from_slice(&(self.buf.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.buf);
        out
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    /// Open a record, checking its tag and declared length.
    pub fn record(payload: &'a [u8], expected: Phase) -> Result<Self> {
        if payload.len() < RECORD_HEADER_LEN {
            return Err(VflError::Decode("record shorter than its header".into()));
        }
        let phase = Phase::from_code(payload[0])
            .ok_or_else(|| VflError::Decode(format!("unknown phase tag {}", payload[0])))?;
        if phase != expected {
            return Err(VflError::Decode(format!("expected {expected} record, found {phase}")));
        }
        let len = u32::from_le_bytes(payload[1..5].try_into().unwrap()) as usize;
        if payload.len() != RECORD_HEADER_LEN + len {
            return Err(VflError::Decode(format!(
                "record declares {len} body bytes, carries {}",
                payload.len() - RECORD_HEADER_LEN
            )));
        }
        Ok(Decoder::new(&payload[RECORD_HEADER_LEN..]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(VflError::Decode(format!(
                "truncated payload: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        // each element needs at least one byte, or one bit for bit vectors
        if n > 8 * (self.buf.len() - self.pos) {
            return Err(VflError::Decode(format!("sequence length {n} exceeds payload")));
        }
        Ok(n)
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len()?;
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bits(&mut self) -> Result<Vec<bool>> {
        let n = self.len()?;
        let packed = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn finish(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(VflError::Decode(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}
