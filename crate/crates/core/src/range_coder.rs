//! Byte-oriented range coder over 15-bit integer frequency tables.
//!
//! The encoder keeps a 32-bit `low` in a `u64` so additions can overflow into
//! bit 32; such carries are propagated into the bytes already written. The
//! stream ends with the four bytes of `low`, so a payload is exactly
//! `renormalizations + 4` bytes and the decoder consumes every byte.

use crate::entropy::{EntropyModel, SymbolDistribution, FREQ_TOTAL, PRECISION_BITS};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
const FLUSH_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub bytes: Vec<u8>,
    pub symbol_count: u64,
}

impl Payload {
    pub fn bits(&self) -> u64 {
        8 * self.bytes.len() as u64
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    /// Narrows the interval to `[cum, cum + freq)` out of 2^15.
    #[inline]
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= FREQ_TOTAL);
        let r = self.range >> PRECISION_BITS;
        self.low += u64::from(r) * u64::from(cum);
        self.range = r * freq;
        if self.low >> 32 != 0 {
            self.propagate_carry();
            self.low &= 0xFFFF_FFFF;
        }
        while self.range < TOP {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & 0xFFFF_FFFF;
            self.range <<= 8;
        }
    }

    pub fn encode_symbol(&mut self, dist: &SymbolDistribution, symbol: u32) {
        self.encode(dist.cumulative(symbol), dist.freq(symbol));
    }

    fn propagate_carry(&mut self) {
        for byte in self.out.iter_mut().rev() {
            if *byte == 0xFF {
                *byte = 0;
            } else {
                *byte += 1;
                return;
            }
        }
        unreachable!("carry out of the first byte: interval left [0, 1)");
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.out.extend_from_slice(&(self.low as u32).to_be_bytes());
        self.out
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < FLUSH_BYTES {
            return Err(decode_err(format!(
                "payload of {} bytes is shorter than the {FLUSH_BYTES}-byte flush",
                bytes.len()
            )));
        }
        let code = u32::from_be_bytes(bytes[..4].try_into().unwrap());
        Ok(Self {
            bytes,
            pos: 4,
            code,
            range: u32::MAX,
        })
    }

    pub fn decode_symbol(&mut self, dist: &SymbolDistribution) -> Result<u32> {
        let r = self.range >> PRECISION_BITS;
        let target = self.code / r;
        if target >= FREQ_TOTAL {
            return Err(decode_err("code value outside the coded interval"));
        }
        let symbol = dist.symbol_for(target);
        self.code -= r * dist.cumulative(symbol);
        self.range = r * dist.freq(symbol);
        while self.range < TOP {
            let byte = *self
                .bytes
                .get(self.pos)
                .ok_or_else(|| decode_err(format!("payload truncated at byte {}", self.pos)))?;
            self.pos += 1;
            self.code = (self.code << 8) | u32::from(byte);
            self.range <<= 8;
        }
        if self.code >= self.range {
            return Err(decode_err("code value outside the coded interval"));
        }
        Ok(symbol)
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn decode_err(msg: impl Into<String>) -> Error {
    Error::decode("<payload>", msg)
}

/// Encodes `symbols`, querying and then updating a fresh `model` per symbol.
pub fn encode<M: EntropyModel>(symbols: &[u32], mut model: M) -> Result<Payload> {
    let k = model.alphabet_size();
    let mut enc = RangeEncoder::new();
    for (t, &s) in symbols.iter().enumerate() {
        if s as usize >= k {
            return Err(Error::InvalidArgument(format!(
                "symbol {s} at position {t} outside alphabet of size {k}"
            )));
        }
        enc.encode_symbol(model.distribution(), s);
        model.update(s);
    }
    Ok(Payload {
        bytes: enc.finish(),
        symbol_count: symbols.len() as u64,
    })
}

/// Replays `model` to decode `payload.symbol_count` symbols. The payload must
/// be consumed exactly.
pub fn decode<M: EntropyModel>(payload: &Payload, mut model: M, k: usize) -> Result<Vec<u32>> {
    if model.alphabet_size() != k {
        return Err(Error::InvalidArgument(format!(
            "model alphabet {} does not match k = {k}",
            model.alphabet_size()
        )));
    }
    let mut dec = RangeDecoder::new(&payload.bytes)?;
    let count = usize::try_from(payload.symbol_count)
        .map_err(|_| decode_err("symbol count does not fit in memory"))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let s = dec.decode_symbol(model.distribution())?;
        model.update(s);
        out.push(s);
    }
    if dec.remaining() != 0 {
        return Err(decode_err(format!(
            "{} trailing bytes after {} symbols",
            dec.remaining(),
            count
        )));
    }
    Ok(out)
}

/// Σ −log₂ p over the symbols under a replayed model.
pub fn information_content<M: EntropyModel>(symbols: &[u32], mut model: M) -> f64 {
    let mut bits = 0.0;
    for &s in symbols {
        bits += model.rate_bits(s);
        model.update(s);
    }
    bits
}
