//! Affine fixed-point quantization and arithmetic on quantized blobs.
//!
//! A blob of `n` floats is stored as `n` unsigned codes of width `b` plus a
//! scale `s` and zero point `z`; code `q` stands for `z + s * q`. Codes are
//! chosen with round-half-to-even, so every element is within `s / 2` of
//! its source value.
//!
//! Addition never dequantizes. Every scale is a dyadic rational
//! `m * 2^e`, so the codes of all operands can be lifted exactly onto one
//! common power-of-two grid and summed in 128-bit integers. The exact sum is
//! then rounded once onto a fresh `b`-bit grid whose step is at least the
//! largest input step. Consequences:
//!
//! * `h_add(a, b)` is within half an output step of `deq(a) + deq(b)`.
//! * `h_average` of `M` quantized blobs is within `(M + 1) / 2` output steps
//!   of the float mean of the original values.
//!
//! Payload layout, little-endian:
//!
//! ```text
//! [f32 scale][f32 zero_point][u8 bits][codes: u8 or u16 each]
//! ```
//!
//! In memory the scale and zero point are `f64`; the wire narrows them to
//! `f32`. Freshly quantized zero points are exact in `f32`.

use crate::exec::{Exec, CHUNK};

use super::CodecError;

pub const PAYLOAD_HEADER_LEN: usize = 9;

// Operands whose exponent sits more than this far below the largest one are
// rounded onto the common grid instead of lifted exactly.
const MAX_SHIFT: i32 = 24;
const MAX_OPERANDS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlob {
    scale: f64,
    zero_point: f64,
    bits: u8,
    codes: Vec<u16>,
}

fn check_bits(bits: u8) -> Result<u32, CodecError> {
    match bits {
        8 | 16 => Ok((1u32 << bits) - 1),
        other => Err(CodecError::InvalidBits(other)),
    }
}

impl QuantizedBlob {
    pub fn from_parts(scale: f64, zero_point: f64, bits: u8, codes: Vec<u16>) -> Result<Self, CodecError> {
        let levels = check_bits(bits)?;
        if codes.is_empty() {
            return Err(CodecError::EmptyBlob);
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(CodecError::Corrupt { offset: 0, reason: format!("invalid scale {scale}") });
        }
        if !zero_point.is_finite() {
            return Err(CodecError::Corrupt { offset: 4, reason: format!("invalid zero point {zero_point}") });
        }
        if let Some(i) = codes.iter().position(|&q| q as u32 > levels || (scale == 0.0 && q != 0)) {
            return Err(CodecError::Corrupt {
                offset: PAYLOAD_HEADER_LEN + i * (bits as usize / 8),
                reason: format!("code {} invalid for scale {scale} and {bits} bits", codes[i]),
            });
        }
        Ok(Self { scale, zero_point, bits, codes })
    }

    fn constant(value: f64, bits: u8, count: usize) -> Self {
        Self { scale: 0.0, zero_point: value, bits, codes: vec![0; count] }
    }

    /// Quantization step `s`; zero for a constant blob.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn zero_point(&self) -> f64 {
        self.zero_point
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn is_constant(&self) -> bool {
        self.scale == 0.0
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.dequantize_with(Exec::default())
    }

    pub fn dequantize_with(&self, exec: Exec) -> Vec<f32> {
        let (s, z) = (self.scale, self.zero_point);
        exec.map_chunks(&self.codes, CHUNK, |_, chunk| {
            chunk.iter().map(|&q| (z + s * q as f64) as f32).collect::<Vec<_>>()
        })
        .concat()
    }

    pub fn payload_len(&self) -> usize {
        PAYLOAD_HEADER_LEN + self.codes.len() * (self.bits as usize / 8)
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_len());
        out.extend_from_slice(&(self.scale as f32).to_le_bytes());
        out.extend_from_slice(&(self.zero_point as f32).to_le_bytes());
        out.push(self.bits);
        match self.bits {
            8 => out.extend(self.codes.iter().map(|&q| q as u8)),
            _ => self.codes.iter().for_each(|q| out.extend_from_slice(&q.to_le_bytes())),
        }
        out
    }

    pub fn from_payload(payload: &[u8], count: usize) -> Result<Self, CodecError> {
        if payload.len() < PAYLOAD_HEADER_LEN {
            return Err(CodecError::Truncated { offset: payload.len(), needed: PAYLOAD_HEADER_LEN - payload.len() });
        }
        let scale = f32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]) as f64;
        let zero_point = f32::from_le_bytes([payload[4], payload[5], payload[6], payload[7]]) as f64;
        let bits = payload[8];
        check_bits(bits).map_err(|_| CodecError::Corrupt { offset: 8, reason: format!("bit width {bits}") })?;
        let width = bits as usize / 8;
        let body = &payload[PAYLOAD_HEADER_LEN..];
        let expected = count * width;
        if body.len() < expected {
            return Err(CodecError::Truncated { offset: payload.len(), needed: expected - body.len() });
        }
        if body.len() > expected {
            return Err(CodecError::Corrupt {
                offset: PAYLOAD_HEADER_LEN + expected,
                reason: format!("{} trailing byte(s)", body.len() - expected),
            });
        }
        let codes = match bits {
            8 => body.iter().map(|&b| b as u16).collect(),
            _ => body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
        };
        Self::from_parts(scale, zero_point, bits, codes)
    }
}

pub fn quantize(values: &[f32], bits: u8) -> Result<QuantizedBlob, CodecError> {
    quantize_with(values, bits, Exec::default())
}

pub fn quantize_with(values: &[f32], bits: u8, exec: Exec) -> Result<QuantizedBlob, CodecError> {
    let levels = check_bits(bits)?;
    if values.is_empty() {
        return Err(CodecError::EmptyBlob);
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite { index });
    }
    let (lo, hi) = exec
        .map_chunks(values, CHUNK, |_, c| {
            c.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .into_iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
    if lo == hi {
        return Ok(QuantizedBlob::constant(lo as f64, bits, values.len()));
    }
    let (lo, range, levels_f) = (lo as f64, hi as f64 - lo as f64, levels as f64);
    let codes = exec
        .map_chunks(values, CHUNK, |_, c| {
            c.iter()
                .map(|&v| ((v as f64 - lo) * levels_f / range).round_ties_even().clamp(0.0, levels_f) as u16)
                .collect::<Vec<_>>()
        })
        .concat();
    Ok(QuantizedBlob { scale: range / levels_f, zero_point: lo, bits, codes })
}

/// `deq(a) + deq(b)`, in `a`'s bit width.
pub fn h_add(a: &QuantizedBlob, b: &QuantizedBlob) -> Result<QuantizedBlob, CodecError> {
    h_sum_with(&[a, b], a.bits, Exec::default())
}

/// `alpha * deq(a)`, by adjusting scale and zero point only.
///
/// A negative factor mirrors the codes so the scale stays non-negative.
pub fn h_scale(a: &QuantizedBlob, alpha: f64) -> Result<QuantizedBlob, CodecError> {
    if !alpha.is_finite() {
        return Err(CodecError::InvalidFactor(alpha));
    }
    if alpha == 0.0 {
        return Ok(QuantizedBlob::constant(0.0, a.bits, a.len()));
    }
    if a.is_constant() {
        return Ok(QuantizedBlob::constant(alpha * a.zero_point, a.bits, a.len()));
    }
    if alpha > 0.0 {
        return Ok(QuantizedBlob { scale: a.scale * alpha, zero_point: a.zero_point * alpha, ..a.clone() });
    }
    let levels = a.levels() as u16;
    Ok(QuantizedBlob {
        scale: a.scale * -alpha,
        zero_point: alpha * (a.zero_point + a.scale * levels as f64),
        bits: a.bits,
        codes: a.codes.iter().map(|&q| levels - q).collect(),
    })
}

/// Elementwise mean of quantized blobs without dequantizing them.
pub fn h_average(blobs: &[QuantizedBlob]) -> Result<QuantizedBlob, CodecError> {
    h_average_with(blobs, Exec::default())
}

pub fn h_average_with(blobs: &[QuantizedBlob], exec: Exec) -> Result<QuantizedBlob, CodecError> {
    let first = blobs.first().ok_or(CodecError::EmptyInput)?;
    let refs: Vec<&QuantizedBlob> = blobs.iter().collect();
    let sum = h_sum_with(&refs, first.bits, exec)?;
    h_scale(&sum, 1.0 / blobs.len() as f64)
}

/// Worst-case distance, per element, between `h_average` of `m` blobs and
/// the float mean of the values they were quantized from.
pub fn average_error_bound(average: &QuantizedBlob, m: usize) -> f64 {
    (m as f64 + 1.0) / 2.0 * average.scale
}

/// Exact sum of `blobs`, rounded once onto a `bits`-wide grid.
pub fn h_sum_with(blobs: &[&QuantizedBlob], bits: u8, exec: Exec) -> Result<QuantizedBlob, CodecError> {
    let levels = check_bits(bits)?;
    let first = blobs.first().ok_or(CodecError::EmptyInput)?;
    if blobs.len() > MAX_OPERANDS {
        return Err(CodecError::Corrupt { offset: 0, reason: format!("more than {MAX_OPERANDS} operands") });
    }
    let n = first.len();
    for b in blobs {
        if b.len() != n {
            return Err(CodecError::CountMismatch { left: n, right: b.len() });
        }
    }

    let offset: f64 = blobs.iter().map(|b| b.zero_point).sum();
    let terms: Vec<(i128, i32, &[u16])> = blobs
        .iter()
        .filter(|b| !b.is_constant())
        .map(|b| {
            let (m, e) = decompose(b.scale);
            (m, e, b.codes.as_slice())
        })
        .collect();
    let Some(&(max_m, max_e, _)) = terms.iter().max_by_key(|t| (t.1, t.0)) else {
        return Ok(QuantizedBlob::constant(offset, bits, n));
    };
    let min_e = terms.iter().map(|t| t.1).min().expect("non-empty");
    let grid_e = min_e.max(max_e - MAX_SHIFT);
    let max_step = ldexp(max_m as f64, max_e);

    // Each term contributes code * m * 2^(e - grid_e) grid units.
    let lifted: Vec<(Lift, &[u16])> = terms
        .iter()
        .map(|&(m, e, codes)| {
            let lift = if e >= grid_e { Lift::Exact(m << (e - grid_e)) } else { Lift::Rounded(m, grid_e - e) };
            (lift, codes)
        })
        .collect();

    let mut acc = vec![0i128; n];
    exec.for_each_chunk_mut(&mut acc, CHUNK, |ci, chunk| {
        let base = ci * CHUNK;
        for (lift, codes) in &lifted {
            let codes = &codes[base..base + chunk.len()];
            match *lift {
                Lift::Exact(mult) => chunk.iter_mut().zip(codes).for_each(|(a, &q)| *a += mult * q as i128),
                Lift::Rounded(m, shift) => {
                    chunk.iter_mut().zip(codes).for_each(|(a, &q)| *a += round_shift(m * q as i128, shift))
                }
            }
        }
    });

    let (lo, hi) = exec
        .map_chunks(&acc, CHUNK, |_, c| c.iter().fold((i128::MAX, i128::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v))))
        .into_iter()
        .fold((i128::MAX, i128::MIN), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
    let zero_point = offset + ldexp(lo as f64, grid_e);
    let span = hi - lo;
    if span == 0 {
        return Ok(QuantizedBlob::constant(zero_point, bits, n));
    }

    let span_step = ldexp(span as f64, grid_e) / levels as f64;
    let (scale, numer_mult, denom) = if span_step >= max_step {
        (span_step, levels as i128, span)
    } else {
        // Output step floored at the coarsest input step.
        (max_step, 1, max_m << (max_e - grid_e))
    };
    let codes = exec
        .map_chunks(&acc, CHUNK, |_, c| {
            c.iter().map(|&v| round_div((v - lo) * numer_mult, denom) as u16).collect::<Vec<_>>()
        })
        .concat();
    Ok(QuantizedBlob { scale, zero_point, bits, codes })
}

#[derive(Clone, Copy)]
enum Lift {
    Exact(i128),
    Rounded(i128, i32),
}

/// `s = m * 2^e` exactly, with `m` below `2^53` and `e` monotone in `s`.
fn decompose(s: f64) -> (i128, i32) {
    let raw = s.to_bits();
    let exp = ((raw >> 52) & 0x7ff) as i32;
    let frac = (raw & ((1u64 << 52) - 1)) as i128;
    if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1i128 << 52), exp - 1075)
    }
}

fn ldexp(x: f64, e: i32) -> f64 {
    let half = e / 2;
    x * 2f64.powi(half) * 2f64.powi(e - half)
}

/// `num / den` rounded half to even; `num >= 0`, `den > 0`.
fn round_div(num: i128, den: i128) -> i128 {
    let (q, r) = (num / den, num % den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
        std::cmp::Ordering::Less => q,
    }
}

fn round_shift(v: i128, shift: i32) -> i128 {
    if shift >= 120 {
        return 0;
    }
    round_div(v, 1i128 << shift)
}
