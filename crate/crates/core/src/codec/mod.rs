//! Parameter codecs.
//!
//! A codec maps a [`ParamBlob`] of `f32` weights to an [`EncodedBlob`].
//! Identity and DEFLATE are lossless and opaque: the parameter server must
//! decode before it can aggregate. The affine quantizer in [`quant`] is lossy
//! but closed under addition and scaling, so aggregation runs directly on
//! the compressed representation.
//!
//! `EncodedBlob` wire format, little-endian:
//!
//! ```text
//! [u8 codec_id][u32 original_count][u32 payload_len][payload]
//! ```

mod deflate;
pub mod quant;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;

pub use deflate::DEFLATE_LEVEL;
pub use quant::{average_error_bound, h_add, h_average, h_average_with, h_scale, quantize, QuantizedBlob};

/// Size of the `EncodedBlob` envelope preceding the payload.
pub const ENVELOPE_LEN: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("parameter blob must hold at least one value")]
    EmptyBlob,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("truncated input at byte {offset}: need {needed} more byte(s)")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt payload at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("unknown codec id {0:#04x}")]
    UnknownCodec(u8),
    #[error("codec mismatch: expected {expected}, found {found}")]
    CodecMismatch { expected: String, found: String },
    #[error("element count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },
    #[error("operation needs at least one blob")]
    EmptyInput,
    #[error("unsupported quantization width {0} (expected 8 or 16)")]
    InvalidBits(u8),
    #[error("scale factor must be finite (got {0})")]
    InvalidFactor(f64),
}

/// A flat buffer of finite `f32` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlob {
    values: Vec<f32>,
}

impl ParamBlob {
    pub fn new(values: Vec<f32>) -> Result<Self, CodecError> {
        if values.is_empty() {
            return Err(CodecError::EmptyBlob);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn byte_len(&self) -> usize {
        4 * self.values.len()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(CodecError::Corrupt {
                offset: bytes.len() - bytes.len() % 4,
                reason: "raw float payload length is not a multiple of 4".into(),
            });
        }
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(values)
    }

    /// Elementwise float-domain mean.
    pub fn mean(blobs: &[ParamBlob]) -> Result<ParamBlob, CodecError> {
        let first = blobs.first().ok_or(CodecError::EmptyInput)?;
        for b in blobs {
            if b.len() != first.len() {
                return Err(CodecError::CountMismatch { left: first.len(), right: b.len() });
            }
        }
        let m = blobs.len() as f64;
        let values =
            (0..first.len()).map(|i| (blobs.iter().map(|b| b.values[i] as f64).sum::<f64>() / m) as f32).collect();
        ParamBlob::new(values)
    }
}

/// Codec identifier carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CodecId {
    Identity = 0,
    Deflate = 1,
    Quant = 2,
}

impl CodecId {
    pub fn from_u8(v: u8) -> Result<Self, CodecError> {
        match v {
            0 => Ok(CodecId::Identity),
            1 => Ok(CodecId::Deflate),
            2 => Ok(CodecId::Quant),
            other => Err(CodecError::UnknownCodec(other)),
        }
    }
}

/// A configured codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CodecKind {
    Identity,
    Deflate,
    /// Affine quantization to 8 or 16 bits per value.
    Quant(u8),
}

impl CodecKind {
    pub const ALL: [CodecKind; 4] =
        [CodecKind::Identity, CodecKind::Deflate, CodecKind::Quant(8), CodecKind::Quant(16)];

    pub fn id(self) -> CodecId {
        match self {
            CodecKind::Identity => CodecId::Identity,
            CodecKind::Deflate => CodecId::Deflate,
            CodecKind::Quant(_) => CodecId::Quant,
        }
    }

    pub fn is_lossless(self) -> bool {
        !matches!(self, CodecKind::Quant(_))
    }

    /// Whether the parameter server can aggregate without decoding.
    pub fn is_homomorphic(self) -> bool {
        matches!(self, CodecKind::Quant(_))
    }
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecKind::Identity => f.write_str("identity"),
            CodecKind::Deflate => f.write_str("deflate"),
            CodecKind::Quant(bits) => write!(f, "quant{bits}"),
        }
    }
}

impl FromStr for CodecKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(CodecKind::Identity),
            "deflate" => Ok(CodecKind::Deflate),
            "quant8" => Ok(CodecKind::Quant(8)),
            "quant16" => Ok(CodecKind::Quant(16)),
            other => Err(format!("unknown codec '{other}' (expected identity|deflate|quant8|quant16)")),
        }
    }
}

impl TryFrom<String> for CodecKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CodecKind> for String {
    fn from(c: CodecKind) -> String {
        c.to_string()
    }
}

/// Output of a codec: `phi(w)` plus what is needed to reverse it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBlob {
    pub codec_id: CodecId,
    pub original_count: u32,
    pub payload: Vec<u8>,
}

impl EncodedBlob {
    /// Compressed size over original size, payload only.
    pub fn ratio(&self) -> f64 {
        self.payload.len() as f64 / (4.0 * self.original_count as f64)
    }

    pub fn wire_len(&self) -> usize {
        ENVELOPE_LEN + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.codec_id as u8);
        out.extend_from_slice(&self.original_count.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Parses a complete serialized blob; trailing bytes are rejected.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        if buf.len() < ENVELOPE_LEN {
            return Err(CodecError::Truncated { offset: buf.len(), needed: ENVELOPE_LEN - buf.len() });
        }
        let codec_id = CodecId::from_u8(buf[0])?;
        let original_count = u32::from_le_bytes([buf[1], buf[2], buf[3], buf[4]]);
        if original_count == 0 {
            return Err(CodecError::Corrupt { offset: 1, reason: "zero element count".into() });
        }
        let payload_len = u32::from_le_bytes([buf[5], buf[6], buf[7], buf[8]]) as usize;
        let body = &buf[ENVELOPE_LEN..];
        if body.len() < payload_len {
            return Err(CodecError::Truncated { offset: buf.len(), needed: payload_len - body.len() });
        }
        if body.len() > payload_len {
            return Err(CodecError::Corrupt {
                offset: ENVELOPE_LEN + payload_len,
                reason: format!("{} trailing byte(s)", body.len() - payload_len),
            });
        }
        Ok(Self { codec_id, original_count, payload: body.to_vec() })
    }
}

pub fn encode(codec: CodecKind, blob: &ParamBlob) -> EncodedBlob {
    encode_with(codec, blob, Exec::default())
}

pub fn encode_with(codec: CodecKind, blob: &ParamBlob, exec: Exec) -> EncodedBlob {
    let payload = match codec {
        CodecKind::Identity => blob.to_le_bytes(),
        CodecKind::Deflate => deflate::compress(&blob.to_le_bytes()),
        CodecKind::Quant(bits) => quant::quantize_with(blob.values(), bits, exec)
            .expect("codec kinds only carry supported widths")
            .to_payload(),
    };
    EncodedBlob { codec_id: codec.id(), original_count: blob.len() as u32, payload }
}

pub fn decode(codec: CodecKind, enc: &EncodedBlob) -> Result<ParamBlob, CodecError> {
    decode_with(codec, enc, Exec::default())
}

pub fn decode_with(codec: CodecKind, enc: &EncodedBlob, exec: Exec) -> Result<ParamBlob, CodecError> {
    if enc.codec_id != codec.id() {
        return Err(CodecError::CodecMismatch { expected: codec.to_string(), found: format!("{:?}", enc.codec_id) });
    }
    let count = enc.original_count as usize;
    match codec {
        CodecKind::Identity => {
            if enc.payload.len() != 4 * count {
                return Err(CodecError::Corrupt {
                    offset: enc.payload.len().min(4 * count),
                    reason: format!("expected {} raw bytes, found {}", 4 * count, enc.payload.len()),
                });
            }
            ParamBlob::from_le_bytes(&enc.payload)
        }
        CodecKind::Deflate => ParamBlob::from_le_bytes(&deflate::decompress(&enc.payload, 4 * count)?),
        CodecKind::Quant(bits) => {
            let q = QuantizedBlob::from_payload(&enc.payload, count)?;
            if q.bits() != bits {
                return Err(CodecError::CodecMismatch {
                    expected: codec.to_string(),
                    found: format!("quant{}", q.bits()),
                });
            }
            ParamBlob::new(q.dequantize_with(exec))
        }
    }
}

/// Decodes with whatever codec the blob says it was produced by.
pub fn decode_any(enc: &EncodedBlob) -> Result<ParamBlob, CodecError> {
    match enc.codec_id {
        CodecId::Identity => decode(CodecKind::Identity, enc),
        CodecId::Deflate => decode(CodecKind::Deflate, enc),
        CodecId::Quant => {
            let q = QuantizedBlob::from_payload(&enc.payload, enc.original_count as usize)?;
            ParamBlob::new(q.dequantize())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(v: &[f32]) -> ParamBlob {
        ParamBlob::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identity_is_raw_le_bytes() {
        let b = blob(&[1.0, -2.5, 3.25]);
        let e = encode(CodecKind::Identity, &b);
        assert_eq!(e.payload, b.to_le_bytes());
        assert_eq!(e.ratio(), 1.0);
        assert_eq!(decode(CodecKind::Identity, &e).unwrap(), b);
    }

    #[test]
    fn deflate_zeros_compress_hard() {
        let b = ParamBlob::new(vec![0.0; 1 << 18]).unwrap();
        let e = encode(CodecKind::Deflate, &b);
        assert!(e.ratio() < 0.01, "ratio {}", e.ratio());
        assert_eq!(decode(CodecKind::Deflate, &e).unwrap(), b);
    }

    #[test]
    fn truncated_deflate_reports_offset() {
        let values: Vec<f32> = (0..4096).map(|i| (i as f32).sin()).collect();
        let mut e = encode(CodecKind::Deflate, &blob(&values));
        let cut = e.payload.len() / 2;
        e.payload.truncate(cut);
        match decode(CodecKind::Deflate, &e) {
            Err(CodecError::Truncated { offset, .. }) => assert!(offset <= cut),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_deflate_is_an_error() {
        let e = EncodedBlob { codec_id: CodecId::Deflate, original_count: 16, payload: vec![0xff; 40] };
        assert!(matches!(
            decode(CodecKind::Deflate, &e),
            Err(CodecError::Corrupt { .. } | CodecError::Truncated { .. })
        ));
    }

    #[test]
    fn codec_mismatch_is_rejected() {
        let e = encode(CodecKind::Identity, &blob(&[1.0]));
        assert!(matches!(decode(CodecKind::Deflate, &e), Err(CodecError::CodecMismatch { .. })));
        let q = encode(CodecKind::Quant(8), &blob(&[1.0, 2.0]));
        assert!(matches!(decode(CodecKind::Quant(16), &q), Err(CodecError::CodecMismatch { .. })));
    }

    #[test]
    fn blob_invariants() {
        assert_eq!(ParamBlob::new(vec![]), Err(CodecError::EmptyBlob));
        assert_eq!(ParamBlob::new(vec![1.0, f32::NAN]), Err(CodecError::NonFinite { index: 1 }));
        assert_eq!(blob(&[1.0, 2.0]).byte_len(), 8);
    }

    #[test]
    fn envelope_layout() {
        let e = EncodedBlob { codec_id: CodecId::Quant, original_count: 3, payload: vec![7, 8] };
        let bytes = e.to_bytes();
        assert_eq!(bytes, vec![2, 3, 0, 0, 0, 2, 0, 0, 0, 7, 8]);
        assert_eq!(EncodedBlob::from_bytes(&bytes).unwrap(), e);
        assert!(matches!(EncodedBlob::from_bytes(&bytes[..10]), Err(CodecError::Truncated { offset: 10, needed: 1 })));
        assert!(matches!(EncodedBlob::from_bytes(&[9, 1, 0, 0, 0, 0, 0, 0, 0]), Err(CodecError::UnknownCodec(9))));
    }

    #[test]
    fn codec_names_roundtrip() {
        for c in CodecKind::ALL {
            assert_eq!(c.to_string().parse::<CodecKind>().unwrap(), c);
        }
        assert!("gzip".parse::<CodecKind>().is_err());
    }

    #[test]
    fn float_mean() {
        let m = ParamBlob::mean(&[blob(&[1.0, 2.0]), blob(&[3.0, 6.0])]).unwrap();
        assert_eq!(m.values(), &[2.0, 4.0]);
        assert!(ParamBlob::mean(&[]).is_err());
        assert!(ParamBlob::mean(&[blob(&[1.0]), blob(&[1.0, 2.0])]).is_err());
    }
}
