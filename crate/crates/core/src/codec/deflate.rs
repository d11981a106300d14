use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::{Compression, Decompress, FlushDecompress, Status};

use super::CodecError;

/// zlib's default level.
pub const DEFLATE_LEVEL: u32 = 6;

/// Raw DEFLATE stream, no zlib or gzip framing.
pub(super) fn compress(raw: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::with_capacity(raw.len() / 2), Compression::new(DEFLATE_LEVEL));
    enc.write_all(raw).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

pub(super) fn decompress(payload: &[u8], expected_len: usize) -> Result<Vec<u8>, CodecError> {
    let mut inflater = Decompress::new(false);
    let mut out = Vec::with_capacity(expected_len);
    loop {
        let consumed = inflater.total_in() as usize;
        let produced = out.len();
        let status = inflater
            .decompress_vec(&payload[consumed..], &mut out, FlushDecompress::Finish)
            .map_err(|e| CodecError::Corrupt { offset: inflater.total_in() as usize, reason: e.to_string() })?;
        match status {
            Status::StreamEnd => break,
            Status::Ok | Status::BufError => {
                if out.len() == expected_len {
                    // The stream wants to keep going past the declared size.
                    return Err(CodecError::Corrupt {
                        offset: inflater.total_in() as usize,
                        reason: format!("stream inflates beyond the declared {expected_len} bytes"),
                    });
                }
                let stalled = inflater.total_in() as usize == consumed && out.len() == produced;
                if inflater.total_in() as usize >= payload.len() || stalled {
                    return Err(CodecError::Truncated { offset: inflater.total_in() as usize, needed: 1 });
                }
            }
        }
    }
    let consumed = inflater.total_in() as usize;
    if consumed != payload.len() {
        return Err(CodecError::Corrupt {
            offset: consumed,
            reason: format!("{} byte(s) after end of stream", payload.len() - consumed),
        });
    }
    if out.len() != expected_len {
        return Err(CodecError::Corrupt {
            offset: consumed,
            reason: format!("inflated to {} bytes, expected {expected_len}", out.len()),
        });
    }
    Ok(out)
}
