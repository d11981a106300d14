//! Length-prefixed frames: `[u8 type][u32 LE round][u32 LE len][payload]`.

use std::io::{self, Read, Write};
use std::time::Instant;

use thiserror::Error;

pub const HEADER_LEN: usize = 9;

/// Upper bound on a frame payload unless the caller asks for less.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    Push = 0x02,
    Global = 0x03,
    Done = 0x04,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Result<Self, FrameError> {
        match v {
            0x01 => Ok(Self::Hello),
            0x02 => Ok(Self::Push),
            0x03 => Ok(Self::Global),
            0x04 => Ok(Self::Done),
            other => Err(FrameError::UnknownType(other)),
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("connection closed")]
    Closed,
    #[error("stream ended inside a frame after {got} of {expected} bytes")]
    Truncated { got: usize, expected: usize },
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    TooLarge { len: u32, max: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FrameError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, FrameError::Io(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub round: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, round: u32, payload: Vec<u8>) -> Self {
        Self { msg_type, round, payload }
    }

    pub fn hello(worker_id: u32) -> Self {
        Self::new(MsgType::Hello, 0, worker_id.to_le_bytes().to_vec())
    }

    pub fn done(round: u32) -> Self {
        Self::new(MsgType::Done, round, Vec::new())
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = self.msg_type as u8;
        h[1..5].copy_from_slice(&self.round.to_le_bytes());
        h[5..9].copy_from_slice(&(self.payload.len() as u32).to_le_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.header())?;
        w.write_all(&self.payload)?;
        w.flush()
    }

    /// Parses one frame from the front of `buf`, returning it and the bytes used.
    pub fn parse(buf: &[u8], max_payload: u32) -> Result<(Frame, usize), FrameError> {
        if buf.len() < HEADER_LEN {
            return Err(FrameError::Truncated { got: buf.len(), expected: HEADER_LEN });
        }
        let (msg_type, round, len) = parse_header(buf[..HEADER_LEN].try_into().expect("length checked"), max_payload)?;
        let end = HEADER_LEN + len as usize;
        if buf.len() < end {
            return Err(FrameError::Truncated { got: buf.len(), expected: end });
        }
        Ok((Frame { msg_type, round, payload: buf[HEADER_LEN..end].to_vec() }, end))
    }

    /// Reads one frame. A clean end of stream before the first byte is [`FrameError::Closed`].
    pub fn read_from<R: Read>(r: &mut R, max_payload: u32) -> Result<Frame, FrameError> {
        let header = read_header(r)?;
        let (msg_type, round, len) = parse_header(&header, max_payload)?;
        Ok(Frame { msg_type, round, payload: read_payload(r, len)? })
    }

    /// Like [`Frame::read_from`], also returning when the header finished arriving.
    pub fn read_timed<R: Read>(r: &mut R, max_payload: u32) -> Result<(Frame, Instant), FrameError> {
        let header = read_header(r)?;
        let at = Instant::now();
        let (msg_type, round, len) = parse_header(&header, max_payload)?;
        Ok((Frame { msg_type, round, payload: read_payload(r, len)? }, at))
    }
}

fn parse_header(h: &[u8; HEADER_LEN], max_payload: u32) -> Result<(MsgType, u32, u32), FrameError> {
    let msg_type = MsgType::from_u8(h[0])?;
    let round = u32::from_le_bytes(h[1..5].try_into().expect("4 bytes"));
    let len = u32::from_le_bytes(h[5..9].try_into().expect("4 bytes"));
    if len > max_payload {
        return Err(FrameError::TooLarge { len, max: max_payload });
    }
    Ok((msg_type, round, len))
}

fn read_header<R: Read>(r: &mut R) -> Result<[u8; HEADER_LEN], FrameError> {
    let mut h = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut h[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Truncated { got, expected: HEADER_LEN }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(h)
}

// Grows the buffer as bytes arrive so a forged length cannot force a huge allocation.
fn read_payload<R: Read>(r: &mut R, len: u32) -> Result<Vec<u8>, FrameError> {
    let len = len as usize;
    let mut payload = Vec::with_capacity(len.min(1 << 20));
    let got = r.take(len as u64).read_to_end(&mut payload)?;
    if got < len {
        return Err(FrameError::Truncated { got: HEADER_LEN + got, expected: HEADER_LEN + len });
    }
    Ok(payload)
}
