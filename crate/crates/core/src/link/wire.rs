use super::LinkError;
use std::io::{Read, Write};

pub const WIRE_VERSION: u8 = 1;
const HEADER: usize = 6;
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: u32 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Basis = 2,
    SiftAck = 3,
    Sample = 4,
    Hash = 5,
    Result = 6,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MsgType::Hello,
            2 => MsgType::Basis,
            3 => MsgType::SiftAck,
            4 => MsgType::Sample,
            5 => MsgType::Hash,
            6 => MsgType::Result,
            _ => return None,
        })
    }
}

/// `[version u8][type u8][length u32 LE][payload]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMessage {
    pub version: u8,
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl FrameMessage {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self {
            version: WIRE_VERSION,
            msg_type,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + self.payload.len());
        out.push(self.version);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one frame from the front of `bytes`, returning it and the
    /// number of bytes used.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), LinkError> {
        if bytes.len() < HEADER {
            return Err(LinkError::Truncated);
        }
        let len = u32::from_le_bytes(bytes[2..6].try_into().expect("4 bytes"));
        let (version, msg_type) = check_header(bytes[0], bytes[1], len)?;
        let end = HEADER + len as usize;
        if bytes.len() < end {
            return Err(LinkError::Truncated);
        }
        Ok((
            Self {
                version,
                msg_type,
                payload: bytes[HEADER..end].to_vec(),
            },
            end,
        ))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<Vec<u8>, LinkError> {
        let bytes = self.encode();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(bytes)
    }

    /// Reads one frame; the raw bytes are returned alongside for transcripts.
    pub fn read_from(r: &mut impl Read) -> Result<(Self, Vec<u8>), LinkError> {
        let mut header = [0u8; HEADER];
        r.read_exact(&mut header).map_err(eof_as_truncated)?;
        let len = u32::from_le_bytes(header[2..6].try_into().expect("4 bytes"));
        if len > MAX_PAYLOAD {
            return Err(LinkError::Malformed(format!("payload of {len} bytes")));
        }
        // consume the whole frame before rejecting it
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload).map_err(eof_as_truncated)?;
        let (version, msg_type) = check_header(header[0], header[1], len)?;
        let mut raw = header.to_vec();
        raw.extend_from_slice(&payload);
        Ok((
            Self {
                version,
                msg_type,
                payload,
            },
            raw,
        ))
    }
}

fn check_header(version: u8, ty: u8, len: u32) -> Result<(u8, MsgType), LinkError> {
    if version != WIRE_VERSION {
        return Err(LinkError::VersionMismatch {
            got: version,
            expected: WIRE_VERSION,
        });
    }
    let msg_type = MsgType::from_u8(ty).ok_or(LinkError::UnknownType(ty))?;
    if len > MAX_PAYLOAD {
        return Err(LinkError::Malformed(format!("payload of {len} bytes")));
    }
    Ok((version, msg_type))
}

fn eof_as_truncated(e: std::io::Error) -> LinkError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        LinkError::Truncated
    } else {
        LinkError::Io(e)
    }
}

/// Little-endian payload reader.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], LinkError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| LinkError::Malformed("payload too short".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, LinkError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, LinkError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, LinkError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, LinkError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn finish(&self) -> Result<(), LinkError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(LinkError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

/// Packs symbols 0..3 four to a byte, first symbol in the low bits.
pub fn pack_symbols(symbols: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; symbols.len().div_ceil(4)];
    for (i, &s) in symbols.iter().enumerate() {
        out[i / 4] |= (s & 3) << (2 * (i % 4));
    }
    out
}

pub fn unpack_symbols(bytes: &[u8], count: usize) -> Result<Vec<u8>, LinkError> {
    if bytes.len() != count.div_ceil(4) {
        return Err(LinkError::Malformed(format!(
            "{} bytes cannot hold exactly {count} symbols",
            bytes.len()
        )));
    }
    Ok((0..count)
        .map(|i| (bytes[i / 4] >> (2 * (i % 4))) & 3)
        .collect())
}
