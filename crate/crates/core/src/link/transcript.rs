use super::wire::{Cursor, FrameMessage, MsgType};
use super::LinkError;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// Raw frames exchanged by one party, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<(Direction, Vec<u8>)>,
}

impl Transcript {
    pub fn push(&mut self, dir: Direction, bytes: Vec<u8>) {
        self.entries.push((dir, bytes));
    }

    /// All frame bytes in wire order, regardless of direction.
    pub fn wire_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }

    /// One line per frame: `>` sent, `<` received, then lowercase hex.
    pub fn to_hex(&self) -> String {
        let mut out = String::new();
        for (dir, bytes) in &self.entries {
            out.push(match dir {
                Direction::Sent => '>',
                Direction::Received => '<',
            });
            out.push(' ');
            for b in bytes {
                write!(out, "{b:02x}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_hex(text: &str) -> Result<Self, LinkError> {
        let mut t = Transcript::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || LinkError::Malformed(format!("hex transcript line {}", n + 1));
            let (dir, hex) = line.split_once(' ').ok_or_else(bad)?;
            let dir = match dir {
                ">" => Direction::Sent,
                "<" => Direction::Received,
                _ => return Err(bad()),
            };
            let hex = hex.trim();
            if hex.len() % 2 != 0 {
                return Err(bad());
            }
            let bytes = (0..hex.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad()))
                .collect::<Result<Vec<u8>, _>>()?;
            t.push(dir, bytes);
        }
        Ok(t)
    }
}

/// Counts key-revealing bits by parsing the frames themselves: two bits per
/// sampled time-basis symbol in SAMPLE and the tag width announced in HELLO
/// for every HASH.
pub fn audit_disclosed_bits(t: &Transcript) -> Result<u64, LinkError> {
    let bytes = t.wire_bytes();
    let mut pos = 0;
    let mut tag_bits: Option<u64> = None;
    let mut bits = 0u64;
    while pos < bytes.len() {
        let (frame, used) = FrameMessage::decode(&bytes[pos..])?;
        pos += used;
        let mut c = Cursor::new(&frame.payload);
        match frame.msg_type {
            MsgType::Hello => {
                c.take(16)?;
                tag_bits = Some(u64::from(c.u8()?));
            }
            MsgType::Sample => {
                let k = c.u32()?;
                bits += 2 * u64::from(k);
            }
            MsgType::Hash => {
                bits += tag_bits
                    .ok_or_else(|| LinkError::Malformed("HASH before HELLO".into()))?;
            }
            _ => {}
        }
    }
    Ok(bits)
}
