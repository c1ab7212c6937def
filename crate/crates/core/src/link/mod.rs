//! Classical post-processing between Alice and Bob over a byte stream:
//! basis announcement, sifting, sampled error estimation and hash-based
//! error verification, with a ledger of every key-revealing bit.
//!
//! Message flow (`A` Alice, `B` Bob):
//!
//! ```text
//! A -> B  HELLO     sample seed, sample fraction, tag bits
//! B -> A  BASIS     detected frame indices and Bob's bases
//! A -> B  SIFT_ACK  Alice's basis and intensity per detection
//! B -> A  SAMPLE    sampled time-basis symbols, phase-basis symbols
//! A -> B  HASH      error estimates, hash seed, tag of the remaining key
//! B -> A  RESULT    OK or ABORT with a reason
//! ```
//!
//! Error correction is not performed: unequal keys abort at verification.

mod hash;
mod sample;
mod transcript;
mod transport;
mod wire;

pub use hash::{polynomial_hash, tag_bits, FIELD_PRIME};
pub use sample::{sample_and_estimate, sample_indices, sample_size, split_sample, SampleEstimate};
pub use transcript::{audit_disclosed_bits, Direction, Transcript};
pub use transport::{pipe, PipeEnd};
pub use wire::{pack_symbols, unpack_symbols, FrameMessage, MsgType, MAX_PAYLOAD, WIRE_VERSION};

use crate::protocol::{DetectionRecord, Intensity};
use crate::qudit::Basis;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use thiserror::Error;
use wire::Cursor;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("version mismatch: got {got}, expected {expected}")]
    VersionMismatch { got: u8, expected: u8 },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unexpected {got:?}, expected {expected:?}")]
    Unexpected { got: MsgType, expected: MsgType },
    #[error("empty key")]
    EmptyKey,
    #[error("configuration: {0}")]
    Config(String),
}

impl LinkError {
    fn is_protocol(&self) -> bool {
        !matches!(self, LinkError::Io(_) | LinkError::Config(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Alice,
    Bob,
}

/// What Alice knows about a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AliceRecord {
    pub frame: u64,
    pub basis: Basis,
    pub intensity: Intensity,
    pub symbol: u8,
}

/// What Bob knows about a frame in which he registered an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BobRecord {
    pub frame: u64,
    pub basis: Basis,
    pub symbol: u8,
}

/// Splits simulator records into each party's view.
pub fn split_records(records: &[DetectionRecord]) -> (Vec<AliceRecord>, Vec<BobRecord>) {
    records
        .iter()
        .map(|r| {
            (
                AliceRecord {
                    frame: r.frame,
                    basis: r.alice_basis,
                    intensity: r.intensity,
                    symbol: r.alice_symbol,
                },
                BobRecord {
                    frame: r.frame,
                    basis: r.bob_basis,
                    symbol: r.bob_symbol,
                },
            )
        })
        .unzip()
}

/// Random detection records: `n` events, a fraction `time_prob` prepared and
/// measured in the time basis, a few basis mismatches, and Bob's symbol
/// wrong with probability `qber`.
pub fn synthetic_records(n: usize, qber: f64, time_prob: f64, seed: u64) -> Vec<DetectionRecord> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut frame = 0u64;
    (0..n)
        .map(|_| {
            frame += rng.gen_range(1..50);
            let alice_basis = if rng.gen::<f64>() < time_prob {
                Basis::Time
            } else {
                Basis::Phase
            };
            let bob_basis = if rng.gen::<f64>() < 0.05 {
                match alice_basis {
                    Basis::Time => Basis::Phase,
                    Basis::Phase => Basis::Time,
                }
            } else {
                alice_basis
            };
            let u: f64 = rng.gen();
            let intensity = if u < 0.8 {
                Intensity::Signal
            } else if u < 0.9 {
                Intensity::Decoy
            } else {
                Intensity::Vacuum
            };
            let s: u8 = rng.gen_range(0..4);
            let b = if rng.gen::<f64>() < qber {
                (s + rng.gen_range(1..4)) % 4
            } else {
                s
            };
            DetectionRecord {
                frame,
                intensity,
                alice_basis,
                alice_symbol: s,
                bob_basis,
                bob_symbol: b,
            }
        })
        .collect()
}

/// Settings both parties agree on before the session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub sample_fraction: f64,
    pub sample_seed: u64,
    pub hash_seed: u64,
    pub tag_bits: u32,
    /// Secret key length in bits for the placeholder extractor; `None`
    /// keeps the verified key as is.
    pub final_bits: Option<u64>,
    /// Version byte Alice writes; anything but [`WIRE_VERSION`] is a fault
    /// injection.
    pub wire_version: u8,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            sample_fraction: 0.1,
            sample_seed: 1,
            hash_seed: 2,
            tag_bits: 50,
            final_bits: None,
            wire_version: WIRE_VERSION,
        }
    }
}

/// Bits that reveal key information, per message type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionLedger {
    pub disclosed_bits: u64,
    pub entries: Vec<(MsgType, u64)>,
}

impl SessionLedger {
    fn disclose(&mut self, msg: MsgType, bits: u64) {
        self.disclosed_bits += bits;
        self.entries.push((msg, bits));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortKind {
    /// Verification tags differ.
    Mismatch,
    /// Framing, version or sequencing fault.
    Protocol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionStatus {
    Verified,
    Aborted { kind: AbortKind, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub role: Role,
    pub status: SessionStatus,
    /// Verified key symbols (empty on abort).
    pub key: Vec<u8>,
    /// Output of the placeholder extractor: the key packed two bits per
    /// symbol and truncated to `final_bits`.
    pub final_key: Vec<u8>,
    pub ledger: SessionLedger,
    pub qber_time_estimate: f64,
    pub qber_phase: f64,
    pub sifted_time: usize,
    pub sifted_phase: usize,
    pub sample_size: usize,
    pub transcript: Transcript,
}

impl SessionOutcome {
    pub fn verified(&self) -> bool {
        self.status == SessionStatus::Verified
    }
}

/// Placeholder privacy amplification: the first `bits` bits of the packed key.
pub fn truncate_extractor(key: &[u8], bits: u64) -> Vec<u8> {
    let packed = pack_symbols(key);
    let bits = bits.min(packed.len() as u64 * 8) as usize;
    let mut out = packed[..bits.div_ceil(8)].to_vec();
    if bits % 8 != 0 {
        if let Some(last) = out.last_mut() {
            *last &= (1u8 << (bits % 8)) - 1;
        }
    }
    out
}

const STATUS_OK: u8 = 0;
const STATUS_MISMATCH: u8 = 1;
const STATUS_PROTOCOL: u8 = 2;

struct Session<'a, S> {
    io: &'a mut S,
    outcome: SessionOutcome,
}

/// Why a session step stopped.
enum Stop {
    Link(LinkError),
    /// The peer sent an ABORT.
    Peer(AbortKind, String),
    /// This side decided to abort and must tell the peer.
    Local(AbortKind, String),
}

impl From<LinkError> for Stop {
    fn from(e: LinkError) -> Self {
        Stop::Link(e)
    }
}

impl<'a, S: Read + Write> Session<'a, S> {
    fn new(role: Role, io: &'a mut S) -> Self {
        Self {
            io,
            outcome: SessionOutcome {
                role,
                status: SessionStatus::Verified,
                key: Vec::new(),
                final_key: Vec::new(),
                ledger: SessionLedger::default(),
                qber_time_estimate: 0.0,
                qber_phase: 0.0,
                sifted_time: 0,
                sifted_phase: 0,
                sample_size: 0,
                transcript: Transcript::default(),
            },
        }
    }

    fn send(&mut self, frame: FrameMessage) -> Result<(), LinkError> {
        let bytes = frame.write_to(self.io)?;
        self.outcome.transcript.push(Direction::Sent, bytes);
        Ok(())
    }

    fn send_msg(&mut self, ty: MsgType, payload: Vec<u8>) -> Result<(), LinkError> {
        self.send(FrameMessage::new(ty, payload))
    }

    /// Next frame of type `expected`; an ABORT from the peer ends the session.
    fn recv(&mut self, expected: MsgType) -> Result<Vec<u8>, Stop> {
        let (frame, raw) = FrameMessage::read_from(self.io)?;
        self.outcome.transcript.push(Direction::Received, raw);
        if frame.msg_type == MsgType::Result && frame.payload.first() != Some(&STATUS_OK) {
            return Err(peer_abort(&frame.payload));
        }
        if frame.msg_type == expected {
            return Ok(frame.payload);
        }
        Err(Stop::Link(LinkError::Unexpected {
            got: frame.msg_type,
            expected,
        }))
    }

    fn abort(mut self, kind: AbortKind, reason: String, notify: bool) -> SessionOutcome {
        if notify {
            let code = match kind {
                AbortKind::Mismatch => STATUS_MISMATCH,
                AbortKind::Protocol => STATUS_PROTOCOL,
            };
            let mut payload = vec![code];
            payload.extend_from_slice(reason.as_bytes());
            // the peer may already be gone
            let _ = self.send_msg(MsgType::Result, payload);
        }
        self.outcome.status = SessionStatus::Aborted { kind, reason };
        self.outcome.key.clear();
        self.outcome.final_key.clear();
        self.outcome
    }

    fn finish(self, step: Result<(), Stop>) -> Result<SessionOutcome, LinkError> {
        match step {
            Ok(()) => Ok(self.outcome),
            Err(Stop::Peer(kind, reason)) => Ok(self.abort(kind, reason, false)),
            Err(Stop::Local(kind, reason)) => Ok(self.abort(kind, reason, true)),
            Err(Stop::Link(e)) if e.is_protocol() => {
                Ok(self.abort(AbortKind::Protocol, e.to_string(), true))
            }
            Err(Stop::Link(e)) => Err(e),
        }
    }
}

fn peer_abort(payload: &[u8]) -> Stop {
    let (kind, reason) = match payload.split_first() {
        Some((&STATUS_MISMATCH, r)) => (AbortKind::Mismatch, r),
        Some((_, r)) => (AbortKind::Protocol, r),
        None => (AbortKind::Protocol, &[][..]),
    };
    Stop::Peer(kind, String::from_utf8_lossy(reason).into_owned())
}

fn encode_basis(b: Basis) -> u8 {
    b.index() as u8
}

fn decode_basis(v: u8) -> Result<Basis, LinkError> {
    match v {
        0 => Ok(Basis::Time),
        1 => Ok(Basis::Phase),
        _ => Err(LinkError::Malformed(format!("basis byte {v}"))),
    }
}

fn decode_intensity(v: u8) -> Result<Intensity, LinkError> {
    Intensity::ALL
        .get(v as usize)
        .copied()
        .ok_or_else(|| LinkError::Malformed(format!("intensity byte {v}")))
}

fn encode_result_ok() -> Vec<u8> {
    vec![STATUS_OK]
}

fn error_rate(a: &[u8], b: &[u8]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// Runs Alice's side of a session.
pub fn run_alice<S: Read + Write>(
    io: &mut S,
    records: &[AliceRecord],
    params: &LinkParams,
) -> Result<SessionOutcome, LinkError> {
    check_params(params)?;
    let mut s = Session::new(Role::Alice, io);
    let step = alice_steps(&mut s, records, params);
    s.finish(step)
}

fn alice_steps<S: Read + Write>(
    s: &mut Session<'_, S>,
    records: &[AliceRecord],
    p: &LinkParams,
) -> Result<(), Stop> {
    let mut hello = Vec::with_capacity(17);
    hello.extend_from_slice(&p.sample_seed.to_le_bytes());
    hello.extend_from_slice(&p.sample_fraction.to_bits().to_le_bytes());
    hello.push(p.tag_bits as u8);
    s.send(FrameMessage {
        version: p.wire_version,
        msg_type: MsgType::Hello,
        payload: hello,
    })?;

    let payload = s.recv(MsgType::Basis)?;
    let mut c = Cursor::new(&payload);
    let count = c.u32()? as usize;
    let by_frame: HashMap<u64, &AliceRecord> = records.iter().map(|r| (r.frame, r)).collect();
    let mut key = Vec::new();
    let mut phase = Vec::new();
    let mut ack = Vec::with_capacity(4 + 2 * count);
    ack.extend_from_slice(&(count as u32).to_le_bytes());
    for _ in 0..count {
        let frame = c.u64()?;
        let bob_basis = decode_basis(c.u8()?)?;
        let r = by_frame
            .get(&frame)
            .ok_or_else(|| LinkError::Malformed(format!("frame {frame} was never sent")))?;
        ack.push(encode_basis(r.basis));
        ack.push(r.intensity.index() as u8);
        if r.basis == bob_basis {
            match r.basis {
                Basis::Time => key.push(r.symbol),
                Basis::Phase => phase.push(r.symbol),
            }
        }
    }
    c.finish()?;
    s.send_msg(MsgType::SiftAck, ack)?;
    s.outcome.sifted_time = key.len();
    s.outcome.sifted_phase = phase.len();

    let k = sample_size(key.len(), p.sample_fraction)?;
    let idx = sample_indices(key.len(), k, p.sample_seed)?;
    let (sampled, rest) = split_sample(&key, &idx);

    let payload = s.recv(MsgType::Sample)?;
    let mut c = Cursor::new(&payload);
    let (bob_sampled, bob_phase) = read_sample(&mut c)?;
    if bob_sampled.len() != k || bob_phase.len() != phase.len() {
        return Err(Stop::Link(LinkError::Malformed(format!(
            "SAMPLE carries {} + {} symbols, expected {k} + {}",
            bob_sampled.len(),
            bob_phase.len(),
            phase.len()
        ))));
    }
    s.outcome.ledger.disclose(MsgType::Sample, 2 * k as u64);
    s.outcome.sample_size = k;
    s.outcome.qber_time_estimate = error_rate(&sampled, &bob_sampled);
    s.outcome.qber_phase = error_rate(&phase, &bob_phase);

    if rest.is_empty() {
        return Err(Stop::Link(LinkError::EmptyKey));
    }
    let tag = polynomial_hash(&rest, p.hash_seed, p.tag_bits)?;
    let mut h = Vec::new();
    h.extend_from_slice(&s.outcome.qber_time_estimate.to_bits().to_le_bytes());
    h.extend_from_slice(&s.outcome.qber_phase.to_bits().to_le_bytes());
    h.extend_from_slice(&p.hash_seed.to_le_bytes());
    h.extend_from_slice(&tag.to_le_bytes()[..tag_bytes(p.tag_bits)]);
    s.send_msg(MsgType::Hash, h)?;
    s.outcome.ledger.disclose(MsgType::Hash, u64::from(p.tag_bits));

    s.recv(MsgType::Result)?;
    s.outcome.final_key = match p.final_bits {
        Some(bits) => truncate_extractor(&rest, bits),
        None => pack_symbols(&rest),
    };
    s.outcome.key = rest;
    Ok(())
}

/// Runs Bob's side of a session. Sample and tag settings come from HELLO.
pub fn run_bob<S: Read + Write>(
    io: &mut S,
    records: &[BobRecord],
    final_bits: Option<u64>,
) -> Result<SessionOutcome, LinkError> {
    let mut s = Session::new(Role::Bob, io);
    let step = bob_steps(&mut s, records, final_bits);
    s.finish(step)
}

fn bob_steps<S: Read + Write>(
    s: &mut Session<'_, S>,
    records: &[BobRecord],
    final_bits: Option<u64>,
) -> Result<(), Stop> {
    let payload = s.recv(MsgType::Hello)?;
    let mut c = Cursor::new(&payload);
    let sample_seed = c.u64()?;
    let fraction = c.f64()?;
    let tag_bits = u32::from(c.u8()?);
    c.finish()?;
    if !(1..=64).contains(&tag_bits) {
        return Err(Stop::Link(LinkError::Malformed(format!("tag bits {tag_bits}"))));
    }

    let mut basis = Vec::with_capacity(4 + 9 * records.len());
    basis.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        basis.extend_from_slice(&r.frame.to_le_bytes());
        basis.push(encode_basis(r.basis));
    }
    s.send_msg(MsgType::Basis, basis)?;

    let payload = s.recv(MsgType::SiftAck)?;
    let mut c = Cursor::new(&payload);
    if c.u32()? as usize != records.len() {
        return Err(Stop::Link(LinkError::Malformed(
            "SIFT_ACK count differs from BASIS".into(),
        )));
    }
    let mut key = Vec::new();
    let mut phase = Vec::new();
    for r in records {
        let alice_basis = decode_basis(c.u8()?)?;
        decode_intensity(c.u8()?)?;
        if alice_basis == r.basis {
            match r.basis {
                Basis::Time => key.push(r.symbol),
                Basis::Phase => phase.push(r.symbol),
            }
        }
    }
    c.finish()?;
    s.outcome.sifted_time = key.len();
    s.outcome.sifted_phase = phase.len();

    let k = sample_size(key.len(), fraction).map_err(|e| LinkError::Malformed(e.to_string()))?;
    let idx = sample_indices(key.len(), k, sample_seed)?;
    let (sampled, rest) = split_sample(&key, &idx);
    let mut sample = Vec::new();
    sample.extend_from_slice(&(k as u32).to_le_bytes());
    sample.extend_from_slice(&pack_symbols(&sampled));
    sample.extend_from_slice(&(phase.len() as u32).to_le_bytes());
    sample.extend_from_slice(&pack_symbols(&phase));
    s.send_msg(MsgType::Sample, sample)?;
    s.outcome.ledger.disclose(MsgType::Sample, 2 * k as u64);
    s.outcome.sample_size = k;

    let payload = s.recv(MsgType::Hash)?;
    let mut c = Cursor::new(&payload);
    s.outcome.qber_time_estimate = c.f64()?;
    s.outcome.qber_phase = c.f64()?;
    let hash_seed = c.u64()?;
    let mut tag_le = [0u8; 8];
    tag_le[..tag_bytes(tag_bits)].copy_from_slice(c.take(tag_bytes(tag_bits))?);
    c.finish()?;
    let tag = u64::from_le_bytes(tag_le);
    s.outcome.ledger.disclose(MsgType::Hash, u64::from(tag_bits));

    let mine = if rest.is_empty() {
        None
    } else {
        Some(polynomial_hash(&rest, hash_seed, tag_bits)?)
    };
    if mine != Some(tag) {
        let reason = format!(
            "verification tag mismatch over {} symbols ({} bits)",
            rest.len(),
            tag_bits
        );
        return Err(Stop::Local(AbortKind::Mismatch, reason));
    }
    s.send_msg(MsgType::Result, encode_result_ok())?;
    s.outcome.final_key = match final_bits {
        Some(bits) => truncate_extractor(&rest, bits),
        None => pack_symbols(&rest),
    };
    s.outcome.key = rest;
    Ok(())
}

fn read_sample(c: &mut Cursor<'_>) -> Result<(Vec<u8>, Vec<u8>), LinkError> {
    let k = c.u32()? as usize;
    let sampled = unpack_symbols(c.take(k.div_ceil(4))?, k)?;
    let np = c.u32()? as usize;
    let phase = unpack_symbols(c.take(np.div_ceil(4))?, np)?;
    c.finish()?;
    Ok((sampled, phase))
}

fn tag_bytes(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

fn check_params(p: &LinkParams) -> Result<(), LinkError> {
    sample_size(0, p.sample_fraction)?;
    if !(1..=64).contains(&p.tag_bits) {
        return Err(LinkError::Config(format!("tag bits must be 1..=64, got {}", p.tag_bits)));
    }
    Ok(())
}

/// Runs both roles over an in-process pipe.
pub fn run_in_process(
    alice: &[AliceRecord],
    bob: &[BobRecord],
    params: &LinkParams,
) -> Result<(SessionOutcome, SessionOutcome), LinkError> {
    let (mut a, mut b) = pipe();
    std::thread::scope(|scope| {
        let bob_side = scope.spawn(move || run_bob(&mut b, bob, params.final_bits));
        let alice_out = run_alice(&mut a, alice, params);
        drop(a);
        let bob_out = bob_side.join().expect("bob thread");
        Ok((alice_out?, bob_out?))
    })
}

/// Runs both roles over a TCP connection on the loopback interface.
pub fn run_loopback_tcp(
    alice: &[AliceRecord],
    bob: &[BobRecord],
    params: &LinkParams,
) -> Result<(SessionOutcome, SessionOutcome), LinkError> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    std::thread::scope(|scope| {
        let bob_side = scope.spawn(move || -> Result<SessionOutcome, LinkError> {
            let (mut stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            run_bob(&mut stream, bob, params.final_bits)
        });
        let alice_out = (|| {
            let mut stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            run_alice(&mut stream, alice, params)
        })();
        let bob_out = bob_side.join().expect("bob thread");
        Ok((alice_out?, bob_out?))
    })
}
