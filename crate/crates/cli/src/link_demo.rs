use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use hdqkd::channel::ChannelModel;
use hdqkd::link::{
    audit_disclosed_bits, run_alice, run_bob, run_loopback_tcp, split_records, tag_bits, AbortKind,
    AliceRecord, BobRecord, LinkParams, Role, SessionOutcome, SessionStatus, WIRE_VERSION,
};
use hdqkd::protocol::{simulate_montecarlo, McOptions};
use hdqkd::qudit::Basis;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};

/// Where this invocation sits in the session.
#[derive(Debug, Clone)]
pub enum Endpoint {
    /// Both roles in one process over a loopback socket.
    Loopback,
    /// Bob, accepting one connection.
    Listen(String),
    /// Alice, connecting to Bob.
    Connect(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub role: String,
    pub verified: bool,
    pub abort_kind: Option<String>,
    pub abort_reason: Option<String>,
    pub key_symbols: usize,
    pub final_key_bytes: usize,
    pub qber_time_estimate: f64,
    pub qber_phase: f64,
    pub sifted_time: usize,
    pub sifted_phase: usize,
    pub sample_size: usize,
    pub disclosed_bits: u64,
    /// Disclosed bits recounted from the raw transcript; `None` when the
    /// transcript does not parse (a fault-injected version byte).
    pub audited_bits: Option<u64>,
    pub transcript_bytes: usize,
}

impl LinkSummary {
    fn new(o: &SessionOutcome) -> Self {
        let (abort_kind, abort_reason) = match &o.status {
            SessionStatus::Verified => (None, None),
            SessionStatus::Aborted { kind, reason } => (
                Some(match kind {
                    AbortKind::Mismatch => "mismatch".to_string(),
                    AbortKind::Protocol => "protocol".to_string(),
                }),
                Some(reason.clone()),
            ),
        };
        Self {
            role: match o.role {
                Role::Alice => "alice".into(),
                Role::Bob => "bob".into(),
            },
            verified: o.verified(),
            abort_kind,
            abort_reason,
            key_symbols: o.key.len(),
            final_key_bytes: o.final_key.len(),
            qber_time_estimate: o.qber_time_estimate,
            qber_phase: o.qber_phase,
            sifted_time: o.sifted_time,
            sifted_phase: o.sifted_phase,
            sample_size: o.sample_size,
            disclosed_bits: o.ledger.disclosed_bits,
            audited_bits: audit_disclosed_bits(&o.transcript).ok(),
            transcript_bytes: o.transcript.wire_bytes().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDemoReport {
    /// Time-basis error rate of the simulated records before the session.
    pub raw_qber_time: f64,
    pub records: usize,
    pub alice: Option<LinkSummary>,
    pub bob: Option<LinkSummary>,
    /// Only known when both roles ran here.
    pub keys_identical: Option<bool>,
}

impl LinkDemoReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// First abort reason of either party.
    pub fn abort(&self) -> Option<String> {
        [&self.alice, &self.bob]
            .into_iter()
            .flatten()
            .find_map(|s| s.abort_reason.clone())
    }
}

/// Each party's records, after the configured reconciliation stand-in and
/// planted noise. Deterministic in the config, so two processes agree.
pub fn demo_records(cfg: &RunConfig) -> CliResult<(Vec<AliceRecord>, Vec<BobRecord>, f64)> {
    let l = &cfg.link;
    let channel = ChannelModel::new(l.loss_db).map_err(|e| CliError::Config(e.to_string()))?;
    let mut opts = McOptions::new(l.frames, l.seed);
    opts.keep_records = true;
    let run = simulate_montecarlo(&cfg.protocol, &channel, &cfg.receiver, &cfg.detector, &opts)?;
    let raw_qber = run.tally.qber(Basis::Time).unwrap_or(0.0);
    let (alice, mut bob) = split_records(&run.records);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(l.noise_seed);
    for (a, b) in alice.iter().zip(bob.iter_mut()) {
        if b.basis != Basis::Time {
            continue;
        }
        if l.reconciled && a.basis == Basis::Time {
            b.symbol = a.symbol;
        }
        if l.planted_qber > 0.0 && rng.gen::<f64>() < l.planted_qber {
            b.symbol = (b.symbol + rng.gen_range(1..4)) % 4;
        }
    }
    Ok((alice, bob, raw_qber))
}

pub fn link_params(cfg: &RunConfig, wire_version: Option<u8>) -> CliResult<LinkParams> {
    let l = &cfg.link;
    let tag = match l.tag_bits {
        Some(t) => t,
        None => tag_bits(cfg.security.epsilon_cor)?,
    };
    Ok(LinkParams {
        sample_fraction: l.sample_fraction,
        sample_seed: l.sample_seed,
        hash_seed: l.hash_seed,
        tag_bits: tag,
        final_bits: l.final_bits,
        wire_version: wire_version.unwrap_or(WIRE_VERSION),
    })
}

fn parse_addr(addr: &str) -> CliResult<SocketAddr> {
    addr.parse()
        .map_err(|e| CliError::Config(format!("bad address `{addr}`: {e}")))
}

fn connect_with_retry(addr: SocketAddr, timeout: Duration) -> CliResult<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() >= timeout => {
                return Err(CliError::Runtime(format!("connect {addr}: {e}")))
            }
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Runs the demo. `on_listen` receives the bound address before Bob blocks
/// in `accept`, so callers can announce an OS-assigned port.
pub fn run_link_demo(
    cfg: &RunConfig,
    endpoint: &Endpoint,
    wire_version: Option<u8>,
    mut on_listen: impl FnMut(SocketAddr),
) -> CliResult<(LinkDemoReport, Vec<SessionOutcome>)> {
    cfg.validate()?;
    let params = link_params(cfg, wire_version)?;
    let (alice, bob, raw_qber) = demo_records(cfg)?;
    let outcomes = match endpoint {
        Endpoint::Loopback => {
            let (a, b) = run_loopback_tcp(&alice, &bob, &params)?;
            vec![a, b]
        }
        Endpoint::Listen(addr) => {
            let listener = TcpListener::bind(parse_addr(addr)?)
                .map_err(|e| CliError::Runtime(format!("bind {addr}: {e}")))?;
            on_listen(listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?);
            let (mut stream, _) = listener
                .accept()
                .map_err(|e| CliError::Runtime(format!("accept: {e}")))?;
            vec![run_bob(&mut stream, &bob, params.final_bits)?]
        }
        Endpoint::Connect(addr) => {
            let mut stream = connect_with_retry(parse_addr(addr)?, Duration::from_secs(10))?;
            vec![run_alice(&mut stream, &alice, &params)?]
        }
    };
    let mut report = LinkDemoReport {
        raw_qber_time: raw_qber,
        records: alice.len(),
        alice: None,
        bob: None,
        keys_identical: None,
    };
    for o in &outcomes {
        let s = Some(LinkSummary::new(o));
        match o.role {
            Role::Alice => report.alice = s,
            Role::Bob => report.bob = s,
        }
    }
    if let [a, b] = outcomes.as_slice() {
        report.keys_identical = Some(a.key == b.key && a.verified() && b.verified());
    }
    Ok((report, outcomes))
}

/// Writes `link_demo.json` and one hex transcript per role under `dir`.
pub fn write_link_demo(report: &LinkDemoReport, outcomes: &[SessionOutcome], dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let json = dir.join("link_demo.json");
    std::fs::write(&json, report.to_json()).map_err(|e| CliError::io(&json, e))?;
    for o in outcomes {
        let name = match o.role {
            Role::Alice => "transcript_alice.hex",
            Role::Bob => "transcript_bob.hex",
        };
        let path = dir.join(name);
        std::fs::write(&path, o.transcript.to_hex()).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.link.frames = 400_000;
        cfg
    }

    #[test]
    fn loopback_zero_noise_verifies() {
        let (r, o) = run_link_demo(&demo(), &Endpoint::Loopback, None, |_| {}).unwrap();
        assert_eq!(r.keys_identical, Some(true), "{}", r.to_json());
        assert!(!o[0].key.is_empty());
        let a = r.alice.unwrap();
        assert_eq!(Some(a.disclosed_bits), a.audited_bits);
        assert_eq!(a.qber_time_estimate, 0.0);
        assert!(r.raw_qber_time > 0.01);
    }

    #[test]
    fn planted_noise_aborts() {
        let mut cfg = demo();
        cfg.link.planted_qber = 0.05;
        let (r, _) = run_link_demo(&cfg, &Endpoint::Loopback, None, |_| {}).unwrap();
        assert_eq!(r.keys_identical, Some(false));
        assert_eq!(r.alice.as_ref().unwrap().abort_kind.as_deref(), Some("mismatch"));
        let q = r.bob.as_ref().unwrap().qber_time_estimate;
        assert!((q - 0.05).abs() < 0.03, "{q}");
    }

    #[test]
    fn version_mismatch_aborts() {
        let (r, _) = run_link_demo(&demo(), &Endpoint::Loopback, Some(9), |_| {}).unwrap();
        let bob = r.bob.unwrap();
        assert_eq!(bob.abort_kind.as_deref(), Some("protocol"));
        assert!(bob.abort_reason.unwrap().contains("version"));
    }

    #[test]
    fn unreconciled_records_abort() {
        let mut cfg = demo();
        cfg.link.reconciled = false;
        let (r, _) = run_link_demo(&cfg, &Endpoint::Loopback, None, |_| {}).unwrap();
        assert_eq!(r.keys_identical, Some(false));
        assert!(r.abort().is_some());
    }
}
