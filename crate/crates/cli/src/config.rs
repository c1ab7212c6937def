//! Versioned TOML run configuration.
//!
//! ```toml
//! version = 1
//! mode = "analytic"
//! sweep = [4.0, 8.0, 10.0, 14.0, 16.6]
//!
//! [protocol]
//! frames = 62500000000
//!
//! [detector]
//! dead_time = 100e-9
//! ```
//!
//! Every section is optional and falls back to the library defaults; unknown
//! keys are rejected.

use crate::error::{CliError, CliResult};
use hdqkd::channel::{DetectorModel, ReceiverLayout};
use hdqkd::finite_key::FiniteKeyConfig;
use hdqkd::protocol::ProtocolConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Analytic,
    Montecarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub mode: Mode,
    /// Channel losses in dB.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub receiver: ReceiverLayout,
    #[serde(default)]
    pub detector: DetectorModel,
    #[serde(default)]
    pub security: FiniteKeyConfig,
    #[serde(default)]
    pub montecarlo: MonteCarloSettings,
    #[serde(default)]
    pub validate: ValidateSettings,
    #[serde(default)]
    pub link: LinkSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            mode: Mode::Analytic,
            sweep: vec![4.0, 8.0, 10.0, 14.0, 16.6],
            protocol: ProtocolConfig::default(),
            receiver: ReceiverLayout::default(),
            detector: DetectorModel::default(),
            security: FiniteKeyConfig::default(),
            montecarlo: MonteCarloSettings::default(),
            validate: ValidateSettings::default(),
            link: LinkSettings::default(),
            output: OutputSettings::default(),
        }
    }
}

/// Simulated frames in Monte Carlo mode; tallies are rescaled to
/// `protocol.frames` before the key-length analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSettings {
    pub frames: u64,
    pub seed: u64,
    pub shards: usize,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        Self {
            frames: 10_000_000,
            seed: 1,
            shards: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSettings {
    /// Seed list such as `"1-100"` or `"3,5,9-12"`.
    pub seeds: String,
    pub consistency: ConsistencySettings,
    pub coverage: CoverageSettings,
}

impl Default for ValidateSettings {
    fn default() -> Self {
        Self {
            seeds: "1-100".into(),
            consistency: ConsistencySettings::default(),
            coverage: CoverageSettings::default(),
        }
    }
}

/// Monte Carlo against analytic tallies, per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencySettings {
    pub loss_db: Vec<f64>,
    pub frames: u64,
    /// Two-sided tail probability a cell must reach, in standard deviations.
    pub sigma: f64,
    /// Fraction of seeds whose cells must all pass.
    pub min_pass_fraction: f64,
}

impl Default for ConsistencySettings {
    fn default() -> Self {
        Self {
            loss_db: vec![4.0, 16.6],
            frames: 10_000_000,
            sigma: 5.0,
            min_pass_fraction: 0.99,
        }
    }
}

/// Decoy and phase-error bounds against photon-number ground truth.
///
/// The source and receiver overrides apply only to this suite; at the
/// default 90/10 basis split a short run leaves too few phase-basis events
/// for a non-trivial bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSettings {
    pub loss_db: f64,
    pub frames: u64,
    pub beta: f64,
    /// Runs per seed; run `j` of seed `s` uses `s * runs_per_seed + j`.
    pub runs_per_seed: u64,
    pub time_basis_prob: f64,
    pub basis_split: f64,
    pub intensity_probs: [f64; 3],
    pub dead_time: f64,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        Self {
            loss_db: 0.0,
            frames: 2_000_000,
            beta: 1e-3,
            runs_per_seed: 10,
            time_basis_prob: 0.5,
            basis_split: 0.5,
            intensity_probs: [0.6, 0.2, 0.2],
            dead_time: 1e-9,
        }
    }
}

/// Inputs of the two-party demo. Both invocations must use the same values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSettings {
    pub loss_db: f64,
    pub frames: u64,
    pub seed: u64,
    /// Replace Bob's basis-matched symbols with Alice's before the session,
    /// standing in for an error-correction step the link does not run.
    pub reconciled: bool,
    /// Extra symbol-error probability on Bob's side, applied after
    /// `reconciled`.
    pub planted_qber: f64,
    pub noise_seed: u64,
    pub sample_fraction: f64,
    pub sample_seed: u64,
    pub hash_seed: u64,
    /// Defaults to `ceil(log2(1/security.epsilon_cor))`.
    pub tag_bits: Option<u32>,
    pub final_bits: Option<u64>,
}

impl Default for LinkSettings {
    fn default() -> Self {
        Self {
            loss_db: 4.0,
            frames: 2_000_000,
            seed: 1,
            reconciled: true,
            planted_qber: 0.0,
            noise_seed: 7,
            sample_fraction: 0.1,
            sample_seed: 1,
            hash_seed: 2,
            tag_bits: None,
            final_bits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check().map_err(|(key, msg)| match key.and_then(|k| find_key_line(text, k)) {
            Some(line) => CliError::Config(format!("line {line}: {msg}")),
            None => CliError::Config(msg),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.check().map_err(|(_, msg)| CliError::Config(msg))
    }

    /// Semantic checks; the error names the offending key when there is one.
    fn check(&self) -> Result<(), (Option<&'static str>, String)> {
        if self.version != CONFIG_VERSION {
            return Err((
                Some("version"),
                format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        let lib = |section: &str, r: hdqkd::Result<()>| {
            r.map_err(|e| {
                let key = match &e {
                    hdqkd::Error::InvalidParameter { name, .. } => Some(*name),
                    _ => None,
                };
                (key, format!("[{section}] {e}"))
            })
        };
        lib("protocol", self.protocol.validate())?;
        lib("receiver", self.receiver.validate())?;
        lib("detector", self.detector.validate())?;
        lib("security", self.security.validate())?;
        if let Some(&l) = self.sweep.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err((Some("sweep"), format!("sweep loss {l} dB must be finite and >= 0")));
        }
        if self.montecarlo.frames == 0 || self.montecarlo.shards == 0 {
            return Err((Some("frames"), "[montecarlo] frames and shards must be >= 1".into()));
        }
        let c = &self.validate.consistency;
        if c.frames == 0 || !(c.sigma > 0.0) || !(0.0..=1.0).contains(&c.min_pass_fraction) {
            return Err((
                None,
                "[validate.consistency] need frames >= 1, sigma > 0, min_pass_fraction in [0,1]".into(),
            ));
        }
        let v = &self.validate.coverage;
        if v.frames == 0 || v.runs_per_seed == 0 || !(v.beta > 0.0 && v.beta < 0.1) {
            return Err((
                None,
                "[validate.coverage] need frames >= 1, runs_per_seed >= 1, beta in (0, 0.1)".into(),
            ));
        }
        let l = &self.link;
        if !(0.0..=1.0).contains(&l.planted_qber) {
            return Err((Some("planted_qber"), "[link] planted_qber must be in [0,1]".into()));
        }
        if l.frames == 0 {
            return Err((Some("frames"), "[link] frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// 1-based line of the first `key = ...` assignment.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|line| {
        line.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Parses `"1-100"`, `"3,5,9-12"` and the like into a seed list.
pub fn parse_seeds(list: &str) -> CliResult<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || CliError::Config(format!("bad seed range `{part}`"));
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(CliError::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml_str("version = 1\n").unwrap();
        assert_eq!(cfg.protocol, ProtocolConfig::default());
        assert!(cfg.sweep.is_empty());
        assert_eq!(cfg.mode, Mode::Analytic);
    }

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "version = 1\n\n[protocol]\nframes = 10\nbogus = 3\n";
        let msg = RunConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(msg.contains("line 5"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn semantic_error_reports_line() {
        let text = "version = 1\n[protocol]\nintensity_probs = [0.5, 0.1, 0.1]\n";
        let msg = RunConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("intensity_probs"), "{msg}");
    }

    #[test]
    fn version_is_required_and_checked() {
        assert!(RunConfig::from_toml_str("mode = \"analytic\"\n").is_err());
        let msg = RunConfig::from_toml_str("version = 2\n").unwrap_err().to_string();
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn bad_mode_rejected() {
        assert!(RunConfig::from_toml_str("version = 1\nmode = \"fast\"\n").is_err());
        let cfg = RunConfig::from_toml_str("version = 1\nmode = \"montecarlo\"\n").unwrap();
        assert_eq!(cfg.mode, Mode::Montecarlo);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1-3,7").unwrap(), vec![1, 2, 3, 7]);
        assert_eq!(parse_seeds(" 5 ").unwrap(), vec![5]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds(" , ").is_err());
        assert!(parse_seeds("4-2").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
