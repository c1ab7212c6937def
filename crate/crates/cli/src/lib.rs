//! Driver for the `hdqkd` binary: key-rate sweeps, state dumps, Monte Carlo
//! validation and the two-party link demo.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime error (including an
//! aborted link session), 4 validation failure.

pub mod config;
pub mod error;
pub mod link_demo;
pub mod states;
pub mod sweep;
pub mod validate;

use clap::{Args, Parser, Subcommand};
use config::{Mode, RunConfig};
use error::{CliError, CliResult};
use hdqkd::finite_key::{BiasedEstimator, DecoyEstimator, VacuumWeakDecoy};
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "hdqkd", version, about = "Four-dimensional time-bin decoy-state QKD simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Secret key rate against channel loss; writes sweep.csv and sweep.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Losses in dB, replacing the config's sweep list.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        loss: Option<Vec<f64>>,
    },
    /// Probability matrix and interferometer output PDFs as CSV.
    States {
        /// Dimensions to dump (2, 4 or 8).
        #[arg(long = "dim", value_delimiter = ',', default_values_t = [2usize, 4, 8])]
        dims: Vec<usize>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Monte Carlo against analytic tallies, and bound coverage against
    /// ground truth; writes validation.json.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Seed list such as `1-100` or `1,4,9-12`.
        #[arg(long)]
        seeds: Option<String>,
        /// Consistency-suite losses in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        loss: Option<Vec<f64>>,
        /// Scale the single-photon bound by this factor (negative control).
        #[arg(long, hide = true)]
        biased_s1: Option<f64>,
    },
    /// Runs the post-processing session over TCP.
    LinkDemo {
        #[command(flatten)]
        common: Common,
        /// Act as Bob and accept one connection on this address.
        #[arg(long, conflicts_with = "connect")]
        listen: Option<String>,
        /// Act as Alice and connect to Bob at this address.
        #[arg(long)]
        connect: Option<String>,
        /// Channel loss of the simulated records.
        #[arg(long, allow_hyphen_values = true)]
        loss: Option<f64>,
        /// Extra symbol-error probability on Bob's raw key.
        #[arg(long)]
        planted_qber: Option<f64>,
        /// Version byte Alice sends.
        #[arg(long, hide = true)]
        wire_version: Option<u8>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; library defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        Ok(cfg)
    }
}

/// Runs one command, writing human-readable output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let out = |w: &mut dyn Write, s: String| {
        writeln!(w, "{s}").map_err(|e| CliError::Runtime(format!("stdout: {e}")))
    };
    match cli.command {
        Command::Sweep { common, mode, loss } => {
            let mut cfg = common.load()?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(l) = loss {
                cfg.sweep = l;
            }
            let report = sweep::run_sweep(&cfg)?;
            sweep::write_sweep(&report, &cfg.output.dir)?;
            out(stdout, report.rows_to_csv().trim_end().to_string())
        }
        Command::States { dims, out: dir } => {
            for d in dims {
                let dump = states::dump_states(d)?;
                let [m, c] = states::write_states(&dump, &dir)?;
                out(
                    stdout,
                    format!(
                        "d={d}: max cross-basis probability {:.17}, {} output bins, central bin {}; wrote {} and {}",
                        dump.matrix.max_cross_basis(),
                        dump.output_bins,
                        dump.central_bin,
                        m.display(),
                        c.display()
                    ),
                )?;
            }
            Ok(())
        }
        Command::Validate {
            common,
            seeds,
            loss,
            biased_s1,
        } => {
            let mut cfg = common.load()?;
            if let Some(l) = loss {
                cfg.validate.consistency.loss_db = l;
            }
            let biased;
            let estimator: &dyn DecoyEstimator = match biased_s1 {
                Some(scale) => {
                    biased = BiasedEstimator {
                        inner: VacuumWeakDecoy,
                        s1_scale: scale,
                        v1_scale: 1.0,
                    };
                    &biased
                }
                None => &VacuumWeakDecoy,
            };
            let report = validate::run_validate(&cfg, seeds.as_deref(), estimator)?;
            let path = validate::write_validation(&report, &cfg.output.dir)?;
            for c in &report.consistency {
                out(
                    stdout,
                    format!(
                        "consistency {} dB: {}/{} seeds pass (need {}), min p {:.3e}: {}",
                        c.loss_db,
                        c.passing_seeds,
                        c.seeds,
                        c.required_seeds,
                        c.min_p_value,
                        if c.passed { "PASS" } else { "FAIL" }
                    ),
                )?;
            }
            let v = &report.coverage;
            out(
                stdout,
                format!(
                    "coverage over {} runs at beta {:e}: s1 failures {}, phase-error failures {}, allowed {:.2}: {}",
                    v.runs,
                    v.beta,
                    v.s1_failures,
                    v.lambda_failures,
                    v.allowed_failures,
                    if v.passed { "PASS" } else { "FAIL" }
                ),
            )?;
            out(stdout, format!("wrote {}", path.display()))?;
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Validation(format!("see {}", path.display())))
            }
        }
        Command::LinkDemo {
            common,
            listen,
            connect,
            loss,
            planted_qber,
            wire_version,
        } => {
            let mut cfg = common.load()?;
            if let Some(l) = loss {
                cfg.link.loss_db = l;
            }
            if let Some(q) = planted_qber {
                cfg.link.planted_qber = q;
            }
            let endpoint = match (listen, connect) {
                (Some(a), None) => link_demo::Endpoint::Listen(a),
                (None, Some(a)) => link_demo::Endpoint::Connect(a),
                _ => link_demo::Endpoint::Loopback,
            };
            let mut listen_err = Ok(());
            let (report, outcomes) = link_demo::run_link_demo(&cfg, &endpoint, wire_version, |addr| {
                listen_err = out(stdout, format!("listening on {addr}"));
                let _ = stdout.flush();
            })?;
            listen_err?;
            link_demo::write_link_demo(&report, &outcomes, &cfg.output.dir)?;
            out(stdout, report.to_json())?;
            match report.abort() {
                Some(reason) => Err(CliError::Runtime(format!("session aborted: {reason}"))),
                None => Ok(()),
            }
        }
    }
}
