use crate::config::{Mode, RunConfig};
use crate::error::{CliError, CliResult};
use hdqkd::channel::ChannelModel;
use hdqkd::finite_key::{analyze, Intensities, KeyLengthReport, VacuumWeakDecoy};
use hdqkd::protocol::{simulate_expected, simulate_montecarlo_sharded, McOptions, TallyTable};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub loss_db: f64,
    pub km_equivalent: f64,
    pub qber_time: f64,
    pub qber_phase: f64,
    pub s0: f64,
    pub s1: f64,
    pub lambda_u: f64,
    pub ell: u64,
    pub rate_mbps: f64,
}

impl SweepRow {
    fn new(loss_db: f64, r: &KeyLengthReport) -> Self {
        Self {
            loss_db,
            km_equivalent: ChannelModel { loss_db }.fiber_equivalent_km(),
            qber_time: r.qber_time,
            qber_phase: r.qber_phase,
            s0: r.s0,
            s1: r.s1,
            lambda_u: r.lambda_u,
            ell: r.ell,
            rate_mbps: r.rate_mbps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mode: Mode,
    /// Frames the key length is computed for.
    pub frames: u64,
    pub session_seconds: f64,
    /// Sorted by loss; zero-rate rows are kept.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Runtime(format!("sweep json: {e}")))
    }

    pub fn rows_to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record([
            "loss_db",
            "km_equivalent",
            "qber_time",
            "qber_phase",
            "s0",
            "s1",
            "lambda_u",
            "ell",
            "rate_mbps",
        ])
        .expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn rows_from_csv(text: &str) -> CliResult<Vec<SweepRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Runtime(format!("sweep csv: {e}")))
}

/// Tally for one loss value under the configured mode.
pub fn tally_at(cfg: &RunConfig, loss_db: f64) -> CliResult<TallyTable> {
    let channel = ChannelModel::new(loss_db).map_err(|e| CliError::Config(e.to_string()))?;
    match cfg.mode {
        Mode::Analytic => Ok(simulate_expected(
            &cfg.protocol,
            &channel,
            &cfg.receiver,
            &cfg.detector,
        )?),
        Mode::Montecarlo => {
            let mc = &cfg.montecarlo;
            let run = simulate_montecarlo_sharded(
                &cfg.protocol,
                &channel,
                &cfg.receiver,
                &cfg.detector,
                &McOptions::new(mc.frames, mc.seed),
                mc.shards,
            )?;
            Ok(run.tally.scaled(cfg.protocol.frames as f64 / mc.frames as f64))
        }
    }
}

/// Key-length report for one loss value.
pub fn analyze_loss(cfg: &RunConfig, loss_db: f64) -> CliResult<KeyLengthReport> {
    let tally = tally_at(cfg, loss_db)?;
    let intensities = Intensities::from(&cfg.protocol);
    Ok(analyze(
        &tally,
        &intensities,
        &cfg.security,
        cfg.protocol.session_duration(),
        &VacuumWeakDecoy,
    )?)
}

pub fn run_sweep(cfg: &RunConfig) -> CliResult<SweepReport> {
    cfg.validate()?;
    let mut losses = cfg.sweep.clone();
    losses.sort_by(f64::total_cmp);
    let rows = losses
        .iter()
        .map(|&l| analyze_loss(cfg, l).map(|r| SweepRow::new(l, &r)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(SweepReport {
        mode: cfg.mode,
        frames: cfg.protocol.frames,
        session_seconds: cfg.protocol.session_duration(),
        rows,
    })
}

/// Writes `sweep.csv` and `sweep.json` under `dir`.
pub fn write_sweep(report: &SweepReport, dir: &Path) -> CliResult<[PathBuf; 2]> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let csv_path = dir.join("sweep.csv");
    let json_path = dir.join("sweep.json");
    std::fs::write(&csv_path, report.rows_to_csv()).map_err(|e| CliError::io(&csv_path, e))?;
    std::fs::write(&json_path, report.to_json()).map_err(|e| CliError::io(&json_path, e))?;
    Ok([csv_path, json_path])
}
