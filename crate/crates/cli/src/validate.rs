use crate::config::{parse_seeds, RunConfig};
use crate::error::{CliError, CliResult};
use hdqkd::channel::ChannelModel;
use hdqkd::finite_key::{phase_error_upper, DecoyEstimator, Intensities};
use hdqkd::protocol::{simulate_expected, simulate_montecarlo, Intensity, McOptions, TallyTable};
use hdqkd::qudit::Basis;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};
use std::path::{Path, PathBuf};

/// Two-sided tail probability of a normal deviate at `sigma`.
pub fn sigma_tail(sigma: f64) -> f64 {
    2.0 * Normal::standard().cdf(-sigma)
}

/// Exact two-sided binomial p-value: twice the smaller tail, capped at 1.
pub fn binomial_two_sided(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let b = Binomial::new(p, n).expect("p in (0,1)");
    let lower = b.cdf(k);
    let upper = if k == 0 { 1.0 } else { b.sf(k - 1) };
    (2.0 * lower.min(upper)).min(1.0)
}

/// Allowed failures out of `trials` for a per-trial failure budget `rate`:
/// the mean plus three binomial standard deviations.
pub fn allowed_failures(rate: f64, trials: u64) -> f64 {
    let t = trials as f64;
    rate * t + 3.0 * (t * rate * (1.0 - rate)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub basis: char,
    pub intensity: char,
    /// `"detections"` or `"errors"`.
    pub quantity: String,
    pub observed: u64,
    pub expected: f64,
    pub p_value: f64,
}

/// Compares every (basis, intensity) detection and error count of a Monte
/// Carlo tally with the analytic per-frame probabilities, conditioned on
/// the frames actually sent at each intensity.
pub fn compare_cells(mc: &TallyTable, analytic: &TallyTable) -> Vec<CellCheck> {
    let mut out = Vec::with_capacity(12);
    for basis in Basis::ALL {
        for k in Intensity::ALL {
            let n = mc.frames[k.index()].round() as u64;
            let per_frame = analytic.frames[k.index()];
            let (a, m) = (analytic.cell(basis, k), mc.cell(basis, k));
            for (quantity, exp, obs) in [
                ("detections", a.detections, m.detections),
                ("errors", a.errors, m.errors),
            ] {
                let p = exp / per_frame;
                let obs = obs.round() as u64;
                out.push(CellCheck {
                    basis: basis.letter(),
                    intensity: k.letter(),
                    quantity: quantity.into(),
                    observed: obs,
                    expected: p * n as f64,
                    p_value: binomial_two_sided(obs, n, p),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub loss_db: f64,
    pub frames: u64,
    pub p_threshold: f64,
    pub seeds: usize,
    pub passing_seeds: usize,
    pub required_seeds: usize,
    /// Seeds with at least one cell below the threshold.
    pub failing_seeds: Vec<u64>,
    pub min_p_value: f64,
    pub passed: bool,
}

pub fn run_consistency(cfg: &RunConfig, loss_db: f64, seeds: &[u64]) -> CliResult<ConsistencyResult> {
    let s = &cfg.validate.consistency;
    let channel = ChannelModel::new(loss_db).map_err(|e| CliError::Config(e.to_string()))?;
    let analytic = simulate_expected(&cfg.protocol, &channel, &cfg.receiver, &cfg.detector)?;
    let threshold = sigma_tail(s.sigma);
    let mut failing = Vec::new();
    let mut min_p = 1.0f64;
    for &seed in seeds {
        let run = simulate_montecarlo(
            &cfg.protocol,
            &channel,
            &cfg.receiver,
            &cfg.detector,
            &McOptions::new(s.frames, seed),
        )?;
        let worst = compare_cells(&run.tally, &analytic)
            .iter()
            .map(|c| c.p_value)
            .fold(1.0, f64::min);
        min_p = min_p.min(worst);
        if worst < threshold {
            failing.push(seed);
        }
    }
    let passing = seeds.len() - failing.len();
    let required = (s.min_pass_fraction * seeds.len() as f64).ceil() as usize;
    Ok(ConsistencyResult {
        loss_db,
        frames: s.frames,
        p_threshold: threshold,
        seeds: seeds.len(),
        passing_seeds: passing,
        required_seeds: required,
        failing_seeds: failing,
        min_p_value: min_p,
        passed: passing >= required,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub loss_db: f64,
    pub frames: u64,
    pub beta: f64,
    pub runs: u64,
    /// Runs where the single-photon key lower bound exceeded the true count.
    pub s1_failures: u64,
    /// Runs where the true single-photon phase error exceeded the upper bound.
    pub lambda_failures: u64,
    pub allowed_failures: f64,
    pub infeasible_runs: u64,
    pub mean_s1_ratio: f64,
    pub mean_lambda_u: f64,
    pub mean_true_phase_error: f64,
    pub passed: bool,
}

/// Configuration the coverage suite runs under.
pub fn coverage_config(cfg: &RunConfig) -> RunConfig {
    let v = &cfg.validate.coverage;
    let mut c = cfg.clone();
    c.protocol.time_basis_prob = v.time_basis_prob;
    c.protocol.intensity_probs = v.intensity_probs;
    c.protocol.frames = v.frames;
    c.receiver.basis_split = v.basis_split;
    c.detector.dead_time = v.dead_time;
    c
}

pub fn run_coverage(
    cfg: &RunConfig,
    seeds: &[u64],
    estimator: &dyn DecoyEstimator,
) -> CliResult<CoverageResult> {
    let v = cfg.validate.coverage.clone();
    let c = coverage_config(cfg);
    c.validate()?;
    let channel = ChannelModel::new(v.loss_db).map_err(|e| CliError::Config(e.to_string()))?;
    let intensities = Intensities::from(&c.protocol);
    let (mut f_s1, mut f_lambda, mut infeasible) = (0u64, 0u64, 0u64);
    let (mut sum_ratio, mut sum_lu, mut sum_true) = (0.0, 0.0, 0.0);
    let mut runs = 0u64;
    for &seed in seeds {
        for j in 0..v.runs_per_seed {
            let sub = seed.wrapping_mul(v.runs_per_seed).wrapping_add(j);
            let run = simulate_montecarlo(
                &c.protocol,
                &channel,
                &c.receiver,
                &c.detector,
                &McOptions::new(v.frames, sub),
            )?;
            let truth = run.ground_truth();
            let b = estimator.bounds(&run.tally, &intensities, v.beta)?;
            let lu = phase_error_upper(b.lambda_obs(), b.s1_lower, b.s1_phase_lower, v.beta);
            let s1_true = truth.single_photon_key() as f64;
            let e_true = truth.key_phase_error_rate();
            f_s1 += u64::from(b.s1_lower > s1_true);
            f_lambda += u64::from(e_true > lu);
            infeasible += u64::from(b.infeasible);
            if s1_true > 0.0 {
                sum_ratio += b.s1_lower / s1_true;
            }
            sum_lu += lu;
            sum_true += e_true;
            runs += 1;
        }
    }
    let allowed = allowed_failures((10.0 * v.beta).min(1.0), runs);
    let n = runs as f64;
    Ok(CoverageResult {
        loss_db: v.loss_db,
        frames: v.frames,
        beta: v.beta,
        runs,
        s1_failures: f_s1,
        lambda_failures: f_lambda,
        allowed_failures: allowed,
        infeasible_runs: infeasible,
        mean_s1_ratio: sum_ratio / n,
        mean_lambda_u: sum_lu / n,
        mean_true_phase_error: sum_true / n,
        passed: (f_s1 as f64) <= allowed && (f_lambda as f64) <= allowed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub estimator: String,
    pub seeds: Vec<u64>,
    pub consistency: Vec<ConsistencyResult>,
    pub coverage: CoverageResult,
    pub passed: bool,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs both suites. `seeds` overrides `[validate] seeds`.
pub fn run_validate(
    cfg: &RunConfig,
    seeds: Option<&str>,
    estimator: &dyn DecoyEstimator,
) -> CliResult<ValidationReport> {
    cfg.validate()?;
    let seeds = parse_seeds(seeds.unwrap_or(&cfg.validate.seeds))?;
    let consistency = cfg
        .validate
        .consistency
        .loss_db
        .iter()
        .map(|&l| run_consistency(cfg, l, &seeds))
        .collect::<CliResult<Vec<_>>>()?;
    let coverage = run_coverage(cfg, &seeds, estimator)?;
    let passed = coverage.passed && consistency.iter().all(|c| c.passed);
    Ok(ValidationReport {
        estimator: estimator.name().into(),
        seeds,
        consistency,
        coverage,
        passed,
    })
}

pub fn write_validation(report: &ValidationReport, dir: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("validation.json");
    std::fs::write(&path, report.to_json()).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hdqkd::finite_key::{BiasedEstimator, VacuumWeakDecoy};

    #[test]
    fn binomial_p_values() {
        assert_eq!(binomial_two_sided(5, 10, 0.5), 1.0);
        // P(X <= 0) for Bin(10, 0.5) is 2^-10.
        assert!((binomial_two_sided(0, 10, 0.5) - 2.0 / 1024.0).abs() < 1e-15);
        assert!((binomial_two_sided(10, 10, 0.5) - 2.0 / 1024.0).abs() < 1e-15);
        assert_eq!(binomial_two_sided(0, 10, 0.0), 1.0);
        assert_eq!(binomial_two_sided(1, 10, 0.0), 0.0);
        assert!((sigma_tail(5.0) - 5.733e-7).abs() < 1e-9);
    }

    #[test]
    fn allowed_failure_budget() {
        assert!((allowed_failures(0.01, 1000) - (10.0 + 3.0 * 9.9f64.sqrt())).abs() < 1e-12);
        assert_eq!(allowed_failures(0.0, 1000), 0.0);
    }

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.validate.consistency.loss_db = vec![8.0];
        cfg.validate.consistency.frames = 300_000;
        cfg.validate.coverage.frames = 300_000;
        cfg.validate.coverage.runs_per_seed = 2;
        cfg.validate.coverage.beta = 0.01;
        cfg
    }

    #[test]
    fn small_validation_passes() {
        let r = run_validate(&small(), Some("1-3"), &VacuumWeakDecoy).unwrap();
        assert!(r.passed, "{}", r.to_json());
        assert_eq!(r.coverage.runs, 6);
        assert_eq!(r.estimator, "vacuum-weak-decoy");
    }

    #[test]
    fn biased_estimator_fails_coverage() {
        let biased = BiasedEstimator {
            inner: VacuumWeakDecoy,
            s1_scale: 3.0,
            v1_scale: 1.0,
        };
        let r = run_validate(&small(), Some("1-3"), &biased).unwrap();
        assert!(!r.coverage.passed);
        assert!(r.coverage.s1_failures as f64 > r.coverage.allowed_failures);
        assert!(!r.passed);
    }

    #[test]
    fn empty_seed_list_is_error() {
        assert!(matches!(
            run_validate(&small(), Some(""), &VacuumWeakDecoy),
            Err(CliError::Config(_))
        ));
    }
}
