//! Command layer of the `srg` binary: configuration, pipeline orchestration
//! and report files.
//!
//! Exit codes: 0 pass, 1 scientific failure, 2 usage or configuration error.

pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;
use srg_core::fockgrid::FockBasis;
use srg_core::kernels::{parameter_ledger, LedgerMode};
use srg_core::model::{atomic_projection, calibrate_g, hypothesis_report, Calibration, ModelSpec};
use srg_core::rgloop::{gap_samples, Pipeline};
use srg_core::verify::{analyticity_suite, counterexample_demo, direct_ground, oracle_report};
use srg_core::wick::{bound_check, compare_with_direct};
use srg_core::SrgError;
use thiserror::Error;

pub use config::RunConfig;
use config::PolydiscMode;
use report::{write_csv, write_json, CounterexampleCsvRow, LevelCsvRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not write report: {0}")]
    Report(String),
    #[error(transparent)]
    Core(#[from] SrgError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_usage() => 1,
            _ => 2,
        }
    }
}

/// Result of a command that ran to completion.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub code: i32,
    pub files: Vec<PathBuf>,
    /// Human-readable lines for the terminal.
    pub messages: Vec<String>,
}

impl Outcome {
    fn new(pass: bool) -> Outcome {
        Outcome { code: if pass { 0 } else { 1 }, files: Vec::new(), messages: Vec::new() }
    }
}

/// Model at the working coupling: calibrated when `model.calibrate` is set.
fn resolved_spec(cfg: &RunConfig, basis: &FockBasis) -> Result<(ModelSpec, Option<Calibration>), CliError> {
    let spec = cfg.spec();
    if !cfg.model.calibrate || spec.g == 0.0 {
        return Ok((spec, None));
    }
    let samples = cfg.neighborhood().samples(&spec);
    let cal = calibrate_g(&spec, basis, &samples, &cfg.calibration_targets())?;
    Ok((spec.with_g(cal.g), Some(cal)))
}

fn real_s(cfg: &RunConfig) -> Result<f64, CliError> {
    let s = cfg.s();
    if s.im != 0.0 {
        return Err(CliError::Config(format!("this command needs a real deformation parameter, got s = {s}")));
    }
    Ok(s.re)
}

#[derive(Serialize)]
struct CheckResult<'a> {
    hypotheses: &'a srg_core::model::HypothesisReport,
    /// `None` in empirical mode: the constants are fitted by `run`.
    ledger_pass: Option<bool>,
    ledger_error: Option<String>,
}

/// Hypotheses 1–3 on the working grid. In paper-locked mode the closed-form
/// parameter ledger must pass as well; in empirical mode it is deferred to
/// the trace of `run`.
pub fn cmd_check(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let basis = cfg.basis()?;
    let spec = cfg.spec();
    let samples = cfg.neighborhood().samples(&spec);
    let hyp = hypothesis_report(&spec, &basis, &samples)?;
    let ledger_error = match cfg.polydisc.mode {
        PolydiscMode::PaperLocked => {
            let p = &cfg.polydisc;
            parameter_ledger(&cfg.polydisc_params(), p.alpha0, p.beta0, p.gamma0, cfg.rg.n_steps, LedgerMode::PaperLocked)
                .err()
                .map(|e| e.to_string())
        }
        PolydiscMode::Empirical => None,
    };
    let ledger_pass = (cfg.polydisc.mode == PolydiscMode::PaperLocked).then_some(ledger_error.is_none());
    let mut outcome = Outcome::new(hyp.pass && ledger_error.is_none());
    outcome.messages.extend(hyp.failures.iter().cloned());
    outcome.messages.extend(ledger_error.clone());
    let result = CheckResult { hypotheses: &hyp, ledger_pass, ledger_error };
    outcome.files.push(write_json(out, "hypotheses.json", "hypotheses/1", cfg, &result)?);
    Ok(outcome)
}

#[derive(Serialize)]
struct RunResult<'a> {
    g: f64,
    calibration_evaluations: Option<usize>,
    trace: &'a srg_core::rgloop::RGTrace,
    eigenvector: &'a srg_core::rgloop::EigenvectorReport,
    monotonicity: Option<srg_core::rgloop::MonotonicityReport>,
    gap: Option<srg_core::rgloop::GapReport>,
    hf_limit: srg_core::rgloop::HfLimitReport,
    oracle: Option<srg_core::verify::OracleReport>,
}

/// Full RG run with eigenvector, gap, `H_f`-limit and (for real `s`) oracle
/// comparison. Runs [`cmd_check`] first unless `force` is set.
pub fn cmd_run(cfg: &RunConfig, out: &Path, force: bool) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::new(true);
    if !force {
        let check = cmd_check(cfg, out)?;
        outcome.files.extend(check.files);
        if check.code != 0 {
            outcome.code = 1;
            outcome.messages.extend(check.messages);
            outcome.messages.push("check failed; rerun with --force to run anyway".into());
            return Ok(outcome);
        }
    }
    let basis = cfg.basis()?;
    let (spec, cal) = resolved_spec(cfg, &basis)?;
    let pipeline = Pipeline::new(&spec, cfg.s(), &basis, cfg.rg_config())?;
    let trace = pipeline.run()?;
    let eigen = pipeline.eigenvector(&trace, cfg.rg.n_steps)?;
    let real = pipeline.is_self_adjoint();
    let (monotonicity, gap) = if real {
        let xs = gap_samples(trace.z_infinity.re, cfg.rg.rho);
        (Some(pipeline.monotonicity_check(&trace)?), Some(pipeline.gap_check(&trace, &xs)?))
    } else {
        (None, None)
    };
    let oracle = if real && cfg.verify.oracle {
        let (e_min, v) = direct_ground(&spec, cfg.s().re, spec.g, &basis)?;
        Some(oracle_report(&trace, Some(&eigen), e_min, &v))
    } else {
        None
    };
    let hf_limit = pipeline.hf_limit_check(&trace);
    outcome.messages.push(format!("g = {:.6e}, z_infinity = {:.15e}", spec.g, trace.z_infinity));
    outcome.messages.push(format!("eigenvector residual = {:.3e}", eigen.full_residual));
    if let Some(o) = &oracle {
        outcome.messages.push(format!("oracle |z_inf - E_min| = {:.3e}", o.difference));
    }
    let rows: Vec<LevelCsvRow> = trace.levels.iter().map(LevelCsvRow::from).collect();
    let result = RunResult {
        g: spec.g,
        calibration_evaluations: cal.map(|c| c.evaluations),
        trace: &trace,
        eigenvector: &eigen,
        monotonicity,
        gap,
        hf_limit,
        oracle,
    };
    outcome.files.push(write_json(out, "trace.json", "trace/1", cfg, &result)?);
    outcome.files.push(write_csv(out, "levels.csv", &rows)?);
    Ok(outcome)
}

#[derive(Serialize)]
struct WickResult {
    g: f64,
    s: Complex64,
    z: Complex64,
    w00: Vec<Complex64>,
    r_grid: Vec<f64>,
    dropped_orders: Vec<(usize, usize)>,
    comparison: srg_core::wick::CompareReport,
    bounds: srg_core::wick::BoundReport,
}

/// Wick-expanded kernels against the direct `H⁽⁰⁾` and the bound chain.
pub fn cmd_wick(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let basis = cfg.basis()?;
    let (spec, _) = resolved_spec(cfg, &basis)?;
    let s = cfg.s();
    let z = atomic_projection(&spec, s)?.e_at + cfg.verify.wick_z_offset;
    let l_max = cfg.verify.wick_l_max;
    let kernels = srg_core::wick::assemble_w(&spec, s, z, l_max, &basis)?;
    let comparison = compare_with_direct(&spec, s, z, l_max, &basis)?;
    let samples = cfg.neighborhood().samples(&spec);
    let bounds = bound_check(&spec, &samples, l_max, &basis)?;
    let mut outcome = Outcome::new(comparison.pass && bounds.pass);
    outcome.messages.push(format!(
        "residual {:.3e}, ratio under g -> g/2 {:.3} (expected {})",
        comparison.residual, comparison.ratio, comparison.expected_ratio
    ));
    let result = WickResult {
        g: spec.g,
        s,
        z,
        w00: kernels.kernels.w00.clone(),
        r_grid: kernels.kernels.r_grid.clone(),
        dropped_orders: kernels.dropped_orders,
        comparison,
        bounds,
    };
    outcome.files.push(write_json(out, "wick.json", "wick/1", cfg, &result)?);
    Ok(outcome)
}

/// Cauchy loops, Cauchy–Riemann and conjugation checks around `s`.
pub fn cmd_analyticity(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let basis = cfg.basis()?;
    let (spec, _) = resolved_spec(cfg, &basis)?;
    let rep = analyticity_suite(&spec, &basis, &cfg.rg_config(), &cfg.contour(), cfg.rg.n_steps)?;
    let mut outcome = Outcome::new(rep.pass);
    outcome.messages.push(format!("largest normalized loop {:.3e}", rep.max_loop));
    for f in &rep.failures {
        outcome.messages.push(format!("contour point {} (s = {}) failed: {}", f.index, f.s, f.error));
    }
    outcome.files.push(write_json(out, "contour.json", "contour/1", cfg, &rep)?);
    Ok(outcome)
}

/// `inf σ((−d²/dx² + sV) ⊕ 0)` on the configured `s` values.
pub fn cmd_demo_counterexample(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let rep = counterexample_demo(&cfg.verify.counterexample_s)?;
    let jump = rep.overlaps.iter().any(|o| o.overlap < 0.5);
    let mut outcome = Outcome::new(rep.slope_witness && jump);
    for o in &rep.overlaps {
        outcome.messages.push(format!("overlap across 0 at s = ±{}: {:.3e}", o.s_plus, o.overlap));
    }
    let rows: Vec<CounterexampleCsvRow> = rep.rows.iter().map(CounterexampleCsvRow::from).collect();
    outcome.files.push(write_csv(out, "table.csv", &rows)?);
    Ok(outcome)
}

/// Dense diagonalization against the RG ground energy and eigenvector.
pub fn cmd_oracle(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let s = real_s(cfg)?;
    let basis = cfg.basis()?;
    let (spec, _) = resolved_spec(cfg, &basis)?;
    let pipeline = Pipeline::new(&spec, cfg.s(), &basis, cfg.rg_config())?;
    let trace = pipeline.run()?;
    let eigen = pipeline.eigenvector(&trace, cfg.rg.n_steps)?;
    let g = cfg.verify.oracle_g.unwrap_or(spec.g);
    let (e_min, v) = direct_ground(&spec, s, g, &basis)?;
    let rep = oracle_report(&trace, Some(&eigen), e_min, &v);
    let mut outcome = Outcome::new(rep.pass);
    outcome.messages.push(format!(
        "z_infinity = {:.15e}, E_min = {:.15e}, difference {:.3e}",
        rep.z_infinity.re, rep.e_min, rep.difference
    ));
    outcome.files.push(write_json(out, "oracle.json", "oracle/1", cfg, &rep)?);
    Ok(outcome)
}
