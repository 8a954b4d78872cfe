//! Report files. JSON reports share one envelope; CSV files have fixed,
//! versioned columns (see the README for the schemas).

use std::path::{Path, PathBuf};

use serde::Serialize;
use srg_core::kernels::Ledger;
use srg_core::rgloop::LevelRecord;
use srg_core::verify::CounterexampleRow;

use crate::{CliError, RunConfig};

/// Every JSON report embeds the resolved configuration and the ledger constants.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'a str,
    config: &'a RunConfig,
    ledger: Ledger,
    result: &'a T,
}

fn prepare(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    Ok(dir.join(name))
}

pub fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    schema: &str,
    cfg: &RunConfig,
    result: &T,
) -> Result<PathBuf, CliError> {
    let path = prepare(dir, name)?;
    let env = Envelope { schema, config: cfg, ledger: cfg.paper_ledger(), result };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Report(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf, CliError> {
    let path = prepare(dir, name)?;
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Report(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Report(e.to_string()))?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// One row of `levels.csv` (column set version 1).
#[derive(Clone, Debug, Serialize)]
pub struct LevelCsvRow {
    pub level: usize,
    pub z_re: f64,
    pub z_im: f64,
    pub e_zinf_re: f64,
    pub e_zinf_im: f64,
    pub newton_iterations: usize,
    pub converged: bool,
    pub method: String,
    pub in_ball: bool,
    pub u_violations: usize,
    pub w00_at_zero_re: f64,
    pub w00_at_zero_im: f64,
    pub beta_value: f64,
    pub gamma_proxy: f64,
    pub offdiag_norm: f64,
    pub diag_mismatch: f64,
    pub cutoff_number_mismatch: f64,
    pub resolvent_norm: f64,
    pub e_recursion_residual: Option<f64>,
    pub alpha_empirical: Option<f64>,
    pub leakage: f64,
    pub cond: f64,
}

impl From<&LevelRecord> for LevelCsvRow {
    fn from(l: &LevelRecord) -> Self {
        LevelCsvRow {
            level: l.level,
            z_re: l.z.re,
            z_im: l.z.im,
            e_zinf_re: l.e_at_zinf.re,
            e_zinf_im: l.e_at_zinf.im,
            newton_iterations: l.newton_iterations,
            converged: l.converged,
            method: l.method.clone(),
            in_ball: l.in_ball,
            u_violations: l.u_violations.len(),
            w00_at_zero_re: l.w00_at_zero.re,
            w00_at_zero_im: l.w00_at_zero.im,
            beta_value: l.beta_value,
            gamma_proxy: l.gamma_proxy,
            offdiag_norm: l.offdiag_norm,
            diag_mismatch: l.diag_mismatch,
            cutoff_number_mismatch: l.cutoff_number_mismatch,
            resolvent_norm: l.resolvent_norm,
            e_recursion_residual: l.e_recursion_residual,
            alpha_empirical: l.alpha_empirical,
            leakage: l.leakage,
            cond: l.cond,
        }
    }
}

/// One row of `table.csv` (column set version 1).
#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleCsvRow {
    pub s: f64,
    pub e: f64,
    pub block_lowest: f64,
}

impl From<&CounterexampleRow> for CounterexampleCsvRow {
    fn from(r: &CounterexampleRow) -> Self {
        CounterexampleCsvRow { s: r.s, e: r.e, block_lowest: r.block_lowest }
    }
}
