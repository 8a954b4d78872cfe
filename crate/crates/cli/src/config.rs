//! TOML run configuration with documented defaults for every key.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use srg_core::fockgrid::{build_fock, build_grid, FockBasis};
use srg_core::kernels::{ledger_report, Ledger, LedgerMode, PolydiscParams};
use srg_core::model::{CalibrationTargets, ModelSpec, Neighborhood};
use srg_core::rgloop::RGConfig;
use srg_core::verify::ContourSpec;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SpinBoson,
    DipoleToy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Coupling constant, or the upper end of the calibration search.
    pub g: f64,
    /// Real reference point `s₀` of the deformation parameter.
    pub s0: f64,
    /// Deformation parameter of the run; defaults to `s0`.
    pub s_re: Option<f64>,
    pub s_im: f64,
    /// Infrared exponent `μ`.
    pub mu: f64,
    /// Exponent `p` of the radial profile `|k|^p`.
    pub profile_power: f64,
    pub uv_cutoff: f64,
    /// Lower `g` by bisection until the polydisc check passes.
    pub calibrate: bool,
    /// Neighborhood of `(s₀, E_at(s₀))` used for hypothesis checks and calibration.
    pub s_radius: f64,
    pub z_radius: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::SpinBoson,
            g: 0.02,
            s0: 0.1,
            s_re: None,
            s_im: 0.0,
            mu: 0.5,
            profile_power: 0.5,
            uv_cutoff: 1.0,
            calibrate: true,
            s_radius: 0.02,
            z_radius: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub rho: f64,
    pub shells: usize,
    pub angular_nodes: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { rho: 0.25, shells: 8, angular_nodes: 2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FockSection {
    pub n_max: usize,
}

impl Default for FockSection {
    fn default() -> Self {
        FockSection { n_max: 2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RgSection {
    pub rho: f64,
    pub n_steps: usize,
    /// Defaults to `rho / 2`.
    pub u_threshold: Option<f64>,
    pub zero_tol: f64,
    pub newton_max: usize,
    pub leakage_tol: f64,
}

impl Default for RgSection {
    fn default() -> Self {
        RgSection { rho: 0.25, n_steps: 6, u_threshold: None, zero_tol: 1e-12, newton_max: 60, leakage_tol: 1e-12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolydiscMode {
    PaperLocked,
    Empirical,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolydiscSection {
    pub alpha0: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub c_chi: f64,
    pub mode: PolydiscMode,
}

impl Default for PolydiscSection {
    fn default() -> Self {
        PolydiscSection { alpha0: 0.05, beta0: 0.02, gamma0: 0.02, c_chi: 1.0, mode: PolydiscMode::Empirical }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub contour_radius: f64,
    pub contour_points: usize,
    /// Compare `run` against the dense oracle and store the overlap.
    pub oracle: bool,
    /// Coupling used by the oracle; defaults to the run's `g`.
    pub oracle_g: Option<f64>,
    pub wick_l_max: usize,
    /// `z = E_at(s) + wick_z_offset` for the Wick comparison.
    pub wick_z_offset: f64,
    pub counterexample_s: Vec<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            contour_radius: 0.02,
            contour_points: 16,
            oracle: true,
            oracle_g: None,
            wick_l_max: 2,
            wick_z_offset: -0.01,
            counterexample_s: vec![-0.5, -0.1, -0.05, -0.01, 0.0, 0.01, 0.05, 0.1, 0.5],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub fock: FockSection,
    pub rg: RgSection,
    pub polydisc: PolydiscSection,
    pub verify: VerifySection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Cross-section consistency: `rg.rho = grid.rho` and `n_steps + 2 ≤ shells`.
    pub fn validate(&self) -> Result<(), CliError> {
        if (self.rg.rho - self.grid.rho).abs() > 1e-15 {
            return Err(CliError::Config(format!("rg.rho = {} differs from grid.rho = {}", self.rg.rho, self.grid.rho)));
        }
        if self.rg.n_steps + 2 > self.grid.shells {
            return Err(CliError::Config(format!(
                "insufficient shells: {} RG steps need at least {} shells, grid.shells = {}",
                self.rg.n_steps,
                self.rg.n_steps + 2,
                self.grid.shells
            )));
        }
        if self.verify.contour_points < 3 || !(self.verify.contour_radius > 0.0) {
            return Err(CliError::Config("verify.contour_points ≥ 3 and verify.contour_radius > 0 required".into()));
        }
        Ok(())
    }

    pub fn spec_with_g(&self, g: f64) -> ModelSpec {
        let m = &self.model;
        let mut spec = match m.kind {
            ModelKind::SpinBoson => ModelSpec::spin_boson(g, m.s0),
            ModelKind::DipoleToy => ModelSpec::dipole_toy_default(g, m.s0),
        };
        spec.mu = m.mu;
        spec.profile_power = m.profile_power;
        spec.uv_cutoff = m.uv_cutoff;
        spec
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec_with_g(self.model.g)
    }

    pub fn s(&self) -> Complex64 {
        Complex64::new(self.model.s_re.unwrap_or(self.model.s0), self.model.s_im)
    }

    pub fn basis(&self) -> Result<FockBasis, CliError> {
        let grid = build_grid(self.grid.rho, self.grid.shells, self.grid.angular_nodes)?;
        Ok(build_fock(&grid, self.fock.n_max)?)
    }

    pub fn polydisc_params(&self) -> PolydiscParams {
        let p = &self.polydisc;
        PolydiscParams::paper_locked(p.alpha0, p.beta0, p.gamma0, self.grid.rho, self.model.mu, p.c_chi)
    }

    pub fn rg_config(&self) -> RGConfig {
        let r = &self.rg;
        let mut cfg = RGConfig::new(r.rho, r.n_steps);
        if let Some(u) = r.u_threshold {
            cfg.u_threshold = u;
        }
        cfg.zero_tol = r.zero_tol;
        cfg.newton_max = r.newton_max;
        cfg.leakage_tol = r.leakage_tol;
        cfg.polydisc = self.polydisc_params();
        cfg
    }

    pub fn neighborhood(&self) -> Neighborhood {
        Neighborhood { s_radius: self.model.s_radius, z_radius: self.model.z_radius }
    }

    pub fn calibration_targets(&self) -> CalibrationTargets {
        let p = self.polydisc_params();
        CalibrationTargets { alpha0: p.alpha, beta0: p.beta, gamma0: p.gamma, rho: p.rho, xi: p.xi, mu: p.mu }
    }

    pub fn contour(&self) -> ContourSpec {
        ContourSpec { center: self.s(), radius: self.verify.contour_radius, points: self.verify.contour_points }
    }

    /// Ledger with the closed-form constants and the configured targets.
    pub fn paper_ledger(&self) -> Ledger {
        let p = &self.polydisc;
        ledger_report(&self.polydisc_params(), p.alpha0, p.beta0, p.gamma0, self.rg.n_steps, LedgerMode::PaperLocked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg.grid.shells, 8);
        assert_eq!(cfg.rg.n_steps, 6);
        assert_eq!(cfg.model.kind, ModelKind::SpinBoson);
        assert_eq!(cfg.s(), Complex64::new(0.1, 0.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[grid]\nshelz = 3\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn shells_must_cover_steps() {
        let err = RunConfig::from_toml("[grid]\nshells = 5\n").unwrap_err();
        assert!(err.to_string().contains("insufficient shells"));
    }

    #[test]
    fn rho_must_agree() {
        assert!(RunConfig::from_toml("[rg]\nrho = 0.3\n").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }
}
