//! Independent oracles and analyticity certification: dense diagonalization,
//! numerical Cauchy loops, Cauchy–Riemann and conjugation checks, and the
//! finite-difference counterexample of a non-analytic ground energy.

use serde::Serialize;

use crate::error::{Result, SrgError};
use crate::exec;
use crate::fockgrid::FockBasis;
use crate::linalg::{herm_eigh, re, CVec, C64, I};
use crate::model::{assemble_h, ModelSpec};
use crate::rgloop::{EigenvectorReport, Pipeline, RGConfig, RGTrace};

/// Default normalized loop tolerance.
pub const LOOP_TOL: f64 = 1e-6;
/// Default conjugation-symmetry tolerance.
pub const CONJ_TOL: f64 = 1e-10;
/// Relative Cauchy–Riemann tolerance.
pub const CR_TOL: f64 = 1e-5;
/// Step of the Cauchy–Riemann differences.
pub const CR_STEP: f64 = 1e-4;

/// Smallest eigenvalue and its eigenvector of the truncated `H_g(s)` for real `s`.
pub fn direct_ground(spec: &ModelSpec, s: f64, g: f64, basis: &FockBasis) -> Result<(f64, CVec)> {
    let h = assemble_h(&spec.with_g(g), re(s), basis)?;
    let (vals, vecs) = herm_eigh(&h);
    Ok((vals[0], vecs.column(0).into_owned()))
}

/// Agreement of an RG run with the dense oracle.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub e_min: f64,
    pub z_infinity: C64,
    pub difference: f64,
    /// `1e-8 (1 + |E_min|)`
    pub tolerance: f64,
    /// `|⟨ψ_RG, ψ_oracle⟩| / (‖ψ_RG‖‖ψ_oracle‖)`, when an eigenvector was built.
    pub overlap: Option<f64>,
    pub pass: bool,
}

pub fn oracle_report(trace: &RGTrace, eigen: Option<&EigenvectorReport>, e_min: f64, v: &CVec) -> OracleReport {
    let difference = (trace.z_infinity - e_min).norm();
    let tolerance = 1e-8 * (1.0 + e_min.abs());
    let overlap = eigen.map(|e| e.overlap_with(v));
    let pass = difference <= tolerance && overlap.map_or(true, |o| o >= 1.0 - 1e-6);
    OracleReport { e_min, z_infinity: trace.z_infinity, difference, tolerance, overlap, pass }
}

/// Circle `|s − center| = radius` sampled at `points` equispaced angles.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ContourSpec {
    pub center: C64,
    pub radius: f64,
    pub points: usize,
}

impl ContourSpec {
    pub fn new(center: C64, radius: f64) -> ContourSpec {
        ContourSpec { center, radius, points: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || self.points < 3 {
            return Err(SrgError::InvalidParameter(format!(
                "contour needs radius > 0 and at least 3 points, got {} and {}",
                self.radius, self.points
            )));
        }
        Ok(())
    }

    /// `e^{iθ_j}` for `θ_j = 2πj/P`.
    fn direction(&self, j: usize) -> C64 {
        C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / self.points as f64)
    }

    pub fn nodes(&self) -> Vec<C64> {
        (0..self.points).map(|j| self.center + self.direction(j) * self.radius).collect()
    }

    /// Index of the node at `conj(s_j)` when the center is real.
    pub fn conjugate_index(&self, j: usize) -> Option<usize> {
        (self.center.im == 0.0).then_some((self.points - j) % self.points)
    }
}

/// Trapezoidal `∮ f(s) ds` from samples at [`ContourSpec::nodes`].
pub fn cauchy_integral(values: &[C64], contour: &ContourSpec) -> C64 {
    let dtheta = 2.0 * std::f64::consts::PI / contour.points as f64;
    values
        .iter()
        .enumerate()
        .map(|(j, f)| f * I * contour.direction(j) * contour.radius * dtheta)
        .sum()
}

/// `|∮ f ds|` normalized by the contour length times `max |f|`.
pub fn cauchy_loop(values: &[C64], contour: &ContourSpec) -> f64 {
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    cauchy_integral(values, contour).norm() / (2.0 * std::f64::consts::PI * contour.radius * scale)
}

/// Result of one contour point.
#[derive(Clone, Debug)]
struct PointRun {
    z_infinity: C64,
    phi0: CVec,
    psi: CVec,
}

fn run_point(spec: &ModelSpec, s: C64, basis: &FockBasis, cfg: &RGConfig, depth: usize) -> Result<PointRun> {
    let p = Pipeline::new(spec, s, basis, cfg.clone())?;
    let trace = p.run()?;
    let ev = p.eigenvector(&trace, depth)?;
    Ok(PointRun { z_infinity: trace.z_infinity, phi0: ev.phi0, psi: ev.psi })
}

fn z_at(spec: &ModelSpec, s: C64, basis: &FockBasis, cfg: &RGConfig) -> Result<C64> {
    Ok(Pipeline::new(spec, s, basis, cfg.clone())?.run()?.z_infinity)
}

#[derive(Clone, Debug, Serialize)]
pub struct LoopResult {
    pub name: String,
    pub magnitude: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointFailure {
    pub index: usize,
    pub s: C64,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchyRiemann {
    /// `∂z∞/∂(Re s)` and `−i ∂z∞/∂(Im s)` at the center.
    pub d_real: C64,
    pub d_imag: C64,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyticityReport {
    pub contour: ContourSpec,
    pub depth: usize,
    pub nodes: Vec<C64>,
    pub z_infinity: Vec<C64>,
    /// Indices of the tracked coordinates of `φ⁽⁰⁾` and of `ψ`.
    pub phi_coordinates: Vec<usize>,
    pub psi_coordinates: Vec<usize>,
    pub loops: Vec<LoopResult>,
    pub max_loop: f64,
    pub cauchy_riemann: Option<CauchyRiemann>,
    /// `max_j |z∞(s̄_j) − conj z∞(s_j)|`, for a real center.
    pub conjugation_defect: Option<f64>,
    pub failures: Vec<PointFailure>,
    pub pass: bool,
}

/// Indices of the `count` largest entries of `v`, ties broken by index.
fn leading_coordinates(v: &CVec, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].norm().partial_cmp(&v[a].norm()).unwrap().then(a.cmp(&b)));
    idx.truncate(count);
    idx.sort();
    idx
}

/// Cauchy loops of `z∞(s)` and of five fixed coordinates of `φ⁽⁰⁾(s)` and
/// `ψ(s)`, Cauchy–Riemann residuals at the center and conjugation symmetry.
pub fn analyticity_suite(
    spec: &ModelSpec,
    basis: &FockBasis,
    cfg: &RGConfig,
    contour: &ContourSpec,
    depth: usize,
) -> Result<AnalyticityReport> {
    contour.validate()?;
    let nodes = contour.nodes();
    let center = run_point(spec, contour.center, basis, cfg, depth)?;
    let runs = exec::map(&nodes, |&s| run_point(spec, s, basis, cfg, depth));
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (index, (s, r)) in nodes.iter().zip(runs).enumerate() {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => failures.push(PointFailure { index, s: *s, error: e.to_string() }),
        }
    }
    let phi_coordinates = leading_coordinates(&center.phi0, 5);
    let psi_coordinates = leading_coordinates(&center.psi, 5);
    let mut loops = Vec::new();
    let mut z_infinity = Vec::new();
    let mut conjugation_defect = None;
    if failures.is_empty() {
        z_infinity = ok.iter().map(|p| p.z_infinity).collect();
        let mut push = |name: String, vals: Vec<C64>| {
            let magnitude = cauchy_loop(&vals, contour);
            loops.push(LoopResult { name, magnitude, pass: magnitude <= LOOP_TOL });
        };
        push("z_infinity".into(), z_infinity.clone());
        for &k in &phi_coordinates {
            push(format!("phi0[{k}]"), ok.iter().map(|p| p.phi0[k]).collect());
        }
        for &k in &psi_coordinates {
            push(format!("psi[{k}]"), ok.iter().map(|p| p.psi[k]).collect());
        }
        if contour.center.im == 0.0 {
            conjugation_defect = Some(
                (0..nodes.len())
                    .filter_map(|j| contour.conjugate_index(j).map(|c| (z_infinity[c] - z_infinity[j].conj()).norm()))
                    .fold(0.0, f64::max),
            );
        }
    }
    let offsets = [re(CR_STEP), re(-CR_STEP), I * CR_STEP, -I * CR_STEP];
    let cr_vals = exec::map(&offsets, |&d| z_at(spec, contour.center + d, basis, cfg));
    let cauchy_riemann = match cr_vals.into_iter().collect::<Result<Vec<_>>>() {
        Ok(v) => {
            let d_real = (v[0] - v[1]) / (2.0 * CR_STEP);
            let d_imag = (v[2] - v[3]) / (2.0 * I * CR_STEP);
            let residual = (d_real - d_imag).norm();
            Some(CauchyRiemann { d_real, d_imag, residual, pass: residual <= CR_TOL * d_real.norm().max(1e-300) })
        }
        Err(e) => {
            failures.push(PointFailure { index: usize::MAX, s: contour.center, error: e.to_string() });
            None
        }
    };
    let max_loop = loops.iter().map(|l| l.magnitude).fold(0.0, f64::max);
    let pass = failures.is_empty()
        && loops.iter().all(|l| l.pass)
        && cauchy_riemann.as_ref().is_some_and(|c| c.pass)
        && conjugation_defect.map_or(true, |d| d <= CONJ_TOL);
    Ok(AnalyticityReport {
        contour: *contour,
        depth,
        nodes,
        z_infinity,
        phi_coordinates,
        psi_coordinates,
        loops,
        max_loop,
        cauchy_riemann,
        conjugation_defect,
        failures,
        pass,
    })
}

/// Finite-difference line for `(−d²/dx² + sV) ⊕ 0` with `V` the indicator of `[−1, 1]`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LineModel {
    /// Dirichlet walls at `±half_width`.
    pub half_width: f64,
    pub step: f64,
}

impl Default for LineModel {
    fn default() -> Self {
        LineModel { half_width: 40.0, step: 0.05 }
    }
}

impl LineModel {
    fn interior(&self) -> usize {
        (2.0 * self.half_width / self.step).round() as usize - 1
    }

    fn diagonal(&self, s: f64) -> Vec<f64> {
        let h2 = self.step * self.step;
        (0..self.interior())
            .map(|i| {
                let x = -self.half_width + (i + 1) as f64 * self.step;
                2.0 / h2 + if x.abs() <= 1.0 + 1e-12 { s } else { 0.0 }
            })
            .collect()
    }

    /// Number of eigenvalues of the tridiagonal block below `x` (Sturm count).
    fn count_below(diag: &[f64], off: f64, x: f64) -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for (i, a) in diag.iter().enumerate() {
            d = a - x - if i == 0 { 0.0 } else { off * off / d };
            if d == 0.0 {
                d = -f64::EPSILON * off.abs();
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Lowest eigenpair of the tridiagonal block: bisection on the Sturm
    /// count, then inverse iteration.
    pub fn lowest(&self, s: f64) -> (f64, Vec<f64>) {
        let diag = self.diagonal(s);
        let off = -1.0 / (self.step * self.step);
        let (mut lo, mut hi) = (
            diag.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 * off.abs(),
            diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0 * off.abs(),
        );
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if Self::count_below(&diag, off, mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        let shift = lambda - 1e-8 * (1.0 + lambda.abs());
        let n = diag.len();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        for _ in 0..4 {
            v = thomas(&diag, off, shift, &v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        }
        (lambda, v)
    }

    /// Ground energy and ground vector of the direct sum (last coordinate is the `⊕0` block).
    pub fn ground(&self, s: f64) -> (f64, f64, Vec<f64>) {
        let (lambda, v) = self.lowest(s);
        if lambda < 0.0 {
            let mut g = v;
            g.push(0.0);
            (lambda, lambda, g)
        } else {
            let mut g = vec![0.0; self.interior()];
            g.push(1.0);
            (0.0, lambda, g)
        }
    }
}

/// Solves `(T − σ) y = b` for the symmetric tridiagonal `T` with constant off-diagonal.
fn thomas(diag: &[f64], off: f64, sigma: f64, b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut m = diag[0] - sigma;
    c[0] = off / m;
    d[0] = b[0] / m;
    for i in 1..n {
        m = diag[i] - sigma - off * c[i - 1];
        c[i] = off / m;
        d[i] = (b[i] - off * d[i - 1]) / m;
    }
    let mut y = vec![0.0; n];
    y[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        y[i] = d[i] - c[i] * y[i + 1];
    }
    y
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleRow {
    pub s: f64,
    /// `inf σ(H(s))`
    pub e: f64,
    /// Lowest eigenvalue of the Schrödinger block alone.
    pub block_lowest: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OverlapWitness {
    pub s_minus: f64,
    pub s_plus: f64,
    pub overlap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleReport {
    pub line: LineModel,
    pub rows: Vec<CounterexampleRow>,
    /// Lowest eigenvalue of the free Dirichlet block: binding weaker than
    /// this cannot show up in `E(s)`.
    pub floor: f64,
    /// Ground-vector overlaps for every `±s` pair among the inputs.
    pub overlaps: Vec<OverlapWitness>,
    /// Secant slopes of `E` from `0` to the nearest resolved negative sample
    /// and to the nearest positive sample.
    pub left_slope: Option<f64>,
    pub right_slope: Option<f64>,
    /// `|left − right| > 10 × floor`
    pub slope_witness: bool,
}

/// `inf σ(H(s))` for each `s`, with overlap and slope witnesses of the
/// non-analyticity at `s = 0`.
pub fn counterexample_demo(s_values: &[f64]) -> Result<CounterexampleReport> {
    counterexample_on(LineModel::default(), s_values)
}

pub fn counterexample_on(line: LineModel, s_values: &[f64]) -> Result<CounterexampleReport> {
    if let Some(bad) = s_values.iter().find(|s| !s.is_finite()) {
        return Err(SrgError::InvalidParameter(format!("non-finite s = {bad}")));
    }
    let grounds = exec::map(s_values, |&s| line.ground(s));
    let rows: Vec<CounterexampleRow> = s_values
        .iter()
        .zip(&grounds)
        .map(|(&s, (e, b, _))| CounterexampleRow { s, e: *e, block_lowest: *b })
        .collect();
    let floor = line.lowest(0.0).0;
    let mut overlaps = Vec::new();
    for (i, &sp) in s_values.iter().enumerate() {
        if sp <= 0.0 {
            continue;
        }
        if let Some(j) = s_values.iter().position(|&sm| sm == -sp) {
            let ov: f64 = grounds[i].2.iter().zip(&grounds[j].2).map(|(a, b)| a * b).sum();
            overlaps.push(OverlapWitness { s_minus: -sp, s_plus: sp, overlap: ov.abs() });
        }
    }
    let left = rows
        .iter()
        .filter(|r| r.s < 0.0 && r.e < -floor)
        .max_by(|a, b| a.s.partial_cmp(&b.s).unwrap())
        .map(|r| r.e / r.s);
    let right = rows.iter().filter(|r| r.s > 0.0).min_by(|a, b| a.s.partial_cmp(&b.s).unwrap()).map(|r| r.e / r.s);
    let slope_witness = matches!((left, right), (Some(l), Some(r)) if (l - r).abs() > 10.0 * floor);
    Ok(CounterexampleReport { line, rows, floor, overlaps, left_slope: left, right_slope: right, slope_witness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockgrid::{build_fock, build_grid};
    use crate::linalg::c;
    use crate::model::atomic_projection;

    #[test]
    fn free_ground_is_atomic_level() {
        let basis = build_fock(&build_grid(0.25, 4, 2).unwrap(), 2).unwrap();
        let spec = ModelSpec::spin_boson(0.0, 0.1);
        let (e, v) = direct_ground(&spec, 0.1, 0.0, &basis).unwrap();
        let e_at = atomic_projection(&spec, re(0.1)).unwrap().e_at;
        assert!((e - e_at.re).abs() < 1e-14);
        // the vacuum entries of the ground vector carry all its weight
        let nf = basis.dim();
        let w: f64 = (0..spec.atom_dim).map(|a| v[a * nf].norm_sqr()).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupling_lowers_ground() {
        let basis = build_fock(&build_grid(0.25, 4, 2).unwrap(), 2).unwrap();
        let spec = ModelSpec::spin_boson(0.01, 0.1);
        let e_at = atomic_projection(&spec, re(0.1)).unwrap().e_at.re;
        let (e, v) = direct_ground(&spec, 0.1, 0.01, &basis).unwrap();
        assert!(e < e_at);
        let at = atomic_projection(&spec, re(0.1)).unwrap();
        let nf = basis.dim();
        let ov: C64 = (0..spec.atom_dim).map(|a| at.right[a].conj() * v[a * nf]).sum();
        assert!(ov.norm() / at.right.norm() > 0.99);
    }

    #[test]
    fn polynomial_loop_vanishes() {
        let ct = ContourSpec::new(c(0.1, 0.0), 0.02);
        let vals: Vec<C64> = ct.nodes().iter().map(|s| s * s).collect();
        assert!(cauchy_loop(&vals, &ct) <= 1e-12);
    }

    #[test]
    fn conjugate_loop_is_twice_the_area() {
        let ct = ContourSpec::new(c(0.3, -0.2), 0.5);
        let vals: Vec<C64> = ct.nodes().iter().map(|s| s.conj()).collect();
        let area = std::f64::consts::PI * 0.25;
        assert!((cauchy_integral(&vals, &ct).norm() - 2.0 * area).abs() < 1e-12);
    }

    #[test]
    fn conjugate_nodes_pair_up() {
        let ct = ContourSpec::new(re(0.1), 0.02);
        let nodes = ct.nodes();
        for j in 0..ct.points {
            let k = ct.conjugate_index(j).unwrap();
            assert!((nodes[k] - nodes[j].conj()).norm() < 1e-15);
        }
        assert!(ContourSpec::new(c(0.1, 0.1), 0.02).conjugate_index(3).is_none());
    }

    #[test]
    fn free_model_energy_loop() {
        let basis = build_fock(&build_grid(0.25, 4, 2).unwrap(), 2).unwrap();
        let spec = ModelSpec::spin_boson(0.0, 0.1);
        let ct = ContourSpec::new(re(0.1), 0.02);
        let rep = analyticity_suite(&spec, &basis, &RGConfig::new(0.25, 2), &ct, 2).unwrap();
        assert!(rep.failures.is_empty());
        assert!(rep.loops[0].magnitude <= 1e-10, "{:?}", rep.loops[0]);
        for (s, z) in rep.nodes.iter().zip(&rep.z_infinity) {
            let e = atomic_projection(&spec, *s).unwrap().e_at;
            assert!((z - e).norm() < 1e-12);
        }
    }

    #[test]
    fn tridiagonal_solver_matches_dense() {
        let line = LineModel { half_width: 3.0, step: 0.25 };
        let (lambda, v) = line.lowest(-0.7);
        let n = line.interior();
        let diag = line.diagonal(-0.7);
        let off = -16.0;
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = diag[i];
            if i + 1 < n {
                dense[(i, i + 1)] = off;
                dense[(i + 1, i)] = off;
            }
        }
        let eig = nalgebra::SymmetricEigen::new(dense);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((lambda - min).abs() < 1e-11);
        let k = eig.eigenvalues.iter().position(|&x| x == min).unwrap();
        let ov: f64 = eig.eigenvectors.column(k).iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((ov.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn counterexample_values() {
        let rep = counterexample_demo(&[-0.5, 0.5]).unwrap();
        assert!(rep.rows[1].e.abs() <= 1e-6);
        assert!(rep.rows[0].e <= -1e-3);
        assert!(rep.overlaps[0].overlap < 0.5);
        assert!(rep.slope_witness);
    }
}
