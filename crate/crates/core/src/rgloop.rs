//! The renormalization map `R_ρ` on matrices, nested zero-finding for the
//! running vacuum energies `E⁽ⁿ⁾(z)`, the eigenvector product and the spectral
//! certificates built on a finished trace.

use serde::Serialize;

use crate::error::{Result, SrgError};
use crate::exec;
use crate::feshbach::{feshbach_checked, feshbach_map, make_cutoffs, FeshbachResult, PairReport};
use crate::fockgrid::{pullback, FockBasis, Sector};
use crate::kernels::{extract_w00, ledger_report, DiagExtraction, Ledger, LedgerMode, PolydiscParams};
use crate::linalg::{frobenius, herm_eigh, op_norm, overlap, re, vec_norm, CMat, CVec, C64};
use crate::model::{atomic_projection, initial_effective_with, AtomicData, InitialEffective, ModelSpec};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RGConfig {
    pub rho: f64,
    pub n_steps: usize,
    /// `U_n = {z : |E⁽ⁿ⁻¹⁾(z)| ≤ u_threshold}`.
    pub u_threshold: f64,
    /// Newton stops once `|E⁽ⁿ⁾(z)| ≤ zero_tol`.
    pub zero_tol: f64,
    pub newton_max: usize,
    /// Largest tolerated norm of `F` on states that `Γ_ρ` cannot carry.
    pub leakage_tol: f64,
    pub polydisc: PolydiscParams,
}

impl RGConfig {
    pub fn new(rho: f64, n_steps: usize) -> RGConfig {
        RGConfig {
            rho,
            n_steps,
            u_threshold: rho / 2.0,
            zero_tol: 1e-12,
            newton_max: 60,
            leakage_tol: 1e-12,
            polydisc: PolydiscParams::paper_locked(0.05, 0.02, 0.02, rho, 0.5, 1.0),
        }
    }

    pub fn validate(&self, shells: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 0.8) {
            return Err(SrgError::InvalidParameter(format!("rho = {} must lie in (0, 4/5)", self.rho)));
        }
        if self.n_steps + 2 > shells {
            return Err(SrgError::InsufficientShells(format!(
                "{} RG steps need at least {} shells, the grid has {shells}",
                self.n_steps,
                self.n_steps + 2
            )));
        }
        if !(self.u_threshold > 0.0 && self.zero_tol > 0.0 && self.newton_max > 0) {
            return Err(SrgError::InvalidParameter("u_threshold, zero_tol and newton_max must be positive".into()));
        }
        Ok(())
    }
}

/// `⟨Ω|H|Ω⟩`; the vacuum is the first sector state.
pub fn e_of_z(h: &CMat) -> C64 {
    h[(0, 0)]
}

/// Output of one application of `R_ρ`.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub extraction: DiagExtraction,
    pub fesh: FeshbachResult,
    /// `ρ⁻¹ Γ_ρ F Γ_ρ*` on the coarse sector.
    pub next: CMat,
    /// Largest entry of `F` on cutoff-supported states outside the range of `Γ_ρ*`.
    pub leakage: f64,
}

/// Feshbach map of `(H, ŵ_{0,0}(H_f))` for the cutoff `χ_ρ` on `sector`.
pub fn feshbach_level(
    h: &CMat,
    basis: &FockBasis,
    sector: &Sector,
    rho: f64,
    check: bool,
) -> Result<(DiagExtraction, FeshbachResult)> {
    let ex = extract_w00(h, basis, sector)?;
    let cut = make_cutoffs(&sector.hf, rho)?;
    let t = ex.t_op();
    let fesh = if check { feshbach_checked(h, &t, &cut)? } else { feshbach_map(h, &t, &cut)? };
    Ok((ex, fesh))
}

fn rescale(fesh: &FeshbachResult, rho: f64, pull: &[usize], leakage_tol: f64) -> Result<(CMat, f64)> {
    let mut in_image = vec![false; fesh.dim];
    for &p in pull {
        in_image[p] = true;
    }
    let mut leakage: f64 = 0.0;
    for (a, &i) in fesh.c_idx.iter().enumerate() {
        if !in_image[i] {
            for b in 0..fesh.c_idx.len() {
                leakage = leakage.max(fesh.f_cc[(a, b)].norm()).max(fesh.f_cc[(b, a)].norm());
            }
        }
    }
    if leakage > leakage_tol {
        return Err(SrgError::InsufficientShells(format!(
            "F has weight {leakage:.3e} on states the dilation cannot carry"
        )));
    }
    Ok((fesh.f_submatrix(pull, pull) / re(rho), leakage))
}

/// `R_ρ(H) = ρ⁻¹ Γ_ρ F_{χ_ρ}(H, ŵ_{0,0}(H_f)) Γ_ρ*` from `fine` to `coarse`.
pub fn renorm_step(
    h: &CMat,
    basis: &FockBasis,
    fine: &Sector,
    coarse: &Sector,
    rho: f64,
    check: bool,
) -> Result<StepResult> {
    if (basis.grid.rho - rho).abs() > 1e-15 {
        return Err(SrgError::InvalidParameter("RG scale differs from the grid scale".into()));
    }
    let pull = pullback(basis, coarse, fine)?;
    let (extraction, fesh) = feshbach_level(h, basis, fine, rho, check)?;
    let (next, leakage) = rescale(&fesh, rho, &pull, 1e-12)?;
    Ok(StepResult { extraction, fesh, next, leakage })
}

/// Model, deformation parameter and grid bound together for repeated chain
/// evaluations.
#[derive(Clone, Debug)]
pub struct Pipeline<'a> {
    pub spec: ModelSpec,
    pub s: C64,
    pub basis: &'a FockBasis,
    pub cfg: RGConfig,
    pub atomic: AtomicData,
    /// `sectors[n]` carries `H⁽ⁿ⁾`.
    pub sectors: Vec<Sector>,
    pulls: Vec<Vec<usize>>,
}

/// `H⁽⁰⁾[z], …, H⁽ⁿ⁾[z]` and the Feshbach data used along the way.
#[derive(Clone, Debug)]
pub struct Chain {
    pub z: C64,
    pub initial: InitialEffective,
    pub h: Vec<CMat>,
    /// Feshbach data at each level that was mapped.
    pub fesh: Vec<FeshbachResult>,
    pub extractions: Vec<DiagExtraction>,
    pub leakage: Vec<f64>,
}

impl Chain {
    pub fn energies(&self) -> Vec<C64> {
        self.h.iter().map(e_of_z).collect()
    }
}

/// Zero of `E⁽ⁿ⁾` with its search history.
#[derive(Clone, Debug, Serialize)]
pub struct ZeroResult {
    pub level: usize,
    pub z: C64,
    pub e: C64,
    pub iterations: usize,
    pub converged: bool,
    pub method: String,
    /// `(z, E⁽ⁿ⁾(z))` at every iterate.
    pub samples: Vec<(C64, C64)>,
}

impl<'a> Pipeline<'a> {
    pub fn new(spec: &ModelSpec, s: C64, basis: &'a FockBasis, cfg: RGConfig) -> Result<Pipeline<'a>> {
        spec.validate()?;
        let shells = basis.grid.shells;
        cfg.validate(shells)?;
        if (basis.grid.rho - cfg.rho).abs() > 1e-15 {
            return Err(SrgError::InvalidParameter(format!(
                "rg.rho = {} differs from grid.rho = {}",
                cfg.rho, basis.grid.rho
            )));
        }
        let atomic = atomic_projection(spec, s)?;
        let sectors: Vec<Sector> = (0..=cfg.n_steps).map(|n| Sector::reduced(basis, shells - n)).collect();
        let pulls = (0..cfg.n_steps)
            .map(|n| pullback(basis, &sectors[n + 1], &sectors[n]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Pipeline { spec: spec.clone(), s, basis, cfg, atomic, sectors, pulls })
    }

    pub fn e_at(&self) -> C64 {
        self.atomic.e_at
    }

    /// Real deformation parameter: the whole chain is self-adjoint on the real axis.
    pub fn is_self_adjoint(&self) -> bool {
        self.s.im == 0.0
    }

    /// Runs the chain to `H⁽ⁿ⁾[z]`; with `feshbach_at_end` also maps level `n`
    /// (needed for `Q_n`).
    pub fn chain(&self, z: C64, n: usize, feshbach_at_end: bool, check: bool) -> Result<Chain> {
        if n > self.cfg.n_steps {
            return Err(SrgError::InvalidParameter(format!("level {n} beyond n_steps = {}", self.cfg.n_steps)));
        }
        let initial = initial_effective_with(&self.spec, self.s, z, self.basis, check).map_err(|e| e.at_level(0))?;
        let mut h = vec![initial.h0.clone()];
        let mut fesh = Vec::new();
        let mut extractions = Vec::new();
        let mut leakage = Vec::new();
        let last = if feshbach_at_end { n + 1 } else { n };
        for k in 0..last {
            let (ex, f) = feshbach_level(&h[k], self.basis, &self.sectors[k], self.cfg.rho, check)
                .map_err(|e| e.at_level(k))?;
            if k < n {
                let (next, leak) =
                    rescale(&f, self.cfg.rho, &self.pulls[k], self.cfg.leakage_tol).map_err(|e| e.at_level(k))?;
                h.push(next);
                leakage.push(leak);
            }
            fesh.push(f);
            extractions.push(ex);
        }
        Ok(Chain { z, initial, h, fesh, extractions, leakage })
    }

    /// `E⁽ⁿ⁾(z)`.
    pub fn level_function(&self, n: usize, z: C64) -> Result<C64> {
        let ch = self.chain(z, n, false, false)?;
        Ok(e_of_z(&ch.h[n]))
    }

    /// Levels `k < n` at which `z ∉ U_{k+1}`, i.e. `|E⁽ᵏ⁾(z)| > u_threshold`.
    pub fn u_violations(&self, n: usize, z: C64) -> Result<Vec<usize>> {
        let ch = self.chain(z, n, false, false)?;
        Ok((0..n).filter(|&k| e_of_z(&ch.h[k]).norm() > self.cfg.u_threshold).collect())
    }

    fn derivative(&self, n: usize, z: C64) -> Result<C64> {
        central_difference(&|p| self.level_function(n, p), z, 1e-7 * self.cfg.rho)
    }

    fn solver(&self, n: usize) -> ZeroSolver {
        ZeroSolver {
            center: self.e_at(),
            radius: self.cfg.rho,
            real_axis: self.is_self_adjoint(),
            zero_tol: self.cfg.zero_tol,
            newton_max: self.cfg.newton_max,
            fd_step: 1e-7 * self.cfg.rho,
            bracket: 0.25 * self.cfg.rho.powi(n as i32 + 1),
        }
    }

    /// Zero of `E⁽ⁿ⁾` in `U_n`, starting from `z_start`.
    pub fn find_zero(&self, n: usize, z_start: C64) -> Result<ZeroResult> {
        let mut r = self.solver(n).solve(&|z| self.level_function(n, z), z_start)?;
        r.level = n;
        Ok(r)
    }

    /// Nested zero search `z₀, z₁, …, z_N` and the level diagnostics at `z_N`.
    pub fn run(&self) -> Result<RGTrace> {
        let n_steps = self.cfg.n_steps;
        let mut zeros: Vec<ZeroResult> = Vec::new();
        let mut z = self.e_at();
        for n in 0..=n_steps {
            let zr = self.find_zero(n, z).map_err(|e| e.at_level(n))?;
            z = zr.z;
            zeros.push(zr);
        }
        let z_inf = z;
        let chain = self.chain(z_inf, n_steps, true, true)?;
        let energies = chain.energies();
        let xi = self.cfg.polydisc.xi;

        let mut levels = Vec::new();
        let mut proxies = Vec::new();
        let mut resolvents = Vec::new();
        let mut splits = Vec::new();
        for n in 0..=n_steps {
            let t = chain.extractions[n].t_op();
            let d = &chain.h[n] - &t;
            let proxy = op_norm(&d);
            splits.push(self.split_mismatch(&d, n));
            let fesh = &chain.fesh[n];
            let mut r = fesh.binv.clone();
            for (a, &i) in fesh.s_idx.iter().enumerate() {
                for (b, &j) in fesh.s_idx.iter().enumerate() {
                    r[(a, b)] *= fesh.chibar[i] * fesh.chibar[j];
                }
            }
            proxies.push(proxy);
            resolvents.push(op_norm(&r));
        }
        let max_resolvent = resolvents.iter().cloned().fold(0.0, f64::max);
        let gammas: Vec<f64> = proxies.iter().map(|p| p / xi).collect();
        let ratios: Vec<f64> = gammas.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();
        let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
        let c_beta = xi * xi * max_resolvent;
        let c_gamma = max_ratio / self.cfg.rho.powf(self.cfg.polydisc.mu);

        for n in 0..=n_steps {
            let zr = &zeros[n];
            let (recursion, alpha) = if n == 0 {
                (None, None)
            } else {
                let res = (energies[n] - energies[n - 1] / self.cfg.rho).norm();
                (Some(res), Some(c_beta / self.cfg.rho * gammas[n - 1] * gammas[n - 1]))
            };
            let pair = chain.fesh[n].pair.clone();
            levels.push(LevelRecord {
                level: n,
                z: zr.z,
                e_at_zn: zr.e,
                newton_iterations: zr.iterations,
                converged: zr.converged,
                method: zr.method.clone(),
                in_ball: (zr.z - self.e_at()).norm() <= self.cfg.rho,
                u_violations: self.u_violations(n, zr.z).unwrap_or_else(|_| vec![n]),
                e_at_zinf: energies[n],
                w00_at_zero: chain.extractions[n].w00[0],
                beta_value: chain.extractions[n].beta_value(),
                gamma_proxy: proxies[n],
                offdiag_norm: splits[n].0,
                diag_mismatch: splits[n].1,
                cutoff_number_mismatch: splits[n].2,
                resolvent_norm: resolvents[n],
                e_recursion_residual: recursion,
                alpha_empirical: alpha,
                leakage: if n < n_steps { chain.leakage[n] } else { 0.0 },
                cond: chain.fesh[n].cond,
                pair,
                samples: zr.samples.clone(),
            });
        }

        let alpha0 = (energies[0] - (self.e_at() - z_inf)).norm();
        let beta0 = levels[0].beta_value;
        let mode = LedgerMode::Empirical { c_beta, c_gamma, xi };
        let ledger = ledger_report(&self.cfg.polydisc, alpha0, beta0, gammas[0], n_steps, mode);
        let z_error_bound = ledger.z_bound(n_steps);
        Ok(RGTrace {
            s: self.s,
            g: self.spec.g,
            e_at: self.e_at(),
            levels,
            z_infinity: z_inf,
            z_error_bound,
            empirical: EmpiricalConstants { xi, gammas, ratios, max_ratio, max_resolvent, c_beta, c_gamma },
            ledger,
            chain,
        })
    }

    /// `φ_{0,n} = Q₀ Γ* Q₁ Γ* ⋯ Γ* Q_n Ω` at `z∞` for every `n ≤ depth`.
    pub fn eigenvector(&self, trace: &RGTrace, depth: usize) -> Result<EigenvectorReport> {
        if depth > self.cfg.n_steps {
            return Err(SrgError::InvalidParameter(format!("depth {depth} beyond n_steps")));
        }
        let ch = &trace.chain;
        let partials: Vec<CVec> = (0..=depth).map(|l| self.product(ch, l)).collect();
        let phi0 = partials[depth].clone();
        let h0 = &ch.h[0];
        let phi_norm = vec_norm(&phi0);
        let h0_residual = vec_norm(&(h0 * &phi0)) / phi_norm;
        let psi = ch.initial.lift(&phi0);
        let h = crate::model::assemble_h(&self.spec, self.s, self.basis)?;
        let full = &h * &psi - &psi * trace.z_infinity;
        let full_residual = vec_norm(&full) / vec_norm(&psi);

        let emp = &trace.empirical;
        let xi = emp.xi;
        let rho = self.cfg.rho;
        let k = 8.0 / rho * xi / (1.0 - xi);
        let gamma_sum: f64 = emp.gammas.iter().sum();
        let tail_constant = k * (k * gamma_sum).exp();
        let increments: Vec<f64> = partials.windows(2).map(|w| vec_norm(&(&w[1] - &w[0]))).collect();
        let bounds: Vec<f64> = (1..=depth).map(|l| tail_constant * emp.gammas[l]).collect();
        let q = emp.ratios.last().copied().unwrap_or(0.0);
        let beyond: f64 = if q < 1.0 {
            let mut s: f64 = emp.gammas[depth + 1..].iter().sum();
            let last = *emp.gammas.last().unwrap();
            s += last * q / (1.0 - q);
            s
        } else {
            f64::INFINITY
        };
        Ok(EigenvectorReport {
            depth,
            phi_norm,
            h0_residual,
            full_residual,
            tail_constant,
            increments,
            increment_bounds: bounds,
            tail_bound: tail_constant * beyond,
            small_norm: phi_norm < 0.5,
            phi0,
            psi,
        })
    }

    /// (off-diagonal norm, largest diagonal entry, largest diagonal entry on
    /// `n_max`-boson states) of a level-`n` matrix.
    fn split_mismatch(&self, d: &CMat, n: usize) -> (f64, f64, f64) {
        let sec = &self.sectors[n];
        let mut off = d.clone();
        let mut diag: f64 = 0.0;
        let mut top: f64 = 0.0;
        for i in 0..sec.dim() {
            let v = d[(i, i)].norm();
            diag = diag.max(v);
            if self.basis.number[sec.states[i]] == self.basis.n_max {
                top = top.max(v);
            }
            off[(i, i)] = C64::new(0.0, 0.0);
        }
        (op_norm(&off), diag, top)
    }

    fn product(&self, ch: &Chain, depth: usize) -> CVec {
        let mut v = CVec::zeros(self.sectors[depth].dim());
        v[0] = re(1.0);
        for l in (0..=depth).rev() {
            let qv = ch.fesh[l].apply_q(&v);
            if l == 0 {
                return qv;
            }
            let mut up = CVec::zeros(self.sectors[l - 1].dim());
            for (a, &p) in self.pulls[l - 1].iter().enumerate() {
                up[p] = qv[a];
            }
            v = up;
        }
        unreachable!()
    }

    /// `∂ₓE⁽ⁿ⁾` at five real points of `U_{n+1}` around each `z_n`.
    pub fn monotonicity_check(&self, trace: &RGTrace) -> Result<MonotonicityReport> {
        if !self.is_self_adjoint() {
            return Err(SrgError::InvalidParameter("monotonicity needs a real deformation parameter".into()));
        }
        let mut levels = Vec::new();
        for rec in &trace.levels {
            let n = rec.level;
            let slope = self.derivative(n, rec.z)?.re.abs().max(f64::MIN_POSITIVE);
            let half = 0.5 * self.cfg.u_threshold / slope;
            let pts: Vec<f64> = [-0.8, -0.4, 0.0, 0.4, 0.8].iter().map(|t| rec.z.re + t * half).collect();
            let h = 1e-3 * half;
            let ders = exec::map(&pts, |&x| -> Result<f64> {
                let a = self.level_function(n, re(x + h))?;
                let b = self.level_function(n, re(x - h))?;
                Ok((a.re - b.re) / (2.0 * h))
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
            let all_negative = ders.iter().all(|d| *d < 0.0);
            levels.push(MonotoneLevel { level: n, points: pts, derivatives: ders, all_negative });
        }
        let pass = levels.iter().all(|l| l.all_negative);
        Ok(MonotonicityReport { levels, pass })
    }

    /// `σ_min(H⁽⁰⁾[x])` below `z∞` and the per-level lower bound
    /// `H⁽ⁿ⁾[x] ≥ E⁽ⁿ⁾(x) − ‖H⁽ⁿ⁾[x] − ŵ_{0,0}(H_f)‖`.
    pub fn gap_check(&self, trace: &RGTrace, xs: &[f64]) -> Result<GapReport> {
        if !self.is_self_adjoint() {
            return Err(SrgError::InvalidParameter("gap check needs a real deformation parameter".into()));
        }
        let points = exec::map(xs, |&x| -> Result<GapPoint> {
            let z = re(x);
            let init = initial_effective_with(&self.spec, self.s, z, self.basis, false)?;
            let (ev, _) = herm_eigh(&init.h0);
            let sigma_min = ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
            let mut bounds = Vec::new();
            if let Ok(ch) = self.chain(z, self.cfg.n_steps, false, false) {
                for (n, h) in ch.h.iter().enumerate() {
                    let Ok(ex) = extract_w00(h, self.basis, &self.sectors[n]) else { continue };
                    let (evn, _) = herm_eigh(h);
                    let lam = evn[0];
                    let e = e_of_z(h).re;
                    let bound = e - op_norm(&(h - ex.t_op()));
                    let slack = 1e-12 * (1.0 + e.abs());
                    bounds.push(LevelBound { level: n, lambda_min: lam, bound, holds: lam >= bound - slack });
                }
            }
            Ok(GapPoint { x, sigma_min, bounds })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let pass = points.iter().all(|p| p.sigma_min > 0.0 && p.bounds.iter().all(|b| b.holds));
        Ok(GapReport { z_infinity: trace.z_infinity.re, points, pass })
    }

    /// Frobenius fit `H⁽ⁿ⁾(z∞) ≈ λ_n H_f` per level.
    pub fn hf_limit_check(&self, trace: &RGTrace) -> HfLimitReport {
        let mut lambdas = Vec::new();
        let mut residuals = Vec::new();
        for (n, h) in trace.chain.h.iter().enumerate() {
            let hf = &self.sectors[n].hf;
            let denom: f64 = hf.iter().map(|x| x * x).sum();
            let num: C64 = hf.iter().enumerate().map(|(i, &x)| h[(i, i)] * x).sum();
            let lam = num / denom;
            let mut r = h.clone();
            for (i, &x) in hf.iter().enumerate() {
                r[(i, i)] -= lam * x;
            }
            lambdas.push(lam);
            residuals.push(frobenius(&r));
        }
        let differences: Vec<f64> = lambdas.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let k = residuals.len();
        let tail = &residuals[k.saturating_sub(3)..];
        let residuals_nonincreasing = tail.windows(2).all(|w| w[1] <= w[0]);
        let dk = differences.len();
        let dtail = &differences[dk.saturating_sub(3)..];
        let differences_decreasing = dtail.windows(2).all(|w| w[1] <= w[0]);
        HfLimitReport { lambdas, residuals, differences, residuals_nonincreasing, differences_decreasing }
    }
}

fn central_difference(f: &(dyn Fn(C64) -> Result<C64> + Sync), z: C64, h: f64) -> Result<C64> {
    let pts = [z + h, z - h];
    let mut vals = exec::map(&pts, |&p| f(p)).into_iter();
    let (a, b) = (vals.next().unwrap()?, vals.next().unwrap()?);
    Ok((a - b) / (2.0 * h))
}

/// Safeguarded Newton iteration for an analytic function on a closed disc,
/// with a bisection fallback on the real axis for decreasing functions.
#[derive(Clone, Copy, Debug)]
pub struct ZeroSolver {
    pub center: C64,
    pub radius: f64,
    /// Keep iterates real and allow the bisection fallback.
    pub real_axis: bool,
    pub zero_tol: f64,
    pub newton_max: usize,
    /// Central-difference step for the derivative.
    pub fd_step: f64,
    /// Initial half-width of the bisection bracket.
    pub bracket: f64,
}

impl ZeroSolver {
    fn clip(&self, z: C64) -> C64 {
        let d = z - self.center;
        let r = 0.999_999 * self.radius;
        let z = if d.norm() > r { self.center + d * (r / d.norm()) } else { z };
        if self.real_axis {
            re(z.re)
        } else {
            z
        }
    }

    pub fn solve(&self, f: &(dyn Fn(C64) -> Result<C64> + Sync), z_start: C64) -> Result<ZeroResult> {
        let mut z = self.clip(z_start);
        let mut e = f(z)?;
        let mut samples = vec![(z, e)];
        let mut iterations = 0;
        let mut polish = 0;
        while iterations < self.newton_max {
            if e.norm() <= self.zero_tol {
                polish += 1;
                if polish > 2 {
                    break;
                }
            }
            iterations += 1;
            let d = match central_difference(f, z, self.fd_step) {
                Ok(d) if d.norm() > 0.0 && d.is_finite() => d,
                _ => break,
            };
            let mut step = -e / d;
            let mut accepted = None;
            for _ in 0..40 {
                let cand = self.clip(z + step);
                if let Ok(ec) = f(cand) {
                    if ec.is_finite() && (ec.norm() < e.norm() || ec.norm() <= self.zero_tol) {
                        accepted = Some((cand, ec));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((zn, en)) = accepted else { break };
            let moved = (zn - z).norm();
            z = zn;
            e = en;
            samples.push((z, e));
            if moved <= 4.0 * f64::EPSILON * (1.0 + z.norm()) {
                break;
            }
        }
        let converged = e.norm() <= self.zero_tol;
        if !converged && self.real_axis {
            if let Ok(mut b) = self.bisect(f, z, &mut samples) {
                b.iterations += iterations;
                return Ok(b);
            }
        }
        Ok(ZeroResult { level: 0, z, e, iterations, converged, method: "newton".into(), samples })
    }

    /// Real-axis bisection for a decreasing function.
    fn bisect(
        &self,
        f: &(dyn Fn(C64) -> Result<C64> + Sync),
        x0: C64,
        samples: &mut Vec<(C64, C64)>,
    ) -> Result<ZeroResult> {
        let fr = |x: f64| f(re(x)).map(|v| v.re);
        let mut delta = self.bracket;
        let lo_lim = self.center.re - 0.999_999 * self.radius;
        let hi_lim = self.center.re + 0.999_999 * self.radius;
        let (mut a, mut b) = ((x0.re - delta).max(lo_lim), (x0.re + delta).min(hi_lim));
        let mut fa = fr(a)?;
        let mut fb = fr(b)?;
        let mut tries = 0;
        while fa < 0.0 || fb > 0.0 {
            tries += 1;
            if tries > 60 {
                return Err(SrgError::InvalidParameter("no sign change found for bisection".into()));
            }
            delta *= 2.0;
            if fa < 0.0 {
                a = (a - delta).max(lo_lim);
                fa = fr(a)?;
            }
            if fb > 0.0 {
                b = (b + delta).min(hi_lim);
                fb = fr(b)?;
            }
        }
        let mut iterations = 0;
        while iterations < 200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            iterations += 1;
            let fm = fr(m)?;
            samples.push((re(m), re(fm)));
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fm > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let x = 0.5 * (a + b);
        let e = f(re(x))?;
        Ok(ZeroResult {
            level: 0,
            z: re(x),
            e,
            iterations,
            converged: e.norm() <= self.zero_tol,
            method: "bisection".into(),
            samples: samples.clone(),
        })
    }
}

/// Ten points in `(z∞ − ρ/4, z∞ − 10⁻⁴]`.
pub fn gap_samples(z_inf: f64, rho: f64) -> Vec<f64> {
    let top = z_inf - 1e-4;
    let width = rho / 4.0 - 1e-4;
    (0..10).map(|k| top - width * k as f64 / 10.0).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub z: C64,
    /// `E⁽ⁿ⁾(z_n)`
    pub e_at_zn: C64,
    pub newton_iterations: usize,
    pub converged: bool,
    pub method: String,
    /// `|z_n − E_at| ≤ ρ`
    pub in_ball: bool,
    /// Levels `k < n` with `|E⁽ᵏ⁾(z_n)| > u_threshold`.
    pub u_violations: Vec<usize>,
    /// `E⁽ⁿ⁾(z∞)`
    pub e_at_zinf: C64,
    pub w00_at_zero: C64,
    pub beta_value: f64,
    /// `‖H⁽ⁿ⁾[z∞] − ŵ_{0,0}(H_f)‖`
    pub gamma_proxy: f64,
    /// Norm of the off-diagonal entries of `H⁽ⁿ⁾[z∞] − ŵ_{0,0}(H_f)`.
    pub offdiag_norm: f64,
    /// Largest diagonal entry of `H⁽ⁿ⁾[z∞] − ŵ_{0,0}(H_f)`.
    pub diag_mismatch: f64,
    /// Largest diagonal entry on states holding `n_max` bosons, which the
    /// number cutoff keeps from emitting.
    pub cutoff_number_mismatch: f64,
    /// `‖χ̄ H_χ̄⁻¹ χ̄‖` at level `n`.
    pub resolvent_norm: f64,
    /// `|E⁽ⁿ⁾(z∞) − E⁽ⁿ⁻¹⁾(z∞)/ρ|`
    pub e_recursion_residual: Option<f64>,
    /// `(C_β^emp/ρ) γ_{n−1}²`
    pub alpha_empirical: Option<f64>,
    pub leakage: f64,
    pub cond: f64,
    pub pair: Option<PairReport>,
    pub samples: Vec<(C64, C64)>,
}

/// Constants fitted from the measured trace.
#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalConstants {
    pub xi: f64,
    /// `γ_n = proxy_n / ξ`
    pub gammas: Vec<f64>,
    /// `γ_n / γ_{n−1}`
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub max_resolvent: f64,
    /// `ξ² · max_n ‖χ̄ H_χ̄⁻¹ χ̄‖`
    pub c_beta: f64,
    /// `max ratio / ρ^μ`
    pub c_gamma: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RGTrace {
    pub s: C64,
    pub g: f64,
    pub e_at: C64,
    pub levels: Vec<LevelRecord>,
    pub z_infinity: C64,
    /// `ρ^N exp(Σα_k/(2ρε²))` with the empirical ledger.
    pub z_error_bound: f64,
    pub empirical: EmpiricalConstants,
    pub ledger: Ledger,
    #[serde(skip)]
    pub chain: Chain,
}

impl RGTrace {
    pub fn zs(&self) -> Vec<C64> {
        self.levels.iter().map(|l| l.z).collect()
    }

    /// Least-squares slope of `log|z_n − z_N|` over `n = 1..N−1`.
    pub fn convergence_slope(&self) -> Option<f64> {
        let zs = self.zs();
        let last = *zs.last()?;
        let pts: Vec<(f64, f64)> = (1..zs.len().saturating_sub(1))
            .map(|n| (n as f64, (zs[n] - last).norm()))
            .filter(|(_, d)| *d > 0.0)
            .map(|(n, d)| (n, d.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / m, sy / m);
        let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        Some(num / den)
    }

    /// CSV rows `(level, re z, im z, re E, im E)` of all sampled iterates.
    pub fn sample_rows(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.levels
            .iter()
            .flat_map(|l| l.samples.iter().map(move |(z, e)| (l.level, z.re, z.im, e.re, e.im)))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenvectorReport {
    pub depth: usize,
    pub phi_norm: f64,
    /// `‖H⁽⁰⁾[z∞] φ⁽⁰⁾‖ / ‖φ⁽⁰⁾‖`
    pub h0_residual: f64,
    /// `‖(H_g(s) − z∞) ψ‖ / ‖ψ‖`
    pub full_residual: f64,
    /// `C = (8/ρ)(ξ/(1−ξ)) exp((8/ρ)(ξ/(1−ξ)) Σγ_n)`
    pub tail_constant: f64,
    /// `‖φ_{0,l} − φ_{0,l−1}‖` for `l = 1..depth`.
    pub increments: Vec<f64>,
    /// `C γ_l` for `l = 1..depth`.
    pub increment_bounds: Vec<f64>,
    /// `C Σ_{l>depth} γ_l`, geometric beyond the traced levels.
    pub tail_bound: f64,
    /// `‖φ⁽⁰⁾‖ < 1/2`
    pub small_norm: bool,
    #[serde(skip)]
    pub phi0: CVec,
    #[serde(skip)]
    pub psi: CVec,
}

impl EigenvectorReport {
    pub fn increments_within_bounds(&self) -> bool {
        self.increments.iter().zip(&self.increment_bounds).all(|(a, b)| a <= b)
    }

    pub fn overlap_with(&self, v: &CVec) -> f64 {
        overlap(&self.psi, v)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotoneLevel {
    pub level: usize,
    pub points: Vec<f64>,
    pub derivatives: Vec<f64>,
    pub all_negative: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    pub levels: Vec<MonotoneLevel>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelBound {
    pub level: usize,
    pub lambda_min: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapPoint {
    pub x: f64,
    pub sigma_min: f64,
    pub bounds: Vec<LevelBound>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub z_infinity: f64,
    pub points: Vec<GapPoint>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HfLimitReport {
    pub lambdas: Vec<C64>,
    pub residuals: Vec<f64>,
    /// `|λ_{n+1} − λ_n|`
    pub differences: Vec<f64>,
    /// Residuals over the last three levels do not increase.
    pub residuals_nonincreasing: bool,
    /// The last differences decrease.
    pub differences_decreasing: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockgrid::{build_fock, build_grid, hf_op};
    use crate::linalg::{c, max_abs, submatrix, ONE};
    use crate::model::assemble_h;

    fn basis(shells: usize) -> FockBasis {
        build_fock(&build_grid(0.25, shells, 2).unwrap(), 2).unwrap()
    }

    #[test]
    fn hf_is_a_fixed_point() {
        let b = basis(5);
        let fine = Sector::reduced(&b, 5);
        let coarse = Sector::reduced(&b, 4);
        let h = submatrix(&hf_op(&b), &fine.states, &fine.states);
        let out = renorm_step(&h, &b, &fine, &coarse, 0.25, true).unwrap();
        let expect = submatrix(&hf_op(&b), &coarse.states, &coarse.states);
        assert!(max_abs(&(out.next - expect)) < 1e-13);
        assert_eq!(out.leakage, 0.0);
    }

    #[test]
    fn constant_shift_is_rescaled() {
        let b = basis(5);
        let fine = Sector::reduced(&b, 5);
        let coarse = Sector::reduced(&b, 4);
        let cst = c(0.02, -0.01);
        let h = submatrix(&hf_op(&b), &fine.states, &fine.states) + CMat::identity(fine.dim(), fine.dim()) * cst;
        let out = renorm_step(&h, &b, &fine, &coarse, 0.25, true).unwrap();
        let expect =
            submatrix(&hf_op(&b), &coarse.states, &coarse.states) + CMat::identity(coarse.dim(), coarse.dim()) * (cst * 4.0);
        assert!(max_abs(&(out.next - expect)) < 1e-13);
    }

    #[test]
    fn e_of_z_reads_the_vacuum() {
        let b = basis(4);
        let s = Sector::reduced(&b, 4);
        let hf = submatrix(&hf_op(&b), &s.states, &s.states);
        assert_eq!(e_of_z(&hf), c(0.0, 0.0));
        let shifted = &hf + CMat::identity(s.dim(), s.dim()) * c(0.3, 0.1);
        assert_eq!(e_of_z(&shifted), c(0.3, 0.1));
    }

    #[test]
    fn too_many_steps_are_refused() {
        let b = basis(4);
        let spec = ModelSpec::spin_boson(0.0, 0.1);
        let err = Pipeline::new(&spec, re(0.1), &b, RGConfig::new(0.25, 3)).unwrap_err();
        assert!(matches!(err, SrgError::InsufficientShells(_)));
        assert!(err.to_string().contains("insufficient shells"));
    }

    #[test]
    fn solver_finds_linear_zero() {
        let solver = ZeroSolver {
            center: re(0.3),
            radius: 0.5,
            real_axis: false,
            zero_tol: 1e-14,
            newton_max: 20,
            fd_step: 1e-7,
            bracket: 0.1,
        };
        let r = solver.solve(&|z| Ok((z - 0.3) * 2.0), re(0.1)).unwrap();
        assert!(r.converged);
        assert!((r.z - re(0.3)).norm() < 1e-14);
    }

    #[test]
    fn solver_falls_back_to_bisection() {
        // zero derivative at the start defeats Newton
        let solver = ZeroSolver {
            center: re(0.0),
            radius: 1.0,
            real_axis: true,
            zero_tol: 1e-13,
            newton_max: 5,
            fd_step: 1e-7,
            bracket: 0.05,
        };
        let f = |z: C64| Ok(re(-(z.re - 0.2).powi(3)));
        let r = solver.solve(&f, re(0.2 + 0.3)).unwrap();
        assert!((r.z.re - 0.2).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn free_model_is_exactly_rescaled() {
        let b = basis(5);
        let spec = ModelSpec::spin_boson(0.0, 0.1);
        let p = Pipeline::new(&spec, re(0.1), &b, RGConfig::new(0.25, 3)).unwrap();
        let e_at = p.e_at();
        let z = e_at + c(0.01, 0.002);
        for n in 0..=3 {
            let e = p.level_function(n, z).unwrap();
            let expect = (e_at - z) * 4f64.powi(n as i32);
            assert!((e - expect).norm() < 1e-12 * (1.0 + expect.norm()));
        }
        let tr = p.run().unwrap();
        assert!((tr.z_infinity - e_at).norm() < 1e-14);
        let ev = p.eigenvector(&tr, 3).unwrap();
        assert!(ev.full_residual < 1e-13);
        assert!((ev.phi0[0] - ONE).norm() < 1e-14);
        let hfl = p.hf_limit_check(&tr);
        for (lam, res) in hfl.lambdas.iter().zip(&hfl.residuals) {
            assert!((lam - ONE).norm() < 1e-10 && *res < 1e-10);
        }
        let gap = p.gap_check(&tr, &gap_samples(tr.z_infinity.re, 0.25)).unwrap();
        for pt in &gap.points {
            assert!((pt.sigma_min - (e_at.re - pt.x)).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_run_matches_dense_ground_state() {
        let b = basis(5);
        let spec = ModelSpec::spin_boson(0.02, 0.1);
        let p = Pipeline::new(&spec, re(0.1), &b, RGConfig::new(0.25, 3)).unwrap();
        let tr = p.run().unwrap();
        let (vals, vecs) = herm_eigh(&assemble_h(&spec, re(0.1), &b).unwrap());
        assert!((tr.z_infinity.re - vals[0]).abs() < 1e-8, "{} vs {}", tr.z_infinity, vals[0]);
        assert_eq!(tr.z_infinity.im, 0.0);
        let ev = p.eigenvector(&tr, 3).unwrap();
        assert!(ev.full_residual < 1e-6);
        assert!(ev.overlap_with(&vecs.column(0).into_owned()) > 1.0 - 1e-6);
        for l in &tr.levels[1..] {
            assert!(l.e_recursion_residual.unwrap() <= l.alpha_empirical.unwrap());
        }
        assert!(p.monotonicity_check(&tr).unwrap().pass);
    }

    #[test]
    fn conjugate_parameter_gives_conjugate_energy() {
        let b = basis(5);
        let spec = ModelSpec::spin_boson(0.02, 0.1);
        let s = c(0.1, 0.02);
        let cfg = RGConfig::new(0.25, 3);
        let a = Pipeline::new(&spec, s, &b, cfg).unwrap().run().unwrap();
        let bb = Pipeline::new(&spec, s.conj(), &b, cfg).unwrap().run().unwrap();
        assert!((a.z_infinity - bb.z_infinity.conj()).norm() < 1e-10);
        let p = Pipeline::new(&spec, re(0.1), &b, cfg).unwrap();
        let z = p.e_at() + c(0.003, 0.004);
        for n in 0..=2 {
            let e1 = p.level_function(n, z).unwrap();
            let e2 = p.level_function(n, z.conj()).unwrap();
            assert!((e1 - e2.conj()).norm() < 1e-10 * (1.0 + e1.norm()));
        }
    }
}
