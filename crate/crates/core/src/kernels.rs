//! Kernel sequences `w = (w_{m,n})`, their weighted norms, the operator `H(w)`,
//! extraction of `w_{0,0}` from a matrix, polydisc diagnostics, and the
//! `(α_n, β_n, γ_n)` parameter ledger.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Result, SrgError};
use crate::feshbach::{check_pair, make_cutoffs, PairReport};
use crate::fockgrid::{FockBasis, Sector, RED_TOL};
use crate::linalg::{op_norm, CMat, C64, ZERO};

/// Highest supported `m + n`.
pub const KERNEL_ORDER_CAP: usize = 2;

/// Sampled kernels on a grid of the `H_f` variable `r`.
///
/// `wmn[(m,n)]` is laid out as `r`-index major, then the mode tuple
/// `(k₁,…,k_m, k̃₁,…,k̃_n)` read as a base-`M` number.
#[derive(Clone, Debug)]
pub struct KernelSequence {
    /// Ascending samples of `r ∈ [0,1]`.
    pub r_grid: Vec<f64>,
    pub w00: Vec<C64>,
    pub wmn: BTreeMap<(usize, usize), Vec<C64>>,
    /// Number of modes `M`.
    pub modes: usize,
    pub xi: f64,
    pub mu: f64,
}

impl KernelSequence {
    pub fn new(r_grid: Vec<f64>, w00: Vec<C64>, modes: usize, xi: f64, mu: f64) -> KernelSequence {
        assert_eq!(r_grid.len(), w00.len());
        KernelSequence { r_grid, w00, wmn: BTreeMap::new(), modes, xi, mu }
    }

    pub fn tuple_count(&self, m: usize, n: usize) -> usize {
        self.modes.pow((m + n) as u32)
    }

    /// Inserts `w_{m,n}`; `values` has `r_grid.len() · M^{m+n}` entries.
    pub fn insert(&mut self, m: usize, n: usize, values: Vec<C64>) -> Result<()> {
        if m + n > KERNEL_ORDER_CAP {
            return Err(SrgError::KernelOrder(m + n));
        }
        if m + n == 0 {
            return Err(SrgError::InvalidParameter("w_{0,0} is stored separately".into()));
        }
        let expect = self.r_grid.len() * self.tuple_count(m, n);
        if values.len() != expect {
            return Err(SrgError::InvalidParameter(format!(
                "w_{{{m},{n}}} needs {expect} samples, got {}",
                values.len()
            )));
        }
        self.wmn.insert((m, n), values);
        Ok(())
    }

    /// Value at sample `r_idx` for the flat tuple index `k`.
    pub fn at(&self, m: usize, n: usize, r_idx: usize, k: usize) -> C64 {
        self.wmn[&(m, n)][r_idx * self.tuple_count(m, n) + k]
    }

    /// `r ↦ w_{m,n}(r, K)` samples for one tuple.
    pub fn profile(&self, m: usize, n: usize, k: usize) -> Vec<C64> {
        (0..self.r_grid.len()).map(|i| self.at(m, n, i, k)).collect()
    }

    /// Slopes of the piecewise-linear interpolant of `w_{0,0}`.
    pub fn w00_derivative(&self) -> Vec<C64> {
        slopes(&self.r_grid, &self.w00)
    }

    /// Piecewise-linear `w_{0,0}(r)`.
    pub fn w00_at(&self, r: f64) -> Result<C64> {
        let (i, t) = locate(&self.r_grid, r)?;
        Ok(lerp(&self.w00, i, t))
    }
}

fn slopes(r: &[f64], w: &[C64]) -> Vec<C64> {
    r.windows(2)
        .zip(w.windows(2))
        .map(|(rr, ww)| (ww[1] - ww[0]) / (rr[1] - rr[0]))
        .collect()
}

/// C¹ norm `sup|w| + sup|w'|` of a piecewise-linear profile.
pub fn c1_norm(r: &[f64], w: &[C64]) -> f64 {
    let sup = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let dsup = slopes(r, w).iter().map(|z| z.norm()).fold(0.0, f64::max);
    sup + dsup
}

/// Segment index and fractional position of `x` on the ascending grid.
fn locate(r: &[f64], x: f64) -> Result<(usize, f64)> {
    let n = r.len();
    let tol = RED_TOL * (1.0 + x.abs());
    if n == 0 || x < r[0] - tol || x > r[n - 1] + tol {
        return Err(SrgError::RGridCoverage(x));
    }
    if n == 1 {
        return Ok((0, 0.0));
    }
    let i = match r.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
        Ok(i) => return Ok((i.min(n - 2), if i == n - 1 { 1.0 } else { 0.0 })),
        Err(i) => i.clamp(1, n - 1) - 1,
    };
    let t = ((x - r[i]) / (r[i + 1] - r[i])).clamp(0.0, 1.0);
    Ok((i, t))
}

fn lerp(w: &[C64], i: usize, t: f64) -> C64 {
    if t == 0.0 || w.len() == 1 {
        w[i]
    } else if t == 1.0 {
        w[i + 1]
    } else {
        w[i] * (1.0 - t) + w[i + 1] * t
    }
}

/// `‖w_{m,n}‖_μ`; for `(0,0)` the C¹ norm of `w_{0,0}`.
pub fn norm_mu(w: &KernelSequence, grid: &crate::fockgrid::ModeGrid, m: usize, n: usize) -> f64 {
    if m + n == 0 {
        return c1_norm(&w.r_grid, &w.w00);
    }
    if !w.wmn.contains_key(&(m, n)) {
        return 0.0;
    }
    let l = m + n;
    let count = w.tuple_count(m, n);
    let mut acc = 0.0;
    let mut digits = vec![0usize; l];
    for k in 0..count {
        let mut rem = k;
        for d in digits.iter_mut().rev() {
            *d = rem % w.modes;
            rem /= w.modes;
        }
        let mut factor = 1.0;
        for &d in &digits {
            let md = &grid.modes[d];
            factor *= md.weight / md.k.powf(2.0 + 2.0 * w.mu);
        }
        let c1 = c1_norm(&w.r_grid, &w.profile(m, n, k));
        acc += factor * c1 * c1;
    }
    acc.sqrt()
}

/// `‖w‖_{μ,ξ} = Σ ξ^{-(m+n)} ‖w_{m,n}‖_μ`.
pub fn norm_mu_xi(w: &KernelSequence, grid: &crate::fockgrid::ModeGrid) -> f64 {
    let mut total = norm_mu(w, grid, 0, 0);
    for &(m, n) in w.wmn.keys() {
        total += w.xi.powi(-((m + n) as i32)) * norm_mu(w, grid, m, n);
    }
    total
}

/// `‖w − w_{0,0}‖_{μ,ξ}`.
pub fn norm_offdiag(w: &KernelSequence, grid: &crate::fockgrid::ModeGrid) -> f64 {
    w.wmn
        .keys()
        .map(|&(m, n)| w.xi.powi(-((m + n) as i32)) * norm_mu(w, grid, m, n))
        .sum()
}

/// Applies ordered annihilators for the tuple digits; `None` if the state vanishes.
fn apply_annihilators(basis: &FockBasis, mut state: usize, modes: &[usize]) -> Option<(usize, f64)> {
    let mut amp = 1.0;
    for &m in modes {
        let (s, a) = basis.annihilate(state, m)?;
        state = s;
        amp *= a;
    }
    Some((state, amp))
}

fn apply_creators(basis: &FockBasis, mut state: usize, modes: &[usize]) -> Option<(usize, f64)> {
    let mut amp = 1.0;
    for &m in modes {
        let (s, a) = basis.create(state, m)?;
        state = s;
        amp *= a;
    }
    Some((state, amp))
}

fn tuples(modes: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..modes).map(move |m| {
                    let mut t = t.clone();
                    t.push(m);
                    t
                })
            })
            .collect();
    }
    out
}

fn tuple_index(modes: usize, digits: &[usize]) -> usize {
    digits.iter().fold(0, |acc, &d| acc * modes + d)
}

/// `H(w) = Σ P_red a*(k^{(m)}) w_{m,n}(H_f, K) a(k̃^{(n)}) P_red` on the sector.
pub fn op_from_kernels(w: &KernelSequence, basis: &FockBasis, sector: &Sector) -> Result<CMat> {
    if w.modes != basis.modes() {
        return Err(SrgError::InvalidParameter("kernel and basis mode counts differ".into()));
    }
    for &(m, n) in w.wmn.keys() {
        if m + n > KERNEL_ORDER_CAP {
            return Err(SrgError::KernelOrder(m + n));
        }
    }
    let d = sector.dim();
    let mut h = CMat::zeros(d, d);
    for (k, &hf) in sector.hf.iter().enumerate() {
        h[(k, k)] = w.w00_at(hf)?;
    }
    let sqrt_w: Vec<f64> = basis.grid.modes.iter().map(|m| m.weight.sqrt()).collect();
    for (&(m, n), _) in w.wmn.iter() {
        let ann = tuples(w.modes, n);
        let cre = tuples(w.modes, m);
        let stride = w.tuple_count(m, n);
        for (j, &gj) in sector.states.iter().enumerate() {
            for kt in &ann {
                let Some((mid, amp_a)) = apply_annihilators(basis, gj, kt) else { continue };
                let (ri, t) = locate(&w.r_grid, basis.hf[mid])?;
                let wa: f64 = kt.iter().map(|&x| sqrt_w[x]).product();
                for kc in &cre {
                    let Some((fin, amp_c)) = apply_creators(basis, mid, kc) else { continue };
                    let Some(i) = sector.local_index(fin) else { continue };
                    let idx = tuple_index(w.modes, kc) * w.modes.pow(n as u32) + tuple_index(w.modes, kt);
                    let vals = &w.wmn[&(m, n)];
                    let v0 = vals[ri * stride + idx];
                    let val = if t == 0.0 || w.r_grid.len() == 1 {
                        v0
                    } else {
                        v0 * (1.0 - t) + vals[(ri + 1) * stride + idx] * t
                    };
                    if val == ZERO {
                        continue;
                    }
                    let wc: f64 = kc.iter().map(|&x| sqrt_w[x]).product();
                    h[(i, j)] += val * (wa * wc * amp_a * amp_c);
                }
            }
        }
    }
    Ok(h)
}

/// `w_{0,0}` recovered from a matrix on a sector, and `ŵ_{0,0}(H_f)` on every
/// sector state.
#[derive(Clone, Debug, Serialize)]
pub struct DiagExtraction {
    /// `{0} ∪ {ρ^j}` over active shells, ascending.
    pub r_grid: Vec<f64>,
    pub w00: Vec<C64>,
    /// `ŵ_{0,0}(H_f)` on the sector states.
    pub t_diag: Vec<C64>,
    /// `‖H − ŵ_{0,0}(H_f)‖`, when requested.
    pub proxy: Option<f64>,
}

impl DiagExtraction {
    pub fn t_op(&self) -> CMat {
        crate::linalg::diag(&self.t_diag)
    }

    /// Largest `|Δw_{0,0}/Δr − 1|` over the grid segments.
    pub fn beta_value(&self) -> f64 {
        slopes(&self.r_grid, &self.w00)
            .iter()
            .map(|s| (s - C64::new(1.0, 0.0)).norm())
            .fold(0.0, f64::max)
    }
}

/// Reads `w_{0,0}(0)` off the vacuum and `w_{0,0}(ρ^j)` off each shell's
/// one-boson block: the angular mean of the diagonal minus the angular mean of
/// the same-shell off-diagonal entries removes the `w_{1,1}` contribution.
pub fn extract_w00(h: &CMat, basis: &FockBasis, sector: &Sector) -> Result<DiagExtraction> {
    let a = basis.grid.angular_nodes;
    if a < 2 {
        return Err(SrgError::TooFewAngularNodes(a));
    }
    let shells = sector.active_shells;
    let mut r_grid = vec![0.0];
    let mut w00 = vec![h[(0, 0)]];
    for j in (0..shells).rev() {
        let locals: Vec<usize> = (0..a)
            .map(|ang| {
                let mut occ = vec![0u8; basis.modes()];
                occ[basis.grid.mode_index(j, ang)] = 1;
                basis
                    .index_of(&occ)
                    .and_then(|g| sector.local_index(g))
                    .ok_or_else(|| SrgError::InsufficientShells(format!("shell {j} has no one-boson states")))
            })
            .collect::<Result<_>>()?;
        let mut diag = ZERO;
        let mut off = ZERO;
        for &p in &locals {
            diag += h[(p, p)];
            for &q in &locals {
                if p != q {
                    off += h[(p, q)];
                }
            }
        }
        let af = a as f64;
        r_grid.push(basis.grid.radii[j]);
        w00.push(diag / af - off / (af * (af - 1.0)));
    }
    let t_diag = sector
        .hf
        .iter()
        .map(|&x| {
            let (i, t) = locate(&r_grid, x)?;
            Ok(lerp(&w00, i, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagExtraction { r_grid, w00, t_diag, proxy: None })
}

/// [`extract_w00`] plus the off-diagonal proxy `‖H − ŵ_{0,0}(H_f)‖`.
pub fn extract_diag(h: &CMat, basis: &FockBasis, sector: &Sector) -> Result<DiagExtraction> {
    let mut ex = extract_w00(h, basis, sector)?;
    ex.proxy = Some(op_norm(&(h - ex.t_op())));
    Ok(ex)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PolydiscParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub xi: f64,
    pub mu: f64,
    pub c_chi: f64,
}

impl PolydiscParams {
    /// `ξ = √ρ / (4 C_χ)`.
    pub fn paper_xi(rho: f64, c_chi: f64) -> f64 {
        rho.sqrt() / (4.0 * c_chi)
    }

    pub fn paper_locked(alpha: f64, beta: f64, gamma: f64, rho: f64, mu: f64, c_chi: f64) -> PolydiscParams {
        PolydiscParams { alpha, beta, gamma, rho, xi: Self::paper_xi(rho, c_chi), mu, c_chi }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PolydiscReport {
    pub w00_at_zero: C64,
    /// `|w_{0,0}(0) − E|`
    pub alpha_value: f64,
    pub beta_value: f64,
    pub proxy: f64,
    /// `ξγ`: the proxy may not exceed this inside the polydisc.
    pub gamma_bound: f64,
    pub alpha_pass: bool,
    pub beta_pass: bool,
    pub gamma_pass: bool,
    pub pair: Option<PairReport>,
    pub pair_pass: bool,
    pub pass: bool,
}

pub fn polydisc_check(
    h: &CMat,
    expected_e: C64,
    p: &PolydiscParams,
    basis: &FockBasis,
    sector: &Sector,
) -> Result<PolydiscReport> {
    let ex = extract_diag(h, basis, sector)?;
    let proxy = ex.proxy.unwrap_or(f64::INFINITY);
    let alpha_value = (ex.w00[0] - expected_e).norm();
    let beta_value = ex.beta_value();
    let gamma_bound = p.xi * p.gamma;
    let cut = make_cutoffs(&sector.hf, p.rho)?;
    let pair = check_pair(h, &ex.t_op(), &cut).ok();
    let pair_pass = pair.as_ref().map_or(false, |r| r.pass);
    let alpha_pass = alpha_value <= p.alpha;
    let beta_pass = beta_value <= p.beta;
    let gamma_pass = proxy <= gamma_bound;
    Ok(PolydiscReport {
        w00_at_zero: ex.w00[0],
        alpha_value,
        beta_value,
        proxy,
        gamma_bound,
        alpha_pass,
        beta_pass,
        gamma_pass,
        pair,
        pair_pass,
        pass: alpha_pass && beta_pass && gamma_pass && pair_pass,
    })
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LedgerMode {
    /// `C_β = 3C_χ/2`, `C_γ = 128 C_χ²`, `ξ = √ρ/(4C_χ)`.
    PaperLocked,
    /// Constants fitted from a measured trace.
    Empirical { c_beta: f64, c_gamma: f64, xi: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Ledger {
    pub mode: LedgerMode,
    pub rho: f64,
    pub mu: f64,
    pub c_chi: f64,
    pub c_beta: f64,
    pub c_gamma: f64,
    pub xi: f64,
    /// `C_γ ρ^μ`
    pub contraction: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `ε = 1/2 − ρ/2 − α₁`
    pub epsilon: f64,
    /// `exp(Σ_k α_k / (2ρε²))`, the prefactor of `ρⁿ` in the `z_n` bound.
    pub z_constant: f64,
    pub verdicts: Vec<Verdict>,
    pub admissible: bool,
}

impl Ledger {
    /// `ρⁿ · z_constant`.
    pub fn z_bound(&self, n: usize) -> f64 {
        self.rho.powi(n as i32) * self.z_constant
    }
}

/// Sequences and admissibility verdicts without refusing on failures.
pub fn ledger_report(
    p: &PolydiscParams,
    alpha0: f64,
    beta0: f64,
    gamma0: f64,
    n_steps: usize,
    mode: LedgerMode,
) -> Ledger {
    let (c_beta, c_gamma, xi) = match mode {
        LedgerMode::PaperLocked => (1.5 * p.c_chi, 128.0 * p.c_chi * p.c_chi, PolydiscParams::paper_xi(p.rho, p.c_chi)),
        LedgerMode::Empirical { c_beta, c_gamma, xi } => (c_beta, c_gamma, xi),
    };
    let rho = p.rho;
    let q = c_gamma * rho.powf(p.mu);
    let mut alpha = vec![alpha0];
    let mut beta = vec![beta0];
    let mut gamma = vec![gamma0];
    for n in 1..=n_steps {
        let g_prev = gamma[n - 1];
        let inc = c_beta / rho * g_prev * g_prev;
        alpha.push(inc);
        beta.push(beta[n - 1] + inc);
        gamma.push(q * g_prev);
    }
    let alpha1 = c_beta / rho * gamma0 * gamma0;
    let tail = if q < 1.0 { alpha1 / (1.0 - q * q) } else { f64::INFINITY };
    let epsilon = 0.5 - 0.5 * rho - alpha1;
    let z_constant = if epsilon > 0.0 {
        ((alpha0 + tail) / (2.0 * rho * epsilon * epsilon)).exp()
    } else {
        f64::INFINITY
    };
    let limit = rho / (8.0 * p.c_chi);
    let eq4446 = if q < 1.0 { beta0 + (c_beta / rho) / (1.0 - q * q) * gamma0 * gamma0 } else { f64::INFINITY };
    let v = |name: &str, value: f64, bound: f64, pass: bool| Verdict { name: name.into(), value, bound, pass };
    let verdicts = vec![
        v("contraction C_gamma*rho^mu < 1", q, 1.0, q < 1.0),
        v("rho < 4/5", rho, 0.8, rho < 0.8),
        v("alpha0 < rho/2", alpha0, 0.5 * rho, alpha0 < 0.5 * rho),
        v("beta0 <= rho/(8 C_chi)", beta0, limit, beta0 <= limit),
        v("gamma0 <= rho/(8 C_chi)", gamma0, limit, gamma0 <= limit),
        v("beta0 + (C_beta/rho) gamma0^2 / (1 - (C_gamma rho^mu)^2) <= rho/(8 C_chi)", eq4446, limit, eq4446 <= limit),
        v("epsilon = 1/2 - rho/2 - alpha1 > 0", epsilon, 0.0, epsilon > 0.0),
    ];
    let admissible = verdicts.iter().all(|x| x.pass);
    Ledger {
        mode,
        rho,
        mu: p.mu,
        c_chi: p.c_chi,
        c_beta,
        c_gamma,
        xi,
        contraction: q,
        alpha,
        beta,
        gamma,
        epsilon,
        z_constant,
        verdicts,
        admissible,
    }
}

/// [`ledger_report`] that refuses with the first failed admissibility condition.
pub fn parameter_ledger(
    p: &PolydiscParams,
    alpha0: f64,
    beta0: f64,
    gamma0: f64,
    n_steps: usize,
    mode: LedgerMode,
) -> Result<Ledger> {
    let l = ledger_report(p, alpha0, beta0, gamma0, n_steps, mode);
    if let Some(bad) = l.verdicts.iter().find(|v| !v.pass) {
        return Err(SrgError::Ledger(format!("{} fails: value {:.4e}, bound {:.4e}", bad.name, bad.value, bad.bound)));
    }
    Ok(l)
}

/// One CSV row of a kernel dump.
#[derive(Clone, Debug, Serialize)]
pub struct KernelRow {
    pub m: usize,
    pub n: usize,
    pub r: f64,
    /// Mode indices joined by `;` (empty for `w_{0,0}`).
    pub modes: String,
    pub re: f64,
    pub im: f64,
}

pub fn kernel_rows(w: &KernelSequence) -> Vec<KernelRow> {
    let mut rows: Vec<KernelRow> = w
        .r_grid
        .iter()
        .zip(&w.w00)
        .map(|(&r, v)| KernelRow { m: 0, n: 0, r, modes: String::new(), re: v.re, im: v.im })
        .collect();
    for (&(m, n), vals) in &w.wmn {
        let tup = tuples(w.modes, m + n);
        let stride = w.tuple_count(m, n);
        for (ri, &r) in w.r_grid.iter().enumerate() {
            for (k, t) in tup.iter().enumerate() {
                let v = vals[ri * stride + k];
                let modes = t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
                rows.push(KernelRow { m, n, r, modes, re: v.re, im: v.im });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockgrid::{build_fock, build_grid, field_creation, hf_op};
    use crate::linalg::{c, max_abs, re, submatrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (FockBasis, Sector) {
        let b = build_fock(&build_grid(0.25, 4, 2).unwrap(), 2).unwrap();
        let s = Sector::reduced(&b, 4);
        (b, s)
    }

    #[test]
    fn linear_w00_gives_hf() {
        let (b, s) = setup();
        let w = KernelSequence::new(vec![0.0, 1.0], vec![ZERO, re(1.0)], b.modes(), 0.5, 0.5);
        let h = op_from_kernels(&w, &b, &s).unwrap();
        let hf = submatrix(&hf_op(&b), &s.states, &s.states);
        assert!(max_abs(&(h - hf)) < 1e-15);
        assert!((norm_mu(&w, &b.grid, 0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_sequence_is_zero() {
        let (b, s) = setup();
        let w = KernelSequence::new(vec![0.0, 1.0], vec![ZERO; 2], b.modes(), 0.5, 0.5);
        assert_eq!(max_abs(&op_from_kernels(&w, &b, &s).unwrap()), 0.0);
    }

    #[test]
    fn coverage_and_order_are_enforced() {
        let (b, s) = setup();
        let w = KernelSequence::new(vec![0.0, 0.5], vec![ZERO; 2], b.modes(), 0.5, 0.5);
        assert!(matches!(op_from_kernels(&w, &b, &s), Err(SrgError::RGridCoverage(_))));
        let mut w = KernelSequence::new(vec![0.0, 1.0], vec![ZERO; 2], b.modes(), 0.5, 0.5);
        assert!(matches!(w.insert(2, 1, vec![]), Err(SrgError::KernelOrder(3))));
    }

    #[test]
    fn constant_annihilation_kernel() {
        let (b, s) = setup();
        let cst = c(0.3, -0.1);
        let mut w = KernelSequence::new(vec![0.0, 1.0], vec![ZERO; 2], b.modes(), 0.5, 0.5);
        w.insert(0, 1, vec![cst; 2 * b.modes()]).unwrap();
        let h = op_from_kernels(&w, &b, &s).unwrap();
        // c · P_red a(1-smeared) P_red
        let ones: Vec<CMat> = (0..b.modes()).map(|_| CMat::from_element(1, 1, cst.conj())).collect();
        let a = field_creation(&b, &ones).unwrap().adjoint();
        let expect = submatrix(&a, &s.states, &s.states);
        assert!(max_abs(&(&h - expect)) < 1e-14);
        assert!(op_norm(&h) <= norm_mu(&w, &b.grid, 0, 1));
        assert!((norm_mu_xi(&w, &b.grid) - 2.0 * norm_mu(&w, &b.grid, 0, 1)).abs() < 1e-12);
    }

    #[test]
    fn extraction_of_shifted_hf() {
        let (b, s) = setup();
        let c0 = c(-0.07, 0.02);
        let h = submatrix(&hf_op(&b), &s.states, &s.states) + CMat::identity(s.dim(), s.dim()) * c0;
        let ex = extract_diag(&h, &b, &s).unwrap();
        for (r, w) in ex.r_grid.iter().zip(&ex.w00) {
            assert!((w - (c0 + re(*r))).norm() < 1e-15);
        }
        assert!(ex.proxy.unwrap() < 1e-15);
    }

    #[test]
    fn extraction_ignores_linear_coupling() {
        let (b, s) = setup();
        let vals: Vec<CMat> = (0..b.modes()).map(|k| CMat::from_element(1, 1, re(0.1 + 0.01 * k as f64))).collect();
        let phi = crate::fockgrid::smeared_field(&b, &vals).unwrap();
        let h = submatrix(&(hf_op(&b) + phi), &s.states, &s.states);
        let ex = extract_diag(&h, &b, &s).unwrap();
        for (r, w) in ex.r_grid.iter().zip(&ex.w00) {
            assert!((w - re(*r)).norm() < 1e-15);
        }
        assert!(ex.proxy.unwrap() > 0.01);
    }

    #[test]
    fn extraction_needs_two_angular_nodes() {
        let b = build_fock(&build_grid(0.25, 3, 1).unwrap(), 2).unwrap();
        let s = Sector::reduced(&b, 3);
        let h = CMat::zeros(s.dim(), s.dim());
        assert!(matches!(extract_diag(&h, &b, &s), Err(SrgError::TooFewAngularNodes(1))));
    }

    #[test]
    fn hf_is_in_every_polydisc() {
        let (b, s) = setup();
        let h = submatrix(&hf_op(&b), &s.states, &s.states);
        let p = PolydiscParams { alpha: 1e-9, beta: 1e-9, gamma: 1e-9, rho: 0.25, xi: 0.125, mu: 0.5, c_chi: 1.0 };
        let rep = polydisc_check(&h, ZERO, &p, &b, &s).unwrap();
        assert!(rep.pass, "{rep:?}");
        let rep = polydisc_check(&(h * re(0.9)), ZERO, &PolydiscParams { beta: 0.05, ..p }, &b, &s).unwrap();
        assert!(!rep.beta_pass);
        assert!((rep.beta_value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn paper_locked_constants() {
        let p = PolydiscParams::paper_locked(0.1, 1e-3, 1e-3, 0.25, 0.5, 1.0);
        assert!((p.xi - 0.125).abs() < 1e-15);
        let l = ledger_report(&p, 0.1, 1e-3, 1e-3, 3, LedgerMode::PaperLocked);
        assert_eq!((l.c_beta, l.c_gamma), (1.5, 128.0));
        assert!((l.contraction - 64.0).abs() < 1e-12);
        let err = parameter_ledger(&p, 0.1, 1e-3, 1e-3, 3, LedgerMode::PaperLocked).unwrap_err();
        assert!(err.to_string().contains("contraction"));
    }

    #[test]
    fn empirical_ledger_sequences() {
        let p = PolydiscParams::paper_locked(0.01, 0.01, 0.01, 0.25, 0.5, 1.0);
        let mode = LedgerMode::Empirical { c_beta: 0.5, c_gamma: 0.6, xi: 0.125 };
        let l = parameter_ledger(&p, 0.01, 0.01, 0.01, 4, mode).unwrap();
        assert!((l.contraction - 0.3).abs() < 1e-12);
        assert!((l.gamma[2] - 0.01 * 0.09).abs() < 1e-15);
        assert!((l.alpha[1] - 0.5 / 0.25 * 1e-4).abs() < 1e-15);
        assert!((l.beta[2] - (0.01 + 2e-4 + 2.0 * 9e-6)).abs() < 1e-15);
        assert!(l.z_constant > 1.0 && l.z_constant.is_finite());
    }

    fn random_sequence(rng: &mut ChaCha8Rng, b: &FockBasis, with_w00: bool) -> KernelSequence {
        let r: Vec<f64> = vec![0.0, 0.25, 0.5, 1.0];
        let w00 = if with_w00 {
            r.iter().map(|x| c(rng.gen_range(-0.2..0.2) + x, rng.gen_range(-0.1..0.1))).collect()
        } else {
            vec![ZERO; 4]
        };
        let mut w = KernelSequence::new(r, w00, b.modes(), rng.gen_range(0.1..0.9), 0.5);
        for (m, n) in [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2)] {
            if rng.gen_bool(0.7) {
                let cnt = 4 * w.tuple_count(m, n);
                let scale = rng.gen_range(0.0..0.3);
                let mut vals: Vec<C64> = (0..cnt).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale).collect();
                if m == 2 || n == 2 {
                    // symmetrize the two-argument block
                    let mm = b.modes();
                    let stride = mm * mm;
                    for ri in 0..4 {
                        for i in 0..mm {
                            for j in 0..i {
                                let a = ri * stride + i * mm + j;
                                let bb = ri * stride + j * mm + i;
                                let avg = (vals[a] + vals[bb]) * 0.5;
                                vals[a] = avg;
                                vals[bb] = avg;
                            }
                        }
                    }
                }
                w.insert(m, n, vals).unwrap();
            }
        }
        w
    }

    #[test]
    fn operator_bounded_by_kernel_norm() {
        let (b, s) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 0..50 {
            let w = random_sequence(&mut rng, &b, k % 2 == 0);
            let h = op_from_kernels(&w, &b, &s).unwrap();
            let nh = op_norm(&h);
            assert!(nh <= norm_mu_xi(&w, &b.grid) * (1.0 + 1e-12));
            if k % 2 == 1 {
                assert!(nh <= w.xi * norm_mu_xi(&w, &b.grid) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn round_trip_with_radial_w11() {
        let (b, s) = setup();
        let r = vec![0.0, 0.5, 1.0];
        let w00: Vec<C64> = r.iter().map(|x| c(0.05 + 1.1 * x, 0.01)).collect();
        let mut w = KernelSequence::new(r.clone(), w00.clone(), b.modes(), 0.5, 0.5);
        let m = b.modes();
        let mut vals = vec![ZERO; 3 * m * m];
        for ri in 0..3 {
            for i in 0..m {
                for j in 0..m {
                    let (ki, kj) = (b.grid.modes[i].k, b.grid.modes[j].k);
                    vals[ri * m * m + i * m + j] = re(0.2 * (ki * kj).sqrt() * (1.0 + r[ri]));
                }
            }
        }
        w.insert(1, 1, vals).unwrap();
        let h = op_from_kernels(&w, &b, &s).unwrap();
        let ex = extract_w00(&h, &b, &s).unwrap();
        for (x, v) in ex.r_grid.iter().zip(&ex.w00) {
            assert!((v - w.w00_at(*x).unwrap()).norm() < 1e-8);
        }
    }

    #[test]
    fn rows_cover_all_samples() {
        let (b, _) = setup();
        let mut w = KernelSequence::new(vec![0.0, 1.0], vec![ZERO; 2], b.modes(), 0.5, 0.5);
        w.insert(1, 0, vec![ZERO; 2 * b.modes()]).unwrap();
        assert_eq!(kernel_rows(&w).len(), 2 + 2 * b.modes());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn interpolation_reproduces_linear(a in -1.0f64..1.0, s in 0.5f64..1.5, x in 0.0f64..1.0) {
            let r = vec![0.0, 0.1, 0.4, 1.0];
            let w: Vec<C64> = r.iter().map(|t| re(a + s * t)).collect();
            let seq = KernelSequence::new(r, w, 1, 0.5, 0.5);
            prop_assert!((seq.w00_at(x).unwrap() - re(a + s * x)).norm() < 1e-14);
        }
    }
}
