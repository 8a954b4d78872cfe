//! Smooth Feshbach–Schur map for cutoff pairs that are diagonal in the working
//! basis.
//!
//! Both cutoffs are diagonal, so `Ran χ̄` is a coordinate subspace and every
//! inverse on it is a plain block inverse padded by zero.

use serde::Serialize;

use crate::error::{Result, SrgError};
use crate::linalg::{
    diag_real, frobenius, inverse_cond, max_abs, null_vector, op_norm, op_norm_bounded,
    sigma_min, submatrix, CMat, CVec, COND_LIMIT, ZERO,
};

/// Relative bound on `‖[T, χ]‖` accepted as "commuting".
pub const COMMUTATOR_TOL: f64 = 1e-10;

/// Relative threshold below which a smallest singular value counts as zero.
pub const SINGULAR_TOL: f64 = 1e-8;

/// Smooth step `θ(x) = 3x² − 2x³` clamped to `[0,1]`.
fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * (3.0 - 2.0 * x)
    }
}

/// `(χ_ρ(t), χ̄_ρ(t))`: 1 and 0 below `3ρ/4`, 0 and 1 from `ρ` on.
pub fn chi_profile(t: f64, rho: f64) -> (f64, f64) {
    let x = (t - 0.75 * rho) / (0.25 * rho);
    if x <= 0.0 {
        return (1.0, 0.0);
    }
    if x >= 1.0 {
        return (0.0, 1.0);
    }
    let a = std::f64::consts::FRAC_PI_2 * smoothstep(x);
    (a.cos(), a.sin())
}

/// `(χ_ρ'(t), χ̄_ρ'(t))`.
pub fn chi_profile_derivative(t: f64, rho: f64) -> (f64, f64) {
    let x = (t - 0.75 * rho) / (0.25 * rho);
    if x <= 0.0 || x >= 1.0 {
        return (0.0, 0.0);
    }
    let a = std::f64::consts::FRAC_PI_2 * smoothstep(x);
    let da = std::f64::consts::FRAC_PI_2 * 6.0 * x * (1.0 - x) / (0.25 * rho);
    (-a.sin() * da, a.cos() * da)
}

/// `3π/ρ`: the sup of `(χ_ρ'² + χ̄_ρ'²)^{1/2}`, which bounds `‖χ_ρ'‖_∞` and `‖χ̄_ρ'‖_∞`.
pub fn chi_derivative_sup(rho: f64) -> f64 {
    3.0 * std::f64::consts::PI / rho
}

/// Diagonal cutoff pair sampled on the working basis.
#[derive(Clone, Debug, Serialize)]
pub struct CutoffPair {
    /// Transition scale; `None` for pairs that are not a function of `H_f`.
    pub rho: Option<f64>,
    pub chi: Vec<f64>,
    pub chibar: Vec<f64>,
    /// `χ̄ ≠ 0`
    pub support: Vec<bool>,
}

/// `χ_ρ(H_f)`, `χ̄_ρ(H_f)` evaluated on the given `H_f` eigenvalues.
pub fn make_cutoffs(hf: &[f64], rho: f64) -> Result<CutoffPair> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(SrgError::InvalidParameter(format!("cutoff scale {rho} must lie in (0,1]")));
    }
    let (chi, chibar): (Vec<f64>, Vec<f64>) = hf.iter().map(|&t| chi_profile(t, rho)).unzip();
    let mut pair = CutoffPair::new(chi, chibar)?;
    pair.rho = Some(rho);
    Ok(pair)
}

impl CutoffPair {
    /// Arbitrary diagonal pair; requires `χ² + χ̄² = 1` and entries in `[0,1]`.
    pub fn new(chi: Vec<f64>, chibar: Vec<f64>) -> Result<CutoffPair> {
        if chi.len() != chibar.len() {
            return Err(SrgError::InvalidParameter("χ and χ̄ differ in length".into()));
        }
        for (&a, &b) in chi.iter().zip(&chibar) {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || (a * a + b * b - 1.0).abs() > 1e-14 {
                return Err(SrgError::InvalidParameter(format!(
                    "({a}, {b}) is not a partition of unity"
                )));
            }
        }
        let support = chibar.iter().map(|&b| b != 0.0).collect();
        Ok(CutoffPair { rho: None, chi, chibar, support })
    }

    pub fn dim(&self) -> usize {
        self.chi.len()
    }

    pub fn chi_op(&self) -> CMat {
        diag_real(&self.chi)
    }

    pub fn chibar_op(&self) -> CMat {
        diag_real(&self.chibar)
    }

    /// Indices with `χ ≠ 0`.
    pub fn chi_support(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.chi[i] != 0.0).collect()
    }

    /// Indices with `χ̄ ≠ 0`.
    pub fn chibar_support(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.support[i]).collect()
    }
}

/// Norms entering the sufficient pair conditions.
#[derive(Clone, Debug, Serialize)]
pub struct PairReport {
    /// `‖[T, χ]‖`
    pub commutator_chi: f64,
    /// `‖[T, χ̄]‖`
    pub commutator_chibar: f64,
    /// Smallest singular value of `T` on `Ran χ̄`.
    pub t_sigma_min: f64,
    /// `‖T⁻¹χ̄Wχ̄‖`
    pub neumann_left: f64,
    /// `‖χ̄WT⁻¹χ̄‖`
    pub neumann_right: f64,
    /// `‖T⁻¹χ̄Wχ‖`
    pub cross: f64,
    /// False when a norm is the Frobenius upper bound rather than the exact value.
    pub norms_exact: bool,
    pub pass: bool,
    /// Name of the first violated condition.
    pub violation: Option<String>,
}

fn commutator_frobenius(t: &CMat, d: &[f64]) -> f64 {
    let n = t.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let x = t[(i, j)];
            if x != ZERO && d[j] != d[i] {
                acc += (x * (d[j] - d[i])).norm_sqr();
            }
        }
    }
    acc.sqrt()
}

fn commutator_op(t: &CMat, d: &[f64]) -> CMat {
    CMat::from_fn(t.nrows(), t.ncols(), |i, j| t[(i, j)] * (d[j] - d[i]))
}

fn is_diagonal(m: &CMat) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == ZERO))
}

fn scale_rows(m: &mut CMat, d: &[f64]) {
    for (i, &s) in d.iter().enumerate() {
        m.row_mut(i).scale_mut(s);
    }
}

fn scale_cols(m: &mut CMat, d: &[f64]) {
    for (j, &s) in d.iter().enumerate() {
        m.column_mut(j).scale_mut(s);
    }
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Verifies the sufficient conditions (a'), (b'), (c') for `(H, T)`.
///
/// Errors only when `T` fails to commute with the cutoffs, which is a caller bug.
pub fn check_pair(h: &CMat, t: &CMat, cut: &CutoffPair) -> Result<PairReport> {
    let n = cut.dim();
    if h.shape() != (n, n) || t.shape() != (n, n) {
        return Err(SrgError::InvalidParameter(format!(
            "H is {:?}, T is {:?}, cutoffs have dimension {n}",
            h.shape(),
            t.shape()
        )));
    }
    let t_scale = max_abs(t);
    let mut commutators = [0.0; 2];
    for (slot, d) in [&cut.chi, &cut.chibar].into_iter().enumerate() {
        let f = commutator_frobenius(t, d);
        commutators[slot] = f;
        if f > COMMUTATOR_TOL * t_scale {
            let exact = op_norm(&commutator_op(t, d));
            let bound = COMMUTATOR_TOL * op_norm(t);
            if exact > bound {
                return Err(SrgError::NotChiCommuting { commutator: exact, bound });
            }
            commutators[slot] = exact;
        }
    }

    let s = cut.chibar_support();
    let c = cut.chi_support();
    let t_ss = submatrix(t, &s, &s);
    let t_sigma_min = if s.is_empty() {
        f64::INFINITY
    } else if is_diagonal(&t_ss) {
        t_ss.diagonal().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min)
    } else {
        sigma_min(&t_ss)
    };

    let mut report = PairReport {
        commutator_chi: commutators[0],
        commutator_chibar: commutators[1],
        t_sigma_min,
        neumann_left: 0.0,
        neumann_right: 0.0,
        cross: 0.0,
        norms_exact: true,
        pass: false,
        violation: None,
    };
    let t_norm = op_norm_or_diag(t);
    if s.is_empty() {
        report.pass = true;
        return Ok(report);
    }
    if !(t_sigma_min > SINGULAR_TOL * t_norm.max(f64::MIN_POSITIVE)) {
        report.violation = Some(format!("(b') T is singular on Ran χ̄: σ_min = {t_sigma_min:.3e}"));
        return Ok(report);
    }
    let tinv = match inverse_cond(&t_ss) {
        Ok((inv, cond)) if cond <= COND_LIMIT => inv,
        Ok((_, cond)) | Err(SrgError::IllConditioned(cond)) => {
            report.violation = Some(format!("(b') T on Ran χ̄ has condition number {cond:.3e}"));
            return Ok(report);
        }
        Err(e) => return Err(e),
    };

    let w = h - t;
    let chibar_s = pick(&cut.chibar, &s);
    let chi_c = pick(&cut.chi, &c);
    let mut w_ss = submatrix(&w, &s, &s);
    scale_rows(&mut w_ss, &chibar_s);
    scale_cols(&mut w_ss, &chibar_s);
    let mut tinv_chibar = tinv.clone();
    scale_cols(&mut tinv_chibar, &chibar_s);
    let mut chibar_tinv = tinv.clone();
    scale_rows(&mut chibar_tinv, &chibar_s);
    let left = &tinv * &w_ss;
    let right = &w_ss * &tinv;
    let (nl, el) = op_norm_bounded(&left, 1.0);
    let (nr, er) = op_norm_bounded(&right, 1.0);
    let mut w_sc = submatrix(&w, &s, &c);
    scale_rows(&mut w_sc, &chibar_s);
    scale_cols(&mut w_sc, &chi_c);
    let cross = frobenius(&(&tinv * &w_sc));
    report.neumann_left = nl;
    report.neumann_right = nr;
    report.cross = cross;
    report.norms_exact = el && er;
    if nl >= 1.0 {
        report.violation = Some(format!("(c') ‖T⁻¹χ̄Wχ̄‖ = {nl:.4} ≥ 1"));
    } else if nr >= 1.0 {
        report.violation = Some(format!("(c') ‖χ̄WT⁻¹χ̄‖ = {nr:.4} ≥ 1"));
    } else if !cross.is_finite() {
        report.violation = Some("(c') T⁻¹χ̄Wχ is unbounded".into());
    } else {
        report.pass = true;
    }
    Ok(report)
}

fn op_norm_or_diag(t: &CMat) -> f64 {
    if is_diagonal(t) {
        t.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max)
    } else {
        op_norm(t)
    }
}

/// Compact representation of `F_χ(H,T)`, `Q_χ`, `Q_χ^#` and `H_χ̄⁻¹`.
///
/// `F` agrees with `T` outside `C × C` where `C = {χ ≠ 0}`; the correction lives
/// on `C × C`. `Q − χ` is supported on `S × C` and `Q^# − χ` on `C × S`, with
/// `S = {χ̄ ≠ 0}`.
#[derive(Clone, Debug)]
pub struct FeshbachResult {
    pub dim: usize,
    pub c_idx: Vec<usize>,
    pub s_idx: Vec<usize>,
    pub chi: Vec<f64>,
    pub chibar: Vec<f64>,
    pub t: CMat,
    /// `F` on `C × C`.
    pub f_cc: CMat,
    /// `H_χ̄⁻¹` on `S × S`.
    pub binv: CMat,
    /// `χ̄ H_χ̄⁻¹ χ̄ W χ` on `S × C` (so `Q = χ − q_sc`).
    pub q_sc: CMat,
    /// `χ W χ̄ H_χ̄⁻¹ χ̄` on `C × S` (so `Q^# = χ − qs_cs`).
    pub qs_cs: CMat,
    /// 1-norm condition number of `H_χ̄` on `Ran χ̄`.
    pub cond: f64,
    pub pair: Option<PairReport>,
    c_pos: Vec<Option<usize>>,
}

/// `F_χ(H,T)` without re-running the pair check.
pub fn feshbach_map(h: &CMat, t: &CMat, cut: &CutoffPair) -> Result<FeshbachResult> {
    let n = cut.dim();
    if h.shape() != (n, n) || t.shape() != (n, n) {
        return Err(SrgError::InvalidParameter("H, T and the cutoffs differ in dimension".into()));
    }
    let s = cut.chibar_support();
    let c = cut.chi_support();
    let chibar_s = pick(&cut.chibar, &s);
    let chi_c = pick(&cut.chi, &c);
    let w = h - t;

    let mut b = submatrix(t, &s, &s);
    let mut w_ss = submatrix(&w, &s, &s);
    scale_rows(&mut w_ss, &chibar_s);
    scale_cols(&mut w_ss, &chibar_s);
    b += w_ss;
    let (binv, cond) = inverse_cond(&b)?;
    if cond > COND_LIMIT {
        return Err(SrgError::IllConditioned(cond));
    }
    let mut x = binv.clone();
    scale_rows(&mut x, &chibar_s);
    scale_cols(&mut x, &chibar_s);

    let mut w_sc = submatrix(&w, &s, &c);
    scale_cols(&mut w_sc, &chi_c);
    let mut w_cs = submatrix(&w, &c, &s);
    scale_rows(&mut w_cs, &chi_c);
    let q_sc = &x * &w_sc;
    let qs_cs = &w_cs * &x;

    let mut f_cc = submatrix(&w, &c, &c);
    scale_rows(&mut f_cc, &chi_c);
    scale_cols(&mut f_cc, &chi_c);
    f_cc += submatrix(t, &c, &c);
    f_cc -= &w_cs * &q_sc;

    let mut c_pos = vec![None; n];
    for (k, &i) in c.iter().enumerate() {
        c_pos[i] = Some(k);
    }
    Ok(FeshbachResult {
        dim: n,
        c_idx: c,
        s_idx: s,
        chi: cut.chi.clone(),
        chibar: cut.chibar.clone(),
        t: t.clone(),
        f_cc,
        binv,
        q_sc,
        qs_cs,
        cond,
        pair: None,
        c_pos,
    })
}

/// Runs [`check_pair`] and refuses with the violated condition named before
/// applying [`feshbach_map`].
pub fn feshbach_checked(h: &CMat, t: &CMat, cut: &CutoffPair) -> Result<FeshbachResult> {
    let report = check_pair(h, t, cut)?;
    if !report.pass {
        return Err(SrgError::PairCondition(report.violation.clone().unwrap_or_default()));
    }
    let mut res = feshbach_map(h, t, cut)?;
    res.pair = Some(report);
    Ok(res)
}

impl FeshbachResult {
    /// Entry `F[i, j]`.
    pub fn f_entry(&self, i: usize, j: usize) -> crate::linalg::C64 {
        match (self.c_pos[i], self.c_pos[j]) {
            (Some(a), Some(b)) => self.f_cc[(a, b)],
            _ => self.t[(i, j)],
        }
    }

    /// `F` restricted to the given rows and columns.
    pub fn f_submatrix(&self, rows: &[usize], cols: &[usize]) -> CMat {
        CMat::from_fn(rows.len(), cols.len(), |a, b| self.f_entry(rows[a], cols[b]))
    }

    pub fn f(&self) -> CMat {
        let mut f = self.t.clone();
        for (a, &i) in self.c_idx.iter().enumerate() {
            for (b, &j) in self.c_idx.iter().enumerate() {
                f[(i, j)] = self.f_cc[(a, b)];
            }
        }
        f
    }

    pub fn q(&self) -> CMat {
        let mut q = diag_real(&self.chi);
        for (a, &i) in self.s_idx.iter().enumerate() {
            for (b, &j) in self.c_idx.iter().enumerate() {
                q[(i, j)] -= self.q_sc[(a, b)];
            }
        }
        q
    }

    pub fn q_sharp(&self) -> CMat {
        let mut q = diag_real(&self.chi);
        for (a, &i) in self.c_idx.iter().enumerate() {
            for (b, &j) in self.s_idx.iter().enumerate() {
                q[(i, j)] -= self.qs_cs[(a, b)];
            }
        }
        q
    }

    /// `H_χ̄⁻¹` on `Ran χ̄`, padded by zero.
    pub fn hbar_inverse(&self) -> CMat {
        pad(self.dim, &self.binv, &self.s_idx, &self.s_idx)
    }

    /// `Q_χ v` without forming `Q_χ`.
    pub fn apply_q(&self, v: &CVec) -> CVec {
        let mut out = CVec::from_fn(self.dim, |i, _| v[i] * self.chi[i]);
        let vc = CVec::from_fn(self.c_idx.len(), |k, _| v[self.c_idx[k]]);
        let corr = &self.q_sc * vc;
        for (a, &i) in self.s_idx.iter().enumerate() {
            out[i] -= corr[a];
        }
        out
    }
}

fn pad(n: usize, block: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    let mut m = CMat::zeros(n, n);
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            m[(i, j)] = block[(a, b)];
        }
    }
    m
}

/// `χ̄ T⁻¹ χ̄` with `T⁻¹` taken on `Ran χ̄`.
fn chibar_tinv_chibar(t: &CMat, cut: &CutoffPair) -> Result<CMat> {
    let s = cut.chibar_support();
    let (mut tinv, _) = inverse_cond(&submatrix(t, &s, &s))?;
    let chibar_s = pick(&cut.chibar, &s);
    scale_rows(&mut tinv, &chibar_s);
    scale_cols(&mut tinv, &chibar_s);
    Ok(pad(t.nrows(), &tinv, &s, &s))
}

/// The six operator identities relating `H`, `F`, `Q` and `Q^#`, as residual norms:
/// `[(χ̄H_χ̄⁻¹χ̄)H − (1−Qχ), H(χ̄H_χ̄⁻¹χ̄) − (1−χQ^#), (χ̄T⁻¹χ̄)F − (1−χQ),
///   F(χ̄T⁻¹χ̄) − (1−Q^#χ), HQ − χF, Q^#H − Fχ]`.
pub fn identity_residuals(
    h: &CMat,
    t: &CMat,
    cut: &CutoffPair,
    res: &FeshbachResult,
) -> Result<[f64; 6]> {
    let n = cut.dim();
    let one = CMat::identity(n, n);
    let chi = cut.chi_op();
    let chibar = cut.chibar_op();
    let f = res.f();
    let q = res.q();
    let qs = res.q_sharp();
    let r = &chibar * res.hbar_inverse() * &chibar;
    let rt = chibar_tinv_chibar(t, cut)?;
    Ok([
        op_norm(&(&r * h - (&one - &q * &chi))),
        op_norm(&(h * &r - (&one - &chi * &qs))),
        op_norm(&(&rt * &f - (&one - &chi * &q))),
        op_norm(&(&f * &rt - (&one - &qs * &chi))),
        op_norm(&(h * &q - &chi * &f)),
        op_norm(&(&qs * h - &f * &chi)),
    ])
}

#[derive(Clone, Debug, Serialize)]
pub struct IsospectralityReport {
    pub sigma_h: f64,
    /// Smallest singular value of `F` on `Ran χ`.
    pub sigma_f: f64,
    pub h_singular: bool,
    pub f_singular: bool,
    /// `‖Q(χv) − v‖/‖v‖` for the kernel vector `v` of `H`.
    pub kernel_residual_h: Option<f64>,
    /// `‖χ(Qu) − u‖/‖u‖` for the kernel vector `u` of `F`.
    pub kernel_residual_f: Option<f64>,
    pub pass: bool,
}

pub fn isospectrality_check(
    h: &CMat,
    _t: &CMat,
    cut: &CutoffPair,
    res: &FeshbachResult,
) -> IsospectralityReport {
    let sv_h = crate::linalg::singular_values(h);
    let sigma_h = sv_h.last().copied().unwrap_or(0.0);
    let h_singular = sigma_h <= SINGULAR_TOL * sv_h.first().copied().unwrap_or(0.0);
    let sv_f = crate::linalg::singular_values(&res.f_cc);
    let sigma_f = sv_f.last().copied().unwrap_or(f64::INFINITY);
    let f_singular = !sv_f.is_empty() && sigma_f <= SINGULAR_TOL * sv_f[0];

    let mut kernel_residual_h = None;
    let mut kernel_residual_f = None;
    if h_singular {
        let v = null_vector(h);
        let chi_v = CVec::from_fn(v.len(), |i, _| v[i] * cut.chi[i]);
        let back = res.apply_q(&chi_v);
        kernel_residual_h = Some(crate::linalg::vec_norm(&(back - &v)) / crate::linalg::vec_norm(&v));
    }
    if f_singular {
        let uc = null_vector(&res.f_cc);
        let mut u = CVec::zeros(res.dim);
        for (a, &i) in res.c_idx.iter().enumerate() {
            u[i] = uc[a];
        }
        let qu = res.apply_q(&u);
        let chi_qu = CVec::from_fn(u.len(), |i, _| qu[i] * cut.chi[i]);
        kernel_residual_f = Some(crate::linalg::vec_norm(&(chi_qu - &u)) / crate::linalg::vec_norm(&u));
    }
    let kernels_ok = kernel_residual_h.map_or(true, |r| r <= SINGULAR_TOL)
        && kernel_residual_f.map_or(true, |r| r <= SINGULAR_TOL);
    IsospectralityReport {
        sigma_h,
        sigma_f,
        h_singular,
        f_singular,
        kernel_residual_h,
        kernel_residual_f,
        pass: h_singular == f_singular && kernels_ok,
    }
}

/// Truncated Neumann series for `H_χ̄⁻¹` on `Ran χ̄` compared with the direct
/// inverse.
#[derive(Clone, Debug, Serialize)]
pub struct NeumannReport {
    pub order: usize,
    /// `‖T⁻¹χ̄Wχ̄‖`
    pub ratio: f64,
    /// `‖Σ_{k≤N}(−T⁻¹χ̄Wχ̄)^k T⁻¹ − H_χ̄⁻¹‖ / ‖T⁻¹‖`
    pub residual: f64,
    /// `ratio^{N+1}/(1 − ratio)`
    pub bound: f64,
}

pub fn neumann_resolvent(h: &CMat, t: &CMat, cut: &CutoffPair, order: usize) -> Result<NeumannReport> {
    let s = cut.chibar_support();
    let chibar_s = pick(&cut.chibar, &s);
    let (tinv, _) = inverse_cond(&submatrix(t, &s, &s))?;
    let mut w_ss = submatrix(&(h - t), &s, &s);
    scale_rows(&mut w_ss, &chibar_s);
    scale_cols(&mut w_ss, &chibar_s);
    let k = &tinv * &w_ss;
    let ratio = op_norm(&k);
    let mut term = tinv.clone();
    let mut sum = tinv.clone();
    for _ in 0..order {
        term = -(&k * &term);
        sum += &term;
    }
    let (direct, _) = inverse_cond(&(submatrix(t, &s, &s) + w_ss))?;
    let tn = op_norm(&tinv).max(f64::MIN_POSITIVE);
    Ok(NeumannReport {
        order,
        ratio,
        residual: op_norm(&(sum - direct)) / tn,
        bound: ratio.powi(order as i32 + 1) / (1.0 - ratio),
    })
}

/// `A − z` for a scalar `z`, convenience for building `H − z` pairs.
pub fn shift(a: &CMat, z: crate::linalg::C64) -> CMat {
    a - CMat::identity(a.nrows(), a.ncols()) * z
}
