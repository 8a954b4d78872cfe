//! Normal-ordered kernels of the initial effective Hamiltonian to finite order
//! in `g`: contraction patterns, the vacuum-expectation kernels
//! `V_{m,p,n,q}`, assembly of `ŵ_{M,N}` and the `(V1)`/`(V2)` bound chain.
//!
//! Slot `1` is the rightmost factor of the product (it acts first on the ket).
//! With this ordering the shifts are
//! `r_l = Σ_{i≤l, m_i=1} |k_i| + Σ_{i≥l+1, n_i=1} |k̃_i|`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Result, SrgError};
use crate::exec;
use crate::feshbach::{chi_derivative_sup, chi_profile, chi_profile_derivative};
use crate::fockgrid::{build_fock, build_fock_with_cap, field_creation, hf_op, FockBasis, Sector};
use crate::kernels::{op_from_kernels, KernelSequence, KERNEL_ORDER_CAP};
use crate::linalg::{diag_real, inverse_cond, op_norm, re, submatrix, CMat, CVec, C64, ZERO};
use crate::model::{atomic_projection, initial_effective_with, AtomFrame, AtomicData, ModelSpec};

/// Largest supported `L`.
pub const L_MAX_CAP: usize = 3;

/// Role of one slot of a contraction pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Role {
    /// Uncontracted creation (`m_l = 1`).
    M,
    /// Contracted creation (`p_l = 1`).
    P,
    /// Uncontracted annihilation (`n_l = 1`).
    N,
    /// Contracted annihilation (`q_l = 1`).
    Q,
}

/// An element of `I_L`: exactly one role per slot.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ContractionTuple {
    pub roles: Vec<Role>,
}

impl ContractionTuple {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// `|m̲|`
    pub fn m_count(&self) -> usize {
        self.roles.iter().filter(|r| **r == Role::M).count()
    }

    /// `|n̲|`
    pub fn n_count(&self) -> usize {
        self.roles.iter().filter(|r| **r == Role::N).count()
    }

    /// Number of contracted slots.
    pub fn pq_count(&self) -> usize {
        self.len() - self.m_count() - self.n_count()
    }

    /// `r_l(m̲, n̲)` for `l = 0..=L`, given the momenta of the external slots.
    pub fn shifts(&self, momenta: &[f64]) -> Vec<f64> {
        let l_tot = self.len();
        (0..=l_tot)
            .map(|l| {
                self.roles
                    .iter()
                    .zip(momenta)
                    .enumerate()
                    .map(|(i, (role, k))| match role {
                        Role::M if i < l => *k,
                        Role::N if i >= l => *k,
                        _ => 0.0,
                    })
                    .sum()
            })
            .collect()
    }
}

/// All tuples in `I_L` in lexicographic order of roles.
pub fn all_tuples(l: usize) -> Vec<ContractionTuple> {
    const ROLES: [Role; 4] = [Role::M, Role::P, Role::N, Role::Q];
    let mut out = vec![ContractionTuple { roles: vec![] }];
    for _ in 0..l {
        out = out
            .into_iter()
            .flat_map(|t| {
                ROLES.iter().map(move |r| {
                    let mut roles = t.roles.clone();
                    roles.push(*r);
                    ContractionTuple { roles }
                })
            })
            .collect();
    }
    out
}

/// Tuples in `I_L` with `|m̲| = m` and `|n̲| = n`.
pub fn enumerate_tuples(l: usize, m: usize, n: usize) -> Vec<ContractionTuple> {
    all_tuples(l).into_iter().filter(|t| t.m_count() == m && t.n_count() == n).collect()
}

/// Per-`(s, z)` data for kernel evaluation on the space of contracted bosons.
#[derive(Clone, Debug)]
pub struct WickContext {
    pub s: C64,
    pub z: C64,
    pub atomic: AtomicData,
    frame: AtomFrame,
    /// Complement block of `H_at(s)` in the atomic frame.
    h_perp: CMat,
    /// Fock space of contracted bosons.
    internal: FockBasis,
    /// `a*(G)` and `a(G)` on atom ⊗ internal Fock.
    create: CMat,
    annihilate: CMat,
    /// `G(k)` and `G*(k)` per mode.
    g_create: Vec<CMat>,
    g_annih: Vec<CMat>,
    momenta: Vec<f64>,
}

impl WickContext {
    pub fn new(spec: &ModelSpec, s: C64, z: C64, basis: &FockBasis, l_max: usize) -> Result<WickContext> {
        if l_max == 0 || l_max > L_MAX_CAP {
            return Err(SrgError::InvalidParameter(format!("L_max = {l_max} outside 1..={L_MAX_CAP}")));
        }
        let atomic = atomic_projection(spec, s)?;
        let frame = AtomFrame::new(&atomic)?;
        let d = spec.atom_dim;
        let h_perp = frame.to_frame(&spec.h_at(s)).view((1, 1), (d - 1, d - 1)).into_owned();
        let internal = build_fock_with_cap(&basis.grid, (l_max / 2).max(1), usize::MAX)?;
        let g_create = spec.coupling_values(s, &basis.grid);
        let g_annih = spec.annihilation_values(s, &basis.grid);
        let create = field_creation(&internal, &g_create)?;
        let adj: Vec<CMat> = g_annih.iter().map(|m| m.adjoint()).collect();
        let annihilate = field_creation(&internal, &adj)?.adjoint();
        let momenta = basis.grid.modes.iter().map(|m| m.k).collect();
        Ok(WickContext { s, z, atomic, frame, h_perp, internal, create, annihilate, g_create, g_annih, momenta })
    }

    /// `F(x) = χ̄²(x) (H_at − z + x)⁻¹` as an atom matrix.
    pub fn resolvent_profile(&self, x: f64) -> Result<CMat> {
        Ok(self.profile_pair(x)?.0)
    }

    /// `(F(x), F'(x))`.
    pub fn profile_pair(&self, x: f64) -> Result<(CMat, CMat)> {
        let d = self.h_perp.nrows() + 1;
        let mut blk = CMat::zeros(d, d);
        let mut dblk = CMat::zeros(d, d);
        let (_, cb) = chi_profile(x, 1.0);
        let (_, dcb) = chi_profile_derivative(x, 1.0);
        if cb != 0.0 || dcb != 0.0 {
            let den = self.atomic.e_at - self.z + x;
            if den.norm() < 1e-300 {
                return Err(SrgError::SingularResolvent(x));
            }
            blk[(0, 0)] = re(cb * cb) / den;
            dblk[(0, 0)] = re(2.0 * cb * dcb) / den - re(cb * cb) / (den * den);
        }
        if d > 1 {
            let m = &self.h_perp + CMat::identity(d - 1, d - 1) * (re(x) - self.z);
            let (inv, _) = inverse_cond(&m).map_err(|_| SrgError::SingularResolvent(x))?;
            let dinv = -(&inv * &inv);
            blk.view_mut((1, 1), (d - 1, d - 1)).copy_from(&inv);
            dblk.view_mut((1, 1), (d - 1, d - 1)).copy_from(&dinv);
        }
        let v = &self.frame.v;
        let vi = &self.frame.v_inv;
        Ok((v * blk * vi, v * dblk * vi))
    }

    /// Applies `F(H_f + shift)` (or `F'`) on atom ⊗ internal Fock.
    fn apply_profile(&self, v: &CVec, shift: f64, derivative: bool) -> Result<CVec> {
        let nf = self.internal.dim();
        let d = self.h_perp.nrows() + 1;
        let mut out = CVec::zeros(v.len());
        for f in 0..nf {
            let x = self.internal.hf[f] + shift;
            let (fm, dfm) = self.profile_pair(x)?;
            let m = if derivative { dfm } else { fm };
            for a in 0..d {
                let mut acc = ZERO;
                for b in 0..d {
                    acc += m[(a, b)] * v[b * nf + f];
                }
                out[a * nf + f] = acc;
            }
        }
        Ok(out)
    }

    fn apply_atom(&self, m: &CMat, v: &CVec) -> CVec {
        let nf = self.internal.dim();
        let d = m.nrows();
        let mut out = CVec::zeros(v.len());
        for a in 0..d {
            for b in 0..d {
                let c = m[(a, b)];
                if c == ZERO {
                    continue;
                }
                for f in 0..nf {
                    out[a * nf + f] += c * v[b * nf + f];
                }
            }
        }
        out
    }

    /// `V_{m,p,n,q}(r, k_m, k̃_n)`; `modes` lists the grid mode of each
    /// external slot in slot order. With `derivative_at = Some(j)` the `j`-th
    /// inner `F` is replaced by `F'` (used for the `(V2)` decomposition).
    fn evaluate(&self, t: &ContractionTuple, r: f64, modes: &[usize], derivative_at: Option<usize>) -> Result<C64> {
        let ext = t.m_count() + t.n_count();
        if modes.len() != ext {
            return Err(SrgError::InvalidParameter(format!("{ext} external modes expected, got {}", modes.len())));
        }
        let mut per_slot = vec![0.0; t.len()];
        let mut slot_mode = vec![usize::MAX; t.len()];
        let mut it = modes.iter();
        for (i, role) in t.roles.iter().enumerate() {
            if matches!(role, Role::M | Role::N) {
                let m = *it.next().unwrap();
                per_slot[i] = self.momenta[m];
                slot_mode[i] = m;
            }
        }
        let shifts = t.shifts(&per_slot);
        let l_tot = t.len();
        let outer = chi_profile(r + shifts[0], 1.0).0 * chi_profile(r + shifts[l_tot], 1.0).0;
        if outer == 0.0 {
            return Ok(ZERO);
        }
        let nf = self.internal.dim();
        let d = self.h_perp.nrows() + 1;
        let mut v = CVec::zeros(d * nf);
        for a in 0..d {
            v[a * nf] = self.atomic.right[a];
        }
        for (i, role) in t.roles.iter().enumerate() {
            v = match role {
                Role::M => self.apply_atom(&self.g_create[slot_mode[i]], &v),
                Role::N => self.apply_atom(&self.g_annih[slot_mode[i]], &v),
                Role::P => &self.create * &v,
                Role::Q => &self.annihilate * &v,
            };
            if i + 1 < l_tot {
                v = self.apply_profile(&v, r + shifts[i + 1], derivative_at == Some(i))?;
            }
        }
        let mut acc = ZERO;
        for a in 0..d {
            acc += self.atomic.left[a].conj() * v[a * nf];
        }
        Ok(acc * outer)
    }

    pub fn kernel_v(&self, t: &ContractionTuple, r: f64, modes: &[usize]) -> Result<C64> {
        self.evaluate(t, r, modes, None)
    }

    /// `‖(H_f + 1) F(H_f + x)‖` and the same for `F'`, on the internal space.
    fn profile_sups(&self, x: f64) -> Result<(f64, f64)> {
        let mut a: f64 = 0.0;
        let mut b: f64 = 0.0;
        let mut seen = Vec::new();
        for &q in &self.internal.hf {
            if seen.iter().any(|s: &f64| (s - q).abs() < 1e-15) {
                continue;
            }
            seen.push(q);
            let (f, df) = self.profile_pair(q + x)?;
            a = a.max((q + 1.0) * op_norm(&f));
            b = b.max((q + 1.0) * op_norm(&df));
        }
        Ok((a, b))
    }
}

/// `F(r)` for one `(s, z)`.
pub fn resolvent_profile(spec: &ModelSpec, s: C64, z: C64, basis: &FockBasis, r: f64) -> Result<CMat> {
    WickContext::new(spec, s, z, basis, 1)?.resolvent_profile(r)
}

/// `V_{m,p,n,q}(r, modes)` for one `(s, z)`.
pub fn kernel_v(
    spec: &ModelSpec,
    s: C64,
    z: C64,
    basis: &FockBasis,
    tuple: &ContractionTuple,
    r: f64,
    modes: &[usize],
) -> Result<C64> {
    WickContext::new(spec, s, z, basis, tuple.len().max(1))?.kernel_v(tuple, r, modes)
}

/// Truncated kernels of `H⁽⁰⁾[s, z]`.
#[derive(Clone, Debug)]
pub struct WickKernels {
    pub l_max: usize,
    pub g: f64,
    pub s: C64,
    pub z: C64,
    /// `w_{0,0}` and the symmetrized `ŵ_{M,N}`, `M + N ≤ 2`.
    pub kernels: KernelSequence,
    /// Terms with `M + N` above the kernel order cap that were dropped.
    pub dropped_orders: Vec<(usize, usize)>,
}

fn mode_tuples(modes: usize, len: usize) -> Vec<Vec<usize>> {
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

/// External slot modes for the kernel argument `(k^{(M)}, k̃^{(N)})`: the
/// `i`-th `m`-slot gets `k_i`, the `i`-th `n`-slot gets `k̃_i`.
fn slot_modes(t: &ContractionTuple, creation: &[usize], annihilation: &[usize]) -> Vec<usize> {
    let mut ci = creation.iter();
    let mut ai = annihilation.iter();
    t.roles
        .iter()
        .filter_map(|r| match r {
            Role::M => ci.next().copied(),
            Role::N => ai.next().copied(),
            _ => None,
        })
        .collect()
}

/// Sums `(−1)^{L−1} g^L V` over tuples and `L ≤ l_max`, on the distinct `H_f`
/// values of the reduced sector, and symmetrizes the argument blocks.
pub fn assemble_w(spec: &ModelSpec, s: C64, z: C64, l_max: usize, basis: &FockBasis) -> Result<WickKernels> {
    let ctx = WickContext::new(spec, s, z, basis, l_max)?;
    let sector = Sector::reduced(basis, basis.grid.shells);
    let r_grid = sector.distinct_hf();
    let nm = basis.modes();
    let g = spec.g;
    let w00_base: Vec<C64> = r_grid.iter().map(|&r| ctx.atomic.e_at - z + r).collect();
    let mut w = KernelSequence::new(r_grid.clone(), w00_base, nm, 0.5, spec.mu);
    let mut sums: BTreeMap<(usize, usize), Vec<C64>> = BTreeMap::new();
    let mut dropped = Vec::new();
    if g != 0.0 {
        for l in 1..=l_max {
            let coef = (-1f64).powi(l as i32 - 1) * g.powi(l as i32);
            for t in all_tuples(l) {
                let (m, n) = (t.m_count(), t.n_count());
                if m + n > KERNEL_ORDER_CAP {
                    if !dropped.contains(&(m, n)) {
                        dropped.push((m, n));
                    }
                    continue;
                }
                if t.pq_count() % 2 == 1 {
                    // an odd number of contracted operators has zero vacuum expectation
                    continue;
                }
                let cre = mode_tuples(nm, m);
                let ann = mode_tuples(nm, n);
                let stride = nm.pow((m + n) as u32);
                let (nc, na) = (cre.len(), ann.len());
                let jobs: Vec<(usize, usize, usize)> = (0..r_grid.len())
                    .flat_map(|ri| (0..nc).flat_map(move |ci| (0..na).map(move |ai| (ri, ci, ai))))
                    .collect();
                let vals = exec::map(&jobs, |&(ri, ci, ai)| {
                    ctx.kernel_v(&t, r_grid[ri], &slot_modes(&t, &cre[ci], &ann[ai]))
                });
                let target = sums.entry((m, n)).or_insert_with(|| vec![ZERO; r_grid.len() * stride]);
                for (&(ri, ci, ai), v) in jobs.iter().zip(vals) {
                    let idx = ri * stride + ci * ann.len() + ai;
                    target[idx] += v? * coef;
                }
            }
        }
    }
    for ((m, n), vals) in sums {
        if m + n == 0 {
            for (k, v) in vals.iter().enumerate() {
                w.w00[k] += *v;
            }
        } else {
            w.insert(m, n, symmetrize(vals, nm, m, n, r_grid.len()))?;
        }
    }
    dropped.sort();
    Ok(WickKernels { l_max, g, s, z, kernels: w, dropped_orders: dropped })
}

/// Averages over permutations inside the creation block and inside the
/// annihilation block (blocks have at most two arguments).
fn symmetrize(mut vals: Vec<C64>, nm: usize, m: usize, n: usize, nr: usize) -> Vec<C64> {
    let stride = nm.pow((m + n) as u32);
    if m == 2 || n == 2 {
        for ri in 0..nr {
            for i in 0..nm {
                for j in 0..i {
                    let a = ri * stride + i * nm + j;
                    let b = ri * stride + j * nm + i;
                    let avg = (vals[a] + vals[b]) * 0.5;
                    vals[a] = avg;
                    vals[b] = avg;
                }
            }
        }
    }
    vals
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub l_max: usize,
    pub g: f64,
    /// `‖H(ŵ) − H⁽⁰⁾‖` at `g`.
    pub residual: f64,
    /// Same at `g/2`.
    pub residual_half: f64,
    pub ratio: f64,
    /// `2^{L_max+1}`, or `2^{3}` when `L_max` exceeds the kernel order cap
    /// (the dropped `M + N = L` terms then leave an `O(g³)` remainder).
    pub expected_ratio: f64,
    pub pass: bool,
}

/// `‖H(ŵ) − H⁽⁰⁾‖` on the reduced sector of `basis`.
///
/// `H⁽⁰⁾` is computed with one extra boson of headroom and then restricted,
/// so that states at the number cutoff keep their virtual emissions.
pub fn wick_residual(spec: &ModelSpec, s: C64, z: C64, l_max: usize, basis: &FockBasis) -> Result<f64> {
    let wk = assemble_w(spec, s, z, l_max, basis)?;
    let sector = Sector::reduced(basis, basis.grid.shells);
    let h_w = op_from_kernels(&wk.kernels, basis, &sector)?;
    let roomy = build_fock(&basis.grid, basis.n_max + 1)?;
    let ie = initial_effective_with(spec, s, z, &roomy, false)?;
    let map: Vec<usize> = sector
        .states
        .iter()
        .map(|&g| {
            let local = roomy.index_of(&basis.states[g]).and_then(|x| ie.sector.local_index(x));
            local.ok_or_else(|| SrgError::InvalidParameter("sector state missing from the headroom basis".into()))
        })
        .collect::<Result<_>>()?;
    let direct = submatrix(&ie.h0, &map, &map);
    Ok(op_norm(&(h_w - direct)))
}

/// Residual at `g` and `g/2` and the `O(g^{L_max+1})` ratio test.
pub fn compare_with_direct(spec: &ModelSpec, s: C64, z: C64, l_max: usize, basis: &FockBasis) -> Result<CompareReport> {
    let residual = wick_residual(spec, s, z, l_max, basis)?;
    let residual_half = wick_residual(&spec.with_g(spec.g / 2.0), s, z, l_max, basis)?;
    let order = if l_max > KERNEL_ORDER_CAP { KERNEL_ORDER_CAP + 1 } else { l_max + 1 };
    let expected_ratio = 2f64.powi(order as i32);
    let ratio = residual / residual_half;
    let pass = if spec.g == 0.0 {
        residual < 1e-13
    } else {
        ratio >= expected_ratio / 1.3 && ratio <= expected_ratio * 1.3
    };
    Ok(CompareReport { l_max, g: spec.g, residual, residual_half, ratio, expected_ratio, pass })
}

/// Largest `|V|/bound` over the tuples of one `(L, M, N)` class.
#[derive(Clone, Debug, Serialize)]
pub struct TupleClassBound {
    pub l: usize,
    pub m: usize,
    pub n: usize,
    pub evaluations: usize,
    pub max_ratio_v1: f64,
    pub max_ratio_v2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub c0: f64,
    pub c1: f64,
    pub c_at: f64,
    pub g_omega: f64,
    pub chi_prime_sup: f64,
    pub classes: Vec<TupleClassBound>,
    pub v1_pass: bool,
    pub v2_pass: bool,
    /// `‖a*(G)(H_f+1)^{-1/2}‖` and `‖a(G)(H_f+1)^{-1/2}‖`, sup over samples.
    pub field_norms: (f64, f64),
    pub field_pass: bool,
    pub pass: bool,
}

/// `|V| ≤ Π‖G(k)‖ · ‖G‖_ω^{#pq} · C₀^{L−1} · C_at` and the `∂_r` analogue for
/// every tuple with `L ≤ l_max`, external modes on the grid and `r` on the
/// sector's `H_f` values.
pub fn bound_check(
    spec: &ModelSpec,
    samples: &[(C64, C64)],
    l_max: usize,
    basis: &FockBasis,
) -> Result<BoundReport> {
    if samples.is_empty() {
        return Err(SrgError::InvalidParameter("bound_check needs samples".into()));
    }
    let contexts: Vec<WickContext> =
        samples.iter().map(|&(s, z)| WickContext::new(spec, s, z, basis, l_max)).collect::<Result<_>>()?;
    let sector = Sector::reduced(basis, basis.grid.shells);
    let r_grid = sector.distinct_hf();
    let nm = basis.modes();
    let momenta: Vec<f64> = basis.grid.modes.iter().map(|m| m.k).collect();

    // arguments of F: every r plus up to two external momenta, and a uniform sweep
    let mut xs: Vec<f64> = (0..=600).map(|k| k as f64 * 0.005).collect();
    for &r in &r_grid {
        xs.push(r);
        for &a in &momenta {
            xs.push(r + a);
            for &b in &momenta {
                xs.push(r + a + b);
            }
        }
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut c0: f64 = 0.0;
    let mut c1: f64 = 0.0;
    let mut c_at: f64 = 0.0;
    let mut g_omega: f64 = 0.0;
    for ctx in &contexts {
        let sups = exec::map(&xs, |&x| ctx.profile_sups(x)).into_iter().collect::<Result<Vec<_>>>()?;
        for (a, b) in sups {
            c0 = c0.max(a);
            c1 = c1.max(b);
        }
        c_at = c_at.max(op_norm(&ctx.atomic.p_at));
        g_omega = g_omega.max(spec.coupling_norms(ctx.s, &basis.grid).1.sqrt());
    }
    let chi_prime_sup = chi_derivative_sup(1.0);

    let mut classes: Vec<TupleClassBound> = Vec::new();
    for l in 1..=l_max {
        for t in all_tuples(l) {
            let (m, n) = (t.m_count(), t.n_count());
            if m + n > KERNEL_ORDER_CAP {
                continue;
            }
            let ext_modes = mode_tuples(nm, m + n);
            let mut jobs = Vec::new();
            for ci in 0..contexts.len() {
                for (ri, _) in r_grid.iter().enumerate() {
                    for (ei, _) in ext_modes.iter().enumerate() {
                        jobs.push((ci, ri, ei));
                    }
                }
            }
            let pq = t.pq_count() as i32;
            let ratios = exec::map(&jobs, |&(ci, ri, ei)| -> Result<(f64, f64)> {
                let ctx = &contexts[ci];
                let modes = &ext_modes[ei];
                let mut gprod = 1.0;
                let mut it = modes.iter();
                for role in &t.roles {
                    match role {
                        Role::M => gprod *= op_norm(&ctx.g_create[*it.next().unwrap()]),
                        Role::N => gprod *= op_norm(&ctx.g_annih[*it.next().unwrap()]),
                        _ => {}
                    }
                }
                let base = gprod * g_omega.powi(pq) * c_at;
                let v1 = base * c0.powi(l as i32 - 1);
                let v2 = if l == 1 {
                    base * 2.0 * chi_prime_sup
                } else {
                    base * c0.powi(l as i32 - 2) * (2.0 * chi_prime_sup * c0 + (l as f64 - 1.0) * c1)
                };
                let r = r_grid[ri];
                let v = ctx.kernel_v(&t, r, modes)?.norm();
                let h = 1e-6;
                let dv = ((ctx.kernel_v(&t, r + h, modes)? - ctx.kernel_v(&t, (r - h).max(0.0), modes)?)
                    / (r + h - (r - h).max(0.0)))
                .norm();
                let ratio = |a: f64, b: f64| if a == 0.0 { 0.0 } else if b == 0.0 { f64::INFINITY } else { a / b };
                Ok((ratio(v, v1), ratio(dv, v2)))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let (r1, r2) = ratios.iter().fold((0.0f64, 0.0f64), |(a, b), (x, y)| (a.max(*x), b.max(*y)));
            match classes.iter_mut().find(|c| c.l == l && c.m == m && c.n == n) {
                Some(c) => {
                    c.evaluations += ratios.len();
                    c.max_ratio_v1 = c.max_ratio_v1.max(r1);
                    c.max_ratio_v2 = c.max_ratio_v2.max(r2);
                }
                None => classes.push(TupleClassBound {
                    l,
                    m,
                    n,
                    evaluations: ratios.len(),
                    max_ratio_v1: r1,
                    max_ratio_v2: r2,
                }),
            }
        }
    }
    let slack = 1.0 + 1e-9;
    let v1_pass = classes.iter().all(|c| c.max_ratio_v1 <= slack);
    // the derivative is a finite difference, so allow its truncation error
    let v2_pass = classes.iter().all(|c| c.max_ratio_v2 <= 1.0 + 1e-4);

    let fb = field_bounds(spec, samples, basis)?;
    let field_pass = fb.0 <= fb.2 + 1e-12 && fb.1 <= fb.2 + 1e-12;
    Ok(BoundReport {
        c0,
        c1,
        c_at,
        g_omega,
        chi_prime_sup,
        classes,
        v1_pass,
        v2_pass,
        field_norms: (fb.0, fb.1),
        field_pass,
        pass: v1_pass && v2_pass && field_pass,
    })
}

/// `(sup ‖a*(G)(H_f+1)^{-1/2}‖, sup ‖a(G)(H_f+1)^{-1/2}‖, sup ‖G‖_ω)` over the
/// samples, on atom ⊗ Fock.
pub fn field_bounds(spec: &ModelSpec, samples: &[(C64, C64)], basis: &FockBasis) -> Result<(f64, f64, f64)> {
    let damp = diag_real(&basis.hf.iter().map(|h| 1.0 / (h + 1.0).sqrt()).collect::<Vec<_>>());
    let damp = crate::linalg::kron(&CMat::identity(spec.atom_dim, spec.atom_dim), &damp);
    let mut out = (0.0f64, 0.0f64, 0.0f64);
    for &(s, _) in samples {
        let cre = field_creation(basis, &spec.coupling_values(s, &basis.grid))?;
        let adj: Vec<CMat> = spec.annihilation_values(s, &basis.grid).iter().map(|m| m.adjoint()).collect();
        let ann = field_creation(basis, &adj)?.adjoint();
        out.0 = out.0.max(op_norm(&(&cre * &damp)));
        out.1 = out.1.max(op_norm(&(&ann * &damp)));
        let (_, om) = spec.coupling_norms(s, &basis.grid);
        out.2 = out.2.max(om.sqrt());
    }
    Ok(out)
}

/// `H_f` on the reduced sector of `basis`, used to read off `ŵ` diagonals.
pub fn reduced_hf(basis: &FockBasis) -> CMat {
    let sector = Sector::reduced(basis, basis.grid.shells);
    submatrix(&hf_op(basis), &sector.states, &sector.states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockgrid::build_grid;
    use crate::kernels::c1_norm;
    use crate::linalg::c;

    fn setup(g: f64) -> (ModelSpec, FockBasis, C64, C64) {
        let basis = build_fock(&build_grid(0.25, 4, 2).unwrap(), 2).unwrap();
        let spec = ModelSpec::spin_boson(g, 0.1);
        let s = re(0.1);
        let z = atomic_projection(&spec, s).unwrap().e_at - 0.01;
        (spec, basis, s, z)
    }

    #[test]
    fn tuple_counts() {
        assert_eq!(all_tuples(1).len(), 4);
        assert_eq!(enumerate_tuples(1, 1, 0).len(), 1);
        for l in 1..=4 {
            let mut total = 0;
            for m in 0..=l {
                for n in 0..=l - m {
                    total += enumerate_tuples(l, m, n).len();
                }
            }
            assert_eq!(total, 4usize.pow(l as u32));
        }
    }

    #[test]
    fn shifts_follow_slot_order() {
        // slot 1 created k = 0.3, slot 2 contracted, slot 3 annihilated k̃ = 0.7
        let t = ContractionTuple { roles: vec![Role::M, Role::P, Role::N] };
        let r = t.shifts(&[0.3, 0.0, 0.7]);
        assert_eq!(r, vec![0.7, 1.0, 1.0, 0.3]);
    }

    #[test]
    fn profile_vanishes_on_atomic_block_at_zero() {
        let (spec, basis, s, _) = setup(0.0);
        let at = atomic_projection(&spec, s).unwrap();
        let z = at.e_at + 0.5;
        let f0 = resolvent_profile(&spec, s, z, &basis, 0.0).unwrap();
        assert!((&f0 * &at.right).norm() < 1e-14);
        // beyond the cutoff region F is the full resolvent
        let f2 = resolvent_profile(&spec, s, z, &basis, 2.0).unwrap();
        let d = spec.atom_dim;
        let full = (spec.h_at(s) + CMat::identity(d, d) * (re(2.0) - z)).try_inverse().unwrap();
        assert!(op_norm(&(f2 - full)) < 1e-13);
    }

    #[test]
    fn single_emission_kernel() {
        let (spec, basis, s, z) = setup(0.02);
        let ctx = WickContext::new(&spec, s, z, &basis, 1).unwrap();
        let at = atomic_projection(&spec, s).unwrap();
        let gv = spec.coupling_values(s, &basis.grid);
        let t = ContractionTuple { roles: vec![Role::M] };
        for mode in [0, 3, 7] {
            let k = basis.grid.modes[mode].k;
            for r in [0.0, 0.2, 0.5, 1.1] {
                let expected = at.left.dotc(&(&gv[mode] * &at.right))
                    * chi_profile(r + k, 1.0).0
                    * chi_profile(r, 1.0).0;
                assert!((ctx.kernel_v(&t, r, &[mode]).unwrap() - expected).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn vacuum_contraction_matches_mode_sum() {
        let (spec, basis, s, z) = setup(0.02);
        let ctx = WickContext::new(&spec, s, z, &basis, 2).unwrap();
        let at = atomic_projection(&spec, s).unwrap();
        let gc = spec.coupling_values(s, &basis.grid);
        let ga = spec.annihilation_values(s, &basis.grid);
        let t = ContractionTuple { roles: vec![Role::P, Role::Q] };
        let reversed = ContractionTuple { roles: vec![Role::Q, Role::P] };
        for r in [0.0, 0.3, 0.6] {
            let mut expected = ZERO;
            for (j, m) in basis.grid.modes.iter().enumerate() {
                let f = ctx.resolvent_profile(r + m.k).unwrap();
                expected += at.left.dotc(&(&ga[j] * &f * &gc[j] * &at.right)) * m.weight;
            }
            expected *= chi_profile(r, 1.0).0.powi(2);
            assert!((ctx.kernel_v(&t, r, &[]).unwrap() - expected).norm() < 1e-14);
            assert_eq!(ctx.kernel_v(&reversed, r, &[]).unwrap(), ZERO);
        }
    }

    #[test]
    fn free_kernels_are_trivial() {
        let (spec, basis, s, z) = setup(0.0);
        let w = assemble_w(&spec, s, z, 2, &basis).unwrap();
        assert!(w.kernels.wmn.is_empty());
        let e = atomic_projection(&spec, s).unwrap().e_at;
        for (r, v) in w.kernels.r_grid.iter().zip(&w.kernels.w00) {
            assert!((v - (e - z + r)).norm() < 1e-15);
        }
    }

    #[test]
    fn kernels_are_hermitian_for_real_arguments() {
        let (spec, basis, s, z) = setup(0.02);
        let w = assemble_w(&spec, s, z, 2, &basis).unwrap();
        let nm = basis.modes();
        assert!(w.kernels.w00.iter().all(|v| v.im.abs() < 1e-15));
        let w10 = &w.kernels.wmn[&(1, 0)];
        let w01 = &w.kernels.wmn[&(0, 1)];
        assert!(w10.iter().zip(w01).all(|(a, b)| (a - b.conj()).norm() < 1e-15));
        let w11 = &w.kernels.wmn[&(1, 1)];
        for ri in 0..w.kernels.r_grid.len() {
            for i in 0..nm {
                for j in 0..nm {
                    let a = w11[ri * nm * nm + i * nm + j];
                    let b = w11[ri * nm * nm + j * nm + i];
                    assert!((a - b.conj()).norm() < 1e-15);
                }
            }
        }
        assert!(c1_norm(&w.kernels.r_grid, &w.kernels.w00).is_finite());
    }

    #[test]
    fn truncation_error_scales_with_order() {
        let (spec, basis, s, z) = setup(0.02);
        for l in 1..=2 {
            let rep = compare_with_direct(&spec, s, z, l, &basis).unwrap();
            assert!(rep.pass, "{rep:?}");
        }
    }

    #[test]
    fn bound_chain_holds() {
        let (spec, basis, s, z) = setup(0.02);
        let samples = vec![(s, z), (c(0.1, 0.02), z + c(0.0, 0.01))];
        let rep = bound_check(&spec, &samples, 2, &basis).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.field_norms.0 <= rep.g_omega + 1e-12);
    }

    #[test]
    fn rejects_unsupported_order() {
        let (spec, basis, s, z) = setup(0.02);
        assert!(matches!(assemble_w(&spec, s, z, 4, &basis), Err(SrgError::InvalidParameter(_))));
    }
}
