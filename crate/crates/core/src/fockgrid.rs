//! Geometric momentum grid, truncated bosonic Fock space, ladder and field
//! operators, and the shell-shift dilation.
//!
//! Shell `j` sits at radius `ρ^j`. The dilation `k ↦ k/ρ` maps shell `j` onto
//! shell `j−1`, so on this grid it is a permutation of basis states.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Result, SrgError};
use crate::linalg::{kron, re, CMat, CVec, ZERO};

pub const BALL_VOLUME: f64 = 4.0 * std::f64::consts::PI / 3.0;
pub const DEFAULT_MODE_BUDGET: usize = 64;
pub const DEFAULT_DIM_CAP: usize = 20_000;

/// Slack used when comparing `H_f` eigenvalues against the reduced cutoff 1.
pub const RED_TOL: f64 = 1e-12;

const NONE: usize = usize::MAX;

#[derive(Clone, Debug, Serialize)]
pub struct Mode {
    pub shell: usize,
    pub angular: usize,
    /// `|k|`
    pub k: f64,
    /// Momentum-space volume represented by this mode.
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeGrid {
    pub rho: f64,
    pub shells: usize,
    pub angular_nodes: usize,
    /// `radii[j] = ρ^j`
    pub radii: Vec<f64>,
    /// Flat list, index `shell * angular_nodes + angular`.
    pub modes: Vec<Mode>,
}

impl ModeGrid {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn mode_index(&self, shell: usize, angular: usize) -> usize {
        shell * self.angular_nodes + angular
    }

    pub fn total_weight(&self) -> f64 {
        self.modes.iter().map(|m| m.weight).sum()
    }
}

pub fn build_grid(rho: f64, shells: usize, angular_nodes: usize) -> Result<ModeGrid> {
    build_grid_with_budget(rho, shells, angular_nodes, DEFAULT_MODE_BUDGET)
}

pub fn build_grid_with_budget(
    rho: f64,
    shells: usize,
    angular_nodes: usize,
    budget: usize,
) -> Result<ModeGrid> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(SrgError::InvalidParameter(format!("rho = {rho} must lie in (0,1)")));
    }
    if shells < 2 {
        return Err(SrgError::InvalidParameter(format!("shells = {shells} must be at least 2")));
    }
    if angular_nodes < 1 {
        return Err(SrgError::InvalidParameter("angular_nodes must be at least 1".into()));
    }
    let modes_total = shells * angular_nodes;
    if modes_total > budget {
        return Err(SrgError::ModeBudget { modes: modes_total, budget });
    }

    let mut radii = Vec::with_capacity(shells);
    let mut r = 1.0;
    for _ in 0..shells {
        radii.push(r);
        r *= rho;
    }
    let ball = |x: f64| BALL_VOLUME * x * x * x;
    let sq = rho.sqrt();
    let mut modes = Vec::with_capacity(modes_total);
    for (j, &rj) in radii.iter().enumerate() {
        let hi = if j == 0 { 1.0 } else { rj / sq };
        let lo = if j + 1 == shells { 0.0 } else { rj * sq };
        let w = (ball(hi) - ball(lo)) / angular_nodes as f64;
        for a in 0..angular_nodes {
            modes.push(Mode { shell: j, angular: a, k: rj, weight: w });
        }
    }
    Ok(ModeGrid { rho, shells, angular_nodes, radii, modes })
}

/// Occupation-number basis with at most `n_max` bosons.
///
/// States are ordered by total boson number; within a sector, by the sorted
/// tuple of occupied mode indices in lexicographic order. The vacuum is state 0.
#[derive(Clone, Debug)]
pub struct FockBasis {
    pub grid: ModeGrid,
    pub n_max: usize,
    pub states: Vec<Vec<u8>>,
    pub hf: Vec<f64>,
    pub number: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    up: Vec<usize>,
    down: Vec<usize>,
}

pub fn build_fock(grid: &ModeGrid, n_max: usize) -> Result<FockBasis> {
    build_fock_with_cap(grid, n_max, DEFAULT_DIM_CAP)
}

pub fn fock_dimension(modes: usize, n_max: usize) -> usize {
    (0..=n_max).map(|n| binomial(modes + n - 1, n)).sum::<usize>().max(1)
}

fn binomial(n: usize, k: usize) -> usize {
    if k == 0 {
        return 1;
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

pub fn build_fock_with_cap(grid: &ModeGrid, n_max: usize, cap: usize) -> Result<FockBasis> {
    if n_max < 1 {
        return Err(SrgError::InvalidParameter("n_max must be at least 1".into()));
    }
    let m = grid.len();
    let dim = fock_dimension(m, n_max);
    if dim > cap {
        return Err(SrgError::DimensionCap { dim, cap });
    }
    Ok(build_fock_unchecked(grid, n_max))
}

/// Basis without the `n_max ≥ 1` and dimension checks (the vacuum-only space
/// `n_max = 0` is used for contracted expectations).
pub(crate) fn build_fock_unchecked(grid: &ModeGrid, n_max: usize) -> FockBasis {
    let m = grid.len();
    let mut states: Vec<Vec<u8>> = Vec::new();
    for n in 0..=n_max {
        let mut tuple = vec![0usize; n];
        push_multisets(&mut states, &mut tuple, 0, 0, m);
    }
    let index: HashMap<Vec<u8>, usize> =
        states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let hf = states
        .iter()
        .map(|s| s.iter().zip(&grid.modes).map(|(&n, md)| n as f64 * md.k).sum())
        .collect();
    let number = states.iter().map(|s| s.iter().map(|&n| n as usize).sum()).collect();

    let dim = states.len();
    let mut up = vec![NONE; dim * m];
    let mut down = vec![NONE; dim * m];
    for (i, s) in states.iter().enumerate() {
        for mode in 0..m {
            let mut t = s.clone();
            t[mode] += 1;
            if let Some(&j) = index.get(&t) {
                up[i * m + mode] = j;
            }
            if s[mode] > 0 {
                let mut t = s.clone();
                t[mode] -= 1;
                down[i * m + mode] = index[&t];
            }
        }
    }
    FockBasis { grid: grid.clone(), n_max, states, hf, number, index, up, down }
}

fn push_multisets(out: &mut Vec<Vec<u8>>, tuple: &mut Vec<usize>, pos: usize, start: usize, m: usize) {
    if pos == tuple.len() {
        let mut occ = vec![0u8; m];
        for &t in tuple.iter() {
            occ[t] += 1;
        }
        out.push(occ);
        return;
    }
    for mode in start..m {
        tuple[pos] = mode;
        push_multisets(out, tuple, pos + 1, mode, m);
    }
}

impl FockBasis {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn modes(&self) -> usize {
        self.grid.len()
    }

    pub fn index_of(&self, occupation: &[u8]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    /// `a*_mode |state⟩ = amp |target⟩`, or `None` above the cutoff.
    #[inline]
    pub fn create(&self, state: usize, mode: usize) -> Option<(usize, f64)> {
        let j = self.up[state * self.modes() + mode];
        if j == NONE {
            None
        } else {
            Some((j, ((self.states[state][mode] as f64) + 1.0).sqrt()))
        }
    }

    /// `a_mode |state⟩ = amp |target⟩`, or `None` if the mode is empty.
    #[inline]
    pub fn annihilate(&self, state: usize, mode: usize) -> Option<(usize, f64)> {
        let j = self.down[state * self.modes() + mode];
        if j == NONE {
            None
        } else {
            Some((j, (self.states[state][mode] as f64).sqrt()))
        }
    }

    /// Number of bosons in the given shell.
    pub fn shell_occupation(&self, state: usize, shell: usize) -> usize {
        let a = self.grid.angular_nodes;
        self.states[state][shell * a..(shell + 1) * a].iter().map(|&n| n as usize).sum()
    }

    /// Deepest occupied shell, `None` for the vacuum.
    pub fn deepest_shell(&self, state: usize) -> Option<usize> {
        let a = self.grid.angular_nodes;
        self.states[state].iter().rposition(|&n| n > 0).map(|m| m / a)
    }

    /// Every boson moved from shell `j` to `j − 1`; `None` if shell 0 is occupied.
    pub fn shift_down(&self, state: usize) -> Option<usize> {
        let a = self.grid.angular_nodes;
        let s = &self.states[state];
        if s[..a].iter().any(|&n| n > 0) {
            return None;
        }
        let mut t = vec![0u8; s.len()];
        t[..s.len() - a].copy_from_slice(&s[a..]);
        self.index_of(&t)
    }

    /// Every boson moved from shell `j` to `j + 1`; `None` if the deepest shell is occupied.
    pub fn shift_up(&self, state: usize) -> Option<usize> {
        let a = self.grid.angular_nodes;
        let s = &self.states[state];
        let n = s.len();
        if s[n - a..].iter().any(|&x| x > 0) {
            return None;
        }
        let mut t = vec![0u8; n];
        t[a..].copy_from_slice(&s[..n - a]);
        self.index_of(&t)
    }

    pub fn is_reduced(&self, state: usize) -> bool {
        self.hf[state] <= 1.0 + RED_TOL
    }
}

pub fn creation_op(basis: &FockBasis, mode: usize) -> CMat {
    assert!(mode < basis.modes(), "mode {mode} out of range");
    let d = basis.dim();
    let mut m = CMat::zeros(d, d);
    for i in 0..d {
        if let Some((j, amp)) = basis.create(i, mode) {
            m[(j, i)] = re(amp);
        }
    }
    m
}

pub fn annihilation_op(basis: &FockBasis, mode: usize) -> CMat {
    creation_op(basis, mode).adjoint()
}

/// `Σ_m √w_m G(k_m) ⊗ a*_m` on atom ⊗ Fock. Each value is an atom matrix
/// (use 1×1 matrices for a scalar field).
pub fn field_creation(basis: &FockBasis, values: &[CMat]) -> Result<CMat> {
    if values.len() != basis.modes() {
        return Err(SrgError::InvalidParameter(format!(
            "field has {} values for {} modes",
            values.len(),
            basis.modes()
        )));
    }
    let d = values.first().map(|v| v.nrows()).unwrap_or(1);
    let nf = basis.dim();
    let mut out = CMat::zeros(d * nf, d * nf);
    for (mode, g) in values.iter().enumerate() {
        let sw = basis.grid.modes[mode].weight.sqrt();
        for f in 0..nf {
            if let Some((t, amp)) = basis.create(f, mode) {
                let coef = sw * amp;
                for a in 0..d {
                    for b in 0..d {
                        let x = g[(a, b)];
                        if x != ZERO {
                            out[(a * nf + t, b * nf + f)] += x * coef;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `Σ_m √w_m G(k_m)^* ⊗ a_m`, the adjoint of [`field_creation`].
pub fn field_annihilation(basis: &FockBasis, values: &[CMat]) -> Result<CMat> {
    Ok(field_creation(basis, values)?.adjoint())
}

/// `a*(G) + a(G)` with mode coefficients `√w G(k)`.
pub fn smeared_field(basis: &FockBasis, values: &[CMat]) -> Result<CMat> {
    let c = field_creation(basis, values)?;
    let a = c.adjoint();
    Ok(c + a)
}

pub fn hf_op(basis: &FockBasis) -> CMat {
    crate::linalg::diag_real(&basis.hf)
}

pub fn reduced_projection(basis: &FockBasis) -> CMat {
    let d: Vec<f64> = (0..basis.dim()).map(|i| if basis.is_reduced(i) { 1.0 } else { 0.0 }).collect();
    crate::linalg::diag_real(&d)
}

/// Identity on the atom factor tensored with a Fock operator.
pub fn lift_fock(atom_dim: usize, op: &CMat) -> CMat {
    kron(&CMat::identity(atom_dim, atom_dim), op)
}

/// The dilation on the full basis together with its leakage bookkeeping.
#[derive(Clone, Debug)]
pub struct Dilation {
    /// `Γ_ρ`: column `i` is the image of basis state `i`.
    pub gamma: CMat,
    /// States with no shell-0 boson (where `Γ_ρ` acts isometrically).
    pub domain: Vec<bool>,
    /// States with a deepest-shell boson: `Γ_ρ^*` has no image for them.
    pub leakage: Vec<bool>,
}

impl Dilation {
    pub fn adjoint(&self) -> CMat {
        self.gamma.adjoint()
    }

    /// Norm of the part of `v` that `Γ_ρ^*` cannot represent.
    pub fn leakage_norm(&self, v: &CVec) -> f64 {
        v.iter()
            .zip(&self.leakage)
            .filter(|(_, &l)| l)
            .map(|(z, _)| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

pub fn dilation_op(basis: &FockBasis) -> Dilation {
    let d = basis.dim();
    let mut gamma = CMat::zeros(d, d);
    let mut domain = vec![false; d];
    for i in 0..d {
        if let Some(j) = basis.shift_down(i) {
            gamma[(j, i)] = re(1.0);
            domain[i] = true;
        }
    }
    let deepest = basis.grid.shells - 1;
    let leakage = (0..d).map(|i| basis.shell_occupation(i, deepest) > 0).collect();
    Dilation { gamma, domain, leakage }
}

/// Reduced space `H_f ≤ 1` restricted to bosons in shells `< active_shells`.
///
/// After `n` renormalization steps only `shells − n` shells carry states: the
/// dilation moves shell `j+1` onto shell `j` and nothing moves into the last one.
#[derive(Clone, Debug)]
pub struct Sector {
    pub active_shells: usize,
    /// Global basis indices, vacuum first.
    pub states: Vec<usize>,
    pub hf: Vec<f64>,
    local: HashMap<usize, usize>,
}

impl Sector {
    pub fn reduced(basis: &FockBasis, active_shells: usize) -> Sector {
        let states: Vec<usize> = (0..basis.dim())
            .filter(|&i| basis.is_reduced(i))
            .filter(|&i| basis.deepest_shell(i).map_or(true, |s| s < active_shells))
            .collect();
        let hf = states.iter().map(|&i| basis.hf[i]).collect();
        let local = states.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        Sector { active_shells, states, hf, local }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.local.get(&global).copied()
    }

    /// Distinct `H_f` eigenvalues, ascending.
    pub fn distinct_hf(&self) -> Vec<f64> {
        let mut v = self.hf.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
        v
    }
}

/// For each state of `coarse` (level `n+1`), the local index in `fine` (level
/// `n`) of its preimage under `Γ_ρ`, i.e. `Γ_ρ^*` as an index map.
pub fn pullback(basis: &FockBasis, coarse: &Sector, fine: &Sector) -> Result<Vec<usize>> {
    coarse
        .states
        .iter()
        .map(|&g| {
            basis
                .shift_up(g)
                .and_then(|u| fine.local_index(u))
                .ok_or_else(|| {
                    SrgError::InsufficientShells(format!(
                        "state {g} has no preimage with {} active shells",
                        fine.active_shells
                    ))
                })
        })
        .collect()
}
