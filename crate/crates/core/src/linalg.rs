//! Dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Result, SrgError};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Condition numbers above this are treated as numerically singular.
pub const COND_LIMIT: f64 = 1e12;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Spectral (operator 2-) norm.
pub fn op_norm(m: &CMat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Smallest singular value; 0 for an empty matrix.
pub fn sigma_min(m: &CMat) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Maximum absolute column sum.
pub fn norm_1(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Upper bound on the operator norm that is exact whenever the result is below
/// `threshold`: the Frobenius norm is tried first and the SVD only when needed.
pub fn op_norm_bounded(m: &CMat, threshold: f64) -> (f64, bool) {
    let f = frobenius(m);
    if f < threshold {
        (f, false)
    } else {
        (op_norm(m), true)
    }
}

/// LU inverse together with the 1-norm condition number.
pub fn inverse_cond(m: &CMat) -> Result<(CMat, f64)> {
    if m.nrows() == 0 {
        return Ok((CMat::zeros(0, 0), 1.0));
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(SrgError::IllConditioned(f64::INFINITY))?;
    let cond = norm_1(m) * norm_1(&inv);
    if !cond.is_finite() {
        return Err(SrgError::IllConditioned(f64::INFINITY));
    }
    Ok((inv, cond))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn herm_eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMat::zeros(m.nrows(), order.len());
    for (j, &k) in order.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(k));
    }
    (vals, vecs)
}

/// All eigenvalues of a general complex matrix, read off the Schur form.
pub fn eigenvalues(m: &CMat) -> Vec<C64> {
    let (_, t) = nalgebra::Schur::new(m.clone()).unpack();
    (0..t.nrows()).map(|k| t[(k, k)]).collect()
}

/// Unit vector spanning the (numerical) kernel: the right singular vector of the
/// smallest singular value.
pub fn null_vector(m: &CMat) -> CVec {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| k)
        .unwrap_or(0);
    v_t.row(k).adjoint()
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let x = a[(i, j)];
            if x == ZERO {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = x * b[(p, q)];
                }
            }
        }
    }
    out
}

pub fn submatrix(m: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn diag_real(d: &[f64]) -> CMat {
    let mut m = CMat::zeros(d.len(), d.len());
    for (k, &x) in d.iter().enumerate() {
        m[(k, k)] = re(x);
    }
    m
}

pub fn diag(d: &[C64]) -> CMat {
    let mut m = CMat::zeros(d.len(), d.len());
    for (k, &x) in d.iter().enumerate() {
        m[(k, k)] = x;
    }
    m
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// `‖A − A^*‖`.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    op_norm(&(m - m.adjoint()))
}

pub fn vec_norm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `|⟨a, b⟩| / (‖a‖‖b‖)`.
pub fn overlap(a: &CVec, b: &CVec) -> f64 {
    let na = vec_norm(a);
    let nb = vec_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dotc(b).norm() / (na * nb)
}
