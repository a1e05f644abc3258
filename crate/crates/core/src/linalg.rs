//! Dense real matrix kernel.
//!
//! Everything here works on small dense matrices (dimension well under 100
//! after lifting). Vectorization follows the row-stacking convention:
//! `vec_row([[a, b], [c, d]]) = (a, b, c, d)`, and `svec` lists the upper
//! triangle row by row, diagonal included.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const DECOMP_EPS: f64 = 5.0 * f64::EPSILON;
// nalgebra's SVD occasionally returns factors that do not reproduce a
// rank-deficient input; which tolerance triggers it depends on the matrix.
// Every factorization is checked and retried.
const SVD_EPS: [f64; 4] = [DECOMP_EPS, f64::EPSILON, 1e-14, 1e-13];
const SVD_CHECK_TOL: f64 = 1e-11;
const SVD_FALLBACK_TOL: f64 = 1e-7;
const MAX_SWEEPS: usize = 10_000;

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Row-stacking vectorization.
pub fn vec_row(a: &Matrix) -> Vector {
    let (rows, cols) = a.shape();
    Vector::from_iterator(
        rows * cols,
        (0..rows).flat_map(|i| (0..cols).map(move |j| a[(i, j)])),
    )
}

/// Inverse of [`vec_row`].
pub fn mat_from_vec(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "vector of length {} cannot fill a {rows}x{cols} matrix",
            v.len()
        )));
    }
    Ok(Matrix::from_row_slice(rows, cols, v))
}

/// Number of free entries of an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(k, s)`, `k <= s`, in the `svec` ordering.
pub fn svec_index(n: usize, k: usize, s: usize) -> usize {
    debug_assert!(k <= s && s < n);
    upper_index(n, k, s)
}

/// Largest absolute difference between `a` and its transpose.
pub fn asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let skew = asymmetry(a);
    if skew > 1e-10 * a.norm().max(1.0) {
        return Err(Error::NotSymmetric(skew));
    }
    Ok(())
}

/// Upper-triangle vectorization of a symmetric matrix.
pub fn svec(x: &Matrix) -> Result<Vector> {
    check_symmetric(x)?;
    let n = x.nrows();
    Ok(Vector::from_iterator(
        svec_len(n),
        (0..n).flat_map(|k| (k..n).map(move |s| x[(k, s)])),
    ))
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> Result<Matrix> {
    if v.len() != svec_len(n) {
        return Err(Error::Dimension(format!(
            "svec of length {} does not match dimension {n}",
            v.len()
        )));
    }
    let mut x = Matrix::zeros(n, n);
    let mut idx = 0;
    for k in 0..n {
        for s in k..n {
            x[(k, s)] = v[idx];
            x[(s, k)] = v[idx];
            idx += 1;
        }
    }
    Ok(x)
}

/// The 0/1 matrix `H` with `vec_row(X) = H * svec(X)` for symmetric `X`,
/// repeated block-diagonally over `blocks` copies.
#[derive(Debug, Clone)]
pub struct DuplicationMap {
    pub n: usize,
    pub blocks: usize,
    pub h: Matrix,
}

impl DuplicationMap {
    /// `phi(X) = H psi(X)` for a tuple of symmetric matrices.
    pub fn apply(&self, psi: &Vector) -> Vector {
        &self.h * psi
    }
}

pub fn build_dup(n: usize, blocks: usize) -> DuplicationMap {
    let n2 = n * n;
    let m = svec_len(n);
    let mut h = Matrix::zeros(n2 * blocks, m * blocks);
    for b in 0..blocks {
        for k in 0..n {
            for s in 0..n {
                let (lo, hi) = if k <= s { (k, s) } else { (s, k) };
                h[(b * n2 + k * n + s, b * m + upper_index(n, lo, hi))] = 1.0;
            }
        }
    }
    DuplicationMap { n, blocks, h }
}

// Rows before `k` contribute n, n-1, ..., n-k+1 entries.
fn upper_index(n: usize, k: usize, s: usize) -> usize {
    k * n - k * (k + 1) / 2 + s
}

pub(crate) type Svd = SVD<f64, nalgebra::Dyn, nalgebra::Dyn>;

/// Relative reconstruction error, or infinity when the factors are not
/// orthonormal.
fn svd_error(a: &Matrix, d: &Svd) -> f64 {
    let (Some(u), Some(vt)) = (d.u.as_ref(), d.v_t.as_ref()) else {
        return f64::INFINITY;
    };
    let k = d.singular_values.len();
    let id = Matrix::identity(k, k);
    if (u.transpose() * u - &id).amax() > SVD_CHECK_TOL || (vt * vt.transpose() - &id).amax() > SVD_CHECK_TOL {
        return f64::INFINITY;
    }
    let rec = u * Matrix::from_diagonal(&d.singular_values) * vt;
    (rec - a).norm() / a.norm().max(f64::MIN_POSITIVE)
}

/// Thin SVD with sorted singular values, verified against the input.
/// Tries both `A` and `A^T` at each tolerance; falls back to the most
/// accurate candidate when none meets the strict check.
pub(crate) fn svd(a: &Matrix) -> Result<Svd> {
    let mut best: Option<(f64, Svd)> = None;
    for eps in SVD_EPS {
        for transposed in [false, true] {
            let input = if transposed { a.transpose() } else { a.clone() };
            let Some(mut d) = SVD::try_new(input, true, true, eps, MAX_SWEEPS) else {
                continue;
            };
            if transposed {
                let (u, vt) = (d.u.take(), d.v_t.take());
                d.u = vt.map(|m| m.transpose());
                d.v_t = u.map(|m| m.transpose());
            }
            let err = svd_error(a, &d);
            if err <= SVD_CHECK_TOL {
                return Ok(d);
            }
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, d));
            }
        }
    }
    match best {
        Some((err, d)) if err <= SVD_FALLBACK_TOL => Ok(d),
        _ => Err(Error::NoConvergence("SVD")),
    }
}

pub fn singular_values(a: &Matrix) -> Result<Vector> {
    if a.is_empty() {
        return Ok(Vector::zeros(0));
    }
    Ok(svd(a)?.singular_values)
}

/// Default numerical-rank threshold relative to the largest singular value.
/// Looser than `max(m, n) * eps` so that matrices that are rank deficient
/// only up to rounding (products, similarity transforms) are classified
/// correctly.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

fn default_tol(sigma_max: f64) -> f64 {
    DEFAULT_RANK_TOL * sigma_max
}

/// Numerical rank. `tol` is relative to the largest singular value; `None`
/// selects [`DEFAULT_RANK_TOL`].
pub fn rank(a: &Matrix, tol: Option<f64>) -> Result<usize> {
    let sv = singular_values(a)?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    let cutoff = match tol {
        Some(t) => t * smax,
        None => default_tol(smax),
    };
    Ok(sv.iter().filter(|&&s| s > cutoff).count())
}

/// Moore-Penrose pseudoinverse via the SVD.
pub fn pinv(e: &Matrix) -> Result<Matrix> {
    let (m, n) = e.shape();
    if e.is_empty() {
        return Ok(Matrix::zeros(n, m));
    }
    let dec = svd(e)?;
    let smax = dec.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = default_tol(smax);
    let u = dec.u.as_ref().expect("u requested");
    let vt = dec.v_t.as_ref().expect("v requested");
    let mut out = Matrix::zeros(n, m);
    for (k, &s) in dec.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    Ok(out)
}

/// Orthonormal basis of `{x : A x = 0}` as columns. Returns an `n x 0`
/// matrix when `A` has full column rank. `tol` is relative to the largest
/// singular value.
pub fn null_basis(a: &Matrix, tol: Option<f64>) -> Result<Matrix> {
    let (m, n) = a.shape();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    // Pad with zero rows so the SVD returns a full n x n right factor.
    let padded = if m < n {
        let mut p = Matrix::zeros(n, n);
        p.rows_mut(0, m).copy_from(a);
        p
    } else {
        a.clone()
    };
    let dec = svd(&padded)?;
    let smax = dec.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = match tol {
        Some(t) => t * smax,
        None => default_tol(smax),
    };
    let vt = dec.v_t.as_ref().expect("v requested");
    let kernel: Vec<usize> = (0..n)
        .filter(|&k| dec.singular_values[k] <= cutoff)
        .collect();
    let mut basis = Matrix::zeros(n, kernel.len());
    for (c, &k) in kernel.iter().enumerate() {
        basis.set_column(c, &vt.row(k).transpose());
    }
    Ok(basis)
}

/// Orthonormal basis of the column space of `a`.
pub fn range_basis(a: &Matrix, tol: Option<f64>) -> Result<Matrix> {
    let (m, n) = a.shape();
    let padded = if n < m {
        let mut p = Matrix::zeros(m, m);
        p.columns_mut(0, n).copy_from(a);
        p
    } else {
        a.clone()
    };
    let dec = svd(&padded)?;
    let smax = dec.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(Matrix::zeros(m, 0));
    }
    let cutoff = match tol {
        Some(t) => t * smax,
        None => default_tol(smax),
    };
    let u = dec.u.as_ref().expect("u requested");
    let keep: Vec<usize> = (0..dec.singular_values.len())
        .filter(|&k| dec.singular_values[k] > cutoff)
        .collect();
    let mut basis = Matrix::zeros(m, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &u.column(k));
    }
    Ok(basis)
}

/// Smallest singular value.
pub fn sigma_min(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eig_sym(s: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(s)?;
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let sym = symmetric_part(s);
    let dec = SymmetricEigen::try_new(sym, DECOMP_EPS, MAX_SWEEPS)
        .ok_or(Error::NoConvergence("symmetric eigensolver"))?;
    let mut vals: Vec<f64> = dec.eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    Ok(vals)
}

/// Largest and smallest eigenvalue of the symmetric part of `s`.
pub fn extreme_eigs(s: &Matrix) -> Result<(f64, f64)> {
    if s.is_empty() {
        return Ok((f64::INFINITY, f64::NEG_INFINITY));
    }
    let vals = eig_sym(&symmetric_part(s))?;
    Ok((vals[0], vals[vals.len() - 1]))
}

pub fn symmetric_part(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Complex spectrum with its abscissa (max real part) and radius (max modulus).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex<f64>>,
    pub abscissa: f64,
    pub radius: f64,
}

impl Spectrum {
    pub fn from_eigenvalues(mut eigenvalues: Vec<Complex<f64>>) -> Self {
        eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let abscissa = eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Spectrum {
            eigenvalues,
            abscissa,
            radius,
        }
    }
}

/// Full complex spectrum of a square matrix (Hessenberg + shifted QR).
pub fn eig_general(m: &Matrix) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(Spectrum::from_eigenvalues(Vec::new()));
    }
    let schur = Schur::try_new(m.clone(), DECOMP_EPS, MAX_SWEEPS)
        .ok_or(Error::NoConvergence("Schur decomposition"))?;
    Ok(Spectrum::from_eigenvalues(
        schur.complex_eigenvalues().iter().cloned().collect(),
    ))
}

pub fn det(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    m.clone().lu().determinant()
}

pub fn inverse(m: &Matrix, what: &'static str) -> Result<Matrix> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    m.clone().try_inverse().ok_or(Error::Singular(what))
}

pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Degree of `s -> det(sE - A)`, or `NonRegular` when it vanishes identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PencilDegree {
    Degree(usize),
    NonRegular,
}

impl PencilDegree {
    pub fn degree(self) -> Option<usize> {
        match self {
            PencilDegree::Degree(d) => Some(d),
            PencilDegree::NonRegular => None,
        }
    }
}

const DEGREE_COEFF_TOL: f64 = 1e-8;
const REGULARITY_TOL: f64 = 1e-11;

/// Ratio `||A|| / ||E||` used to put sample points on the scale of the pencil.
pub fn pencil_scale(e: &Matrix, a: &Matrix) -> f64 {
    let (ne, na) = (e.norm(), a.norm());
    if ne > 0.0 && na > 0.0 {
        na / ne
    } else {
        1.0
    }
}

/// Degree of `det(sE - A)` by sampling the determinant at `n + 1`
/// Chebyshev points and solving the Vandermonde system for the coefficients.
pub fn pencil_degree(e: &Matrix, a: &Matrix) -> Result<PencilDegree> {
    if !e.is_square() || e.shape() != a.shape() {
        return Err(Error::Dimension(format!(
            "pencil needs equal square matrices, got {:?} and {:?}",
            e.shape(),
            a.shape()
        )));
    }
    let n = e.nrows();
    let scale = pencil_scale(e, a);
    let nodes: Vec<f64> = (0..=n)
        .map(|k| 2.0 * ((2 * k + 1) as f64 * std::f64::consts::PI / (2 * (n + 1)) as f64).cos())
        .collect();

    // Regularity: sE - A must be nonsingular at some sample point.
    let mut best_ratio = 0.0f64;
    let mut values = Vec::with_capacity(n + 1);
    for &u in &nodes {
        let pencil = e * (scale * u) - a;
        let sv = singular_values(&pencil)?;
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smax > 0.0 {
            best_ratio = best_ratio.max(smin / smax);
        }
        values.push(det(&pencil));
    }
    if n > 0 && best_ratio <= REGULARITY_TOL {
        return Ok(PencilDegree::NonRegular);
    }

    let vander = Matrix::from_fn(n + 1, n + 1, |i, j| nodes[i].powi(j as i32));
    let rhs = Vector::from_vec(values);
    let coeffs = vander
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("Vandermonde system"))?;
    let cmax = coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
    if cmax == 0.0 {
        return Ok(PencilDegree::NonRegular);
    }
    let degree = (0..=n)
        .rev()
        .find(|&j| coeffs[j].abs() > DEGREE_COEFF_TOL * cmax)
        .unwrap_or(0);
    Ok(PencilDegree::Degree(degree))
}
