//! Restricted-equivalence forms and impulse/causality classification.
//!
//! Under `rank [E C(i)] = rank E` for every mode, a single pair of
//! nonsingular matrices `(M, N)` brings every mode to
//!
//! ```text
//! M E N = [I 0; 0 0],  M A(i) N = [A11 A12; A21 A22],  M C(i) N = [C11 C12; 0 0]
//! ```
//!
//! and the mode is impulse-free (causal, in discrete time) exactly when
//! `A22` is invertible. The slow subsystem on `xi1` (first block of `N^-1 x`)
//! is obtained from the Schur complement of `A22`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, PencilDegree};
use crate::model::Model;

const TRANSFORM_TOL: f64 = 1e-9;
const FAST_BLOCK_TOL: f64 = 1e-8;
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ModeBlocks {
    pub a11: Matrix,
    pub a12: Matrix,
    pub a21: Matrix,
    pub a22: Matrix,
    pub c11: Matrix,
    pub c12: Matrix,
}

#[derive(Debug, Clone)]
pub struct RestrictedForm {
    /// Left transform `M`.
    pub left: Matrix,
    /// Right transform `N`.
    pub right: Matrix,
    pub rank: usize,
    pub modes: Vec<ModeBlocks>,
}

fn scale_of(parts: &[&Matrix]) -> f64 {
    parts.iter().map(|m| m.norm()).product::<f64>().max(1.0)
}

/// Common restricted form from the SVD of `E`: `M = diag(S_r^-1, I) U^T`, `N = V`.
pub fn restricted_form(model: &Model) -> Result<RestrictedForm> {
    let n = model.n();
    let svd = linalg::svd(&model.e)?;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v requested");

    // Order singular values descending; nalgebra does not promise an order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let r = model.rank_e()?;

    let mut left = Matrix::zeros(n, n);
    let mut right = Matrix::zeros(n, n);
    for (pos, &k) in order.iter().enumerate() {
        let s = svd.singular_values[k];
        let w = if pos < r { 1.0 / s } else { 1.0 };
        left.set_row(pos, &(u.column(k).transpose() * w));
        right.set_column(pos, &vt.row(k).transpose());
    }
    RestrictedForm::from_transforms(model, left, right, r)
}

impl RestrictedForm {
    /// Builds the block partition for a caller-supplied `(M, N)`, checking
    /// both defining invariants.
    pub fn from_transforms(model: &Model, left: Matrix, right: Matrix, rank: usize) -> Result<Self> {
        let n = model.n();
        if left.shape() != (n, n) || right.shape() != (n, n) || rank > n {
            return Err(Error::Dimension("transforms must be n x n with rank <= n".into()));
        }
        if linalg::rank(&left, Some(RANK_TOL))? < n || linalg::rank(&right, Some(RANK_TOL))? < n {
            return Err(Error::Singular("restricted-form transform"));
        }
        let mut target = Matrix::zeros(n, n);
        for k in 0..rank {
            target[(k, k)] = 1.0;
        }
        let men = &left * &model.e * &right;
        let residual = (&men - &target).norm();
        if residual > TRANSFORM_TOL * scale_of(&[&left, &model.e, &right]) {
            return Err(Error::InvalidModel(format!(
                "M E N differs from diag(I_{rank}, 0) by {residual:.3e}"
            )));
        }
        let f = n - rank;
        let mut modes = Vec::with_capacity(model.modes());
        for (i, (a, c)) in model.a.iter().zip(&model.c).enumerate() {
            let ma = &left * a * &right;
            let mc = &left * c * &right;
            let bottom = mc.rows(rank, f).norm();
            if bottom > TRANSFORM_TOL * scale_of(&[&left, c, &right]) {
                return Err(Error::AssumptionViolated { mode: i + 1 });
            }
            modes.push(ModeBlocks {
                a11: ma.view((0, 0), (rank, rank)).into_owned(),
                a12: ma.view((0, rank), (rank, f)).into_owned(),
                a21: ma.view((rank, 0), (f, rank)).into_owned(),
                a22: ma.view((rank, rank), (f, f)).into_owned(),
                c11: mc.view((0, 0), (rank, rank)).into_owned(),
                c12: mc.view((0, rank), (rank, f)).into_owned(),
            });
        }
        Ok(RestrictedForm {
            left,
            right,
            rank,
            modes,
        })
    }

    pub fn n(&self) -> usize {
        self.left.nrows()
    }

    /// Whether the fast block of `mode` is numerically invertible.
    pub fn fast_block_invertible(&self, mode: usize) -> Result<bool> {
        let a22 = &self.modes[mode].a22;
        if a22.is_empty() {
            return Ok(true);
        }
        // Relative to the whole transformed mode matrix: a 1 x 1 block is
        // always well conditioned relative to itself, even at rounding level.
        let b = &self.modes[mode];
        let scale = [&b.a11, &b.a12, &b.a21, a22]
            .iter()
            .map(|m| m.norm_squared())
            .sum::<f64>()
            .sqrt();
        let sv = linalg::singular_values(a22)?;
        Ok(scale > 0.0 && sv.min() > FAST_BLOCK_TOL * scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    /// `E` nonsingular: every mode is trivially impulse-free.
    NonsingularDescriptor,
    /// Both the degree test and the fast-block test hold.
    DegreeAndFastBlock,
    /// Both tests fail: impulsive (continuous) or non-causal (discrete).
    Impulsive,
    NonRegular,
    /// The two tests disagree; numerical failure.
    ClauseMismatch,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeStructure {
    pub regular: bool,
    pub impulse_free: bool,
    pub pencil_degree: Option<usize>,
    pub fast_block_invertible: bool,
    pub mechanism: Mechanism,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureVerdict {
    pub rank_e: usize,
    pub modes: Vec<ModeStructure>,
    pub diagnostics: Vec<String>,
}

impl StructureVerdict {
    pub fn impulse_free(&self) -> bool {
        self.modes.iter().all(|m| m.impulse_free)
    }

    pub fn consistent(&self) -> bool {
        self.modes.iter().all(|m| m.mechanism != Mechanism::ClauseMismatch)
    }
}

/// Regularity and impulse-freeness per mode, cross-checking the degree
/// criterion `deg det(sE - A(i)) = rank E` against invertibility of `A22(i)`.
pub fn impulse_check(model: &Model, rf: &RestrictedForm) -> Result<StructureVerdict> {
    let r = rf.rank;
    let n = model.n();
    let mut modes = Vec::with_capacity(model.modes());
    let mut diagnostics = Vec::new();
    for (i, a) in model.a.iter().enumerate() {
        let degree = linalg::pencil_degree(&model.e, a)?;
        let fast_ok = rf.fast_block_invertible(i)?;
        let regular = degree != PencilDegree::NonRegular;
        let degree_ok = degree == PencilDegree::Degree(r);
        let mechanism = if r == n {
            Mechanism::NonsingularDescriptor
        } else if !regular && !fast_ok {
            Mechanism::NonRegular
        } else if degree_ok && fast_ok {
            Mechanism::DegreeAndFastBlock
        } else if !degree_ok && !fast_ok {
            Mechanism::Impulsive
        } else {
            diagnostics.push(format!(
                "mode {}: degree test ({:?}) and fast-block test ({}) disagree",
                i + 1,
                degree,
                fast_ok
            ));
            Mechanism::ClauseMismatch
        };
        let impulse_free = match mechanism {
            Mechanism::NonsingularDescriptor | Mechanism::DegreeAndFastBlock => true,
            Mechanism::ClauseMismatch => fast_ok && regular,
            _ => false,
        };
        modes.push(ModeStructure {
            regular,
            impulse_free,
            pencil_degree: degree.degree(),
            fast_block_invertible: fast_ok,
            mechanism,
        });
    }
    Ok(StructureVerdict {
        rank_e: r,
        modes,
        diagnostics,
    })
}

/// Reduced dynamics on `xi1` for every mode.
#[derive(Debug, Clone)]
pub struct SlowSubsystem {
    pub rank: usize,
    /// `A11 - A12 A22^-1 A21`.
    pub a1: Vec<Matrix>,
    /// `C11 - C12 A22^-1 A21`.
    pub c1: Vec<Matrix>,
    /// `-A22^-1 A21`: the algebraic part `xi2 = K xi1`.
    pub gain: Vec<Matrix>,
    /// `N [I; K]`: maps `xi1` to the full state in each mode.
    pub reconstruction: Vec<Matrix>,
    /// First `r` rows of `N^-1`: maps a state to its slow coordinates.
    pub slow_projection: Matrix,
}

pub fn slow_subsystem(rf: &RestrictedForm) -> Result<SlowSubsystem> {
    let n = rf.n();
    let r = rf.rank;
    let f = n - r;
    let right_inv = linalg::inverse(&rf.right, "right transform N")?;
    let mut out = SlowSubsystem {
        rank: r,
        a1: Vec::new(),
        c1: Vec::new(),
        gain: Vec::new(),
        reconstruction: Vec::new(),
        slow_projection: right_inv.rows(0, r).into_owned(),
    };
    for (i, b) in rf.modes.iter().enumerate() {
        if !rf.fast_block_invertible(i)? {
            return Err(Error::Impulsive { mode: i + 1 });
        }
        let k = if f == 0 {
            Matrix::zeros(0, r)
        } else {
            -b.a22
                .clone()
                .lu()
                .solve(&b.a21)
                .ok_or(Error::Impulsive { mode: i + 1 })?
        };
        out.a1.push(&b.a11 + &b.a12 * &k);
        out.c1.push(&b.c11 + &b.c12 * &k);
        let mut stacked = Matrix::zeros(n, r);
        stacked.view_mut((0, 0), (r, r)).fill_with_identity();
        stacked.view_mut((r, 0), (f, r)).copy_from(&k);
        out.reconstruction.push(&rf.right * stacked);
        out.gain.push(k);
    }
    Ok(out)
}

/// Finite part of a regular pencil.
#[derive(Debug, Clone)]
pub struct SlowPart {
    /// Spectrum of `j` = finite generalized eigenvalues of `(E, A)`.
    pub j: Matrix,
    pub dim: usize,
    pub shift: f64,
}

const SHIFT_CANDIDATES: [f64; 9] = [0.0, 1.0, -1.0, 2.0, -2.0, 5.0, -5.0, 10.0, -10.0];
const SHIFT_COND_TOL: f64 = 1e-10;
const POWER_RANK_TOL: f64 = 1e-9;

/// Extracts the slow dynamics of a regular pencil `(E, A)`.
///
/// With `W = (aE - A)^-1 E`, a finite eigenvalue `s` of the pencil maps to
/// the eigenvalue `1 / (a - s)` of `W` and infinite eigenvalues map to 0.
/// The nonzero part of `W` lives on `range(W^k)` once the rank of the
/// powers stabilizes.
pub fn pencil_slow_part(e: &Matrix, a: &Matrix) -> Result<SlowPart> {
    if linalg::pencil_degree(e, a)? == PencilDegree::NonRegular {
        return Err(Error::NonRegularPencil);
    }
    let n = e.nrows();
    let scale = linalg::pencil_scale(e, a);
    let (shift, shifted) = SHIFT_CANDIDATES
        .iter()
        .map(|c| c * scale)
        .map(|alpha| (alpha, e * alpha - a))
        .find(|(_, m)| conditioned(m))
        .ok_or(Error::ShiftExhausted)?;
    let w = shifted
        .lu()
        .solve(e)
        .ok_or(Error::Singular("shifted pencil"))?;

    let mut power = w.clone();
    let mut current = linalg::rank(&power, Some(POWER_RANK_TOL))?;
    for _ in 0..n {
        let mut next_power = &w * &power;
        // Only the range matters; keep the entries O(1).
        let norm = next_power.norm();
        if norm > 0.0 {
            next_power /= norm;
        }
        let next = linalg::rank(&next_power, Some(POWER_RANK_TOL))?;
        if next == current {
            break;
        }
        power = next_power;
        current = next;
    }
    let basis = linalg::range_basis(&power, Some(POWER_RANK_TOL))?;
    let dim = basis.ncols();
    if dim == 0 {
        return Ok(SlowPart {
            j: Matrix::zeros(0, 0),
            dim,
            shift,
        });
    }
    let restricted = basis.transpose() * &w * &basis;
    let inv = linalg::inverse(&restricted, "restricted W")?;
    let j = Matrix::identity(dim, dim) * shift - inv;
    Ok(SlowPart { j, dim, shift })
}

fn conditioned(m: &Matrix) -> bool {
    let Ok(sv) = linalg::singular_values(m) else {
        return false;
    };
    let smax = sv.max();
    smax > 0.0 && sv.min() > SHIFT_COND_TOL * smax
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kind;

    fn mat(r: usize, c: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(r, c, v)
    }

    fn example1() -> Model {
        Model::new(
            Kind::Continuous,
            mat(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            vec![mat(2, 2, &[-0.5, 0.7, 0.4, 0.5]), mat(2, 2, &[-0.2, 0.1, 0.3, 0.2])],
            vec![mat(2, 2, &[0.4, 0.2, 0.0, 0.0]), mat(2, 2, &[0.3, 0.2, 0.0, 0.0])],
            mat(2, 2, &[-0.6, 0.6, 0.5, -0.5]),
        )
        .unwrap()
    }

    fn example2() -> Model {
        let e = mat(2, 2, &[0.2, 0.3, 0.0, 0.0]);
        let g1 = mat(2, 2, &[0.1, 0.2, 0.3, 0.1]);
        let g2 = mat(2, 2, &[0.2, 0.2, 0.4, 0.5]);
        let id = Matrix::identity(2, 2);
        Model::new(
            Kind::Discrete,
            e.clone(),
            vec![&id - g1 + &e, &id - g2 + &e],
            vec![mat(2, 2, &[0.4, -0.2, 0.0, 0.0]), mat(2, 2, &[0.3, -0.1, 0.0, 0.0])],
            mat(2, 2, &[0.4, 0.6, 0.3, 0.7]),
        )
        .unwrap()
    }

    #[test]
    fn example1_identity_transforms() {
        let m = example1();
        let rf = RestrictedForm::from_transforms(&m, Matrix::identity(2, 2), Matrix::identity(2, 2), 1).unwrap();
        assert_eq!(rf.modes[0].a22[(0, 0)], 0.5);
        assert_eq!(rf.modes[1].a22[(0, 0)], 0.2);
        let ss = slow_subsystem(&rf).unwrap();
        assert!((ss.a1[0][(0, 0)] + 1.06).abs() < 1e-12);
        assert!((ss.c1[0][(0, 0)] - 0.24).abs() < 1e-12);
        assert!((ss.a1[1][(0, 0)] + 0.35).abs() < 1e-12);
        assert!(ss.c1[1][(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn svd_form_satisfies_invariants() {
        for m in [example1(), example2()] {
            let rf = restricted_form(&m).unwrap();
            assert_eq!(rf.rank, 1);
            let men = &rf.left * &m.e * &rf.right;
            assert!((men - mat(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-12);
        }
    }

    #[test]
    fn example2_slow_subsystem() {
        let m = example2();
        let custom = RestrictedForm::from_transforms(
            &m,
            Matrix::identity(2, 2),
            mat(2, 2, &[5.0, -1.5, 0.0, 1.0]),
            1,
        )
        .unwrap();
        assert!((custom.modes[0].a22[(0, 0)] - 1.35).abs() < 1e-12);
        assert!((custom.modes[1].a22[(0, 0)] - 1.1).abs() < 1e-12);
        let svd_form = restricted_form(&m).unwrap();
        for rf in [custom, svd_form] {
            let ss = slow_subsystem(&rf).unwrap();
            assert!((ss.a1[0][(0, 0)] - 34.0 / 9.0).abs() < 1e-10);
            assert!((ss.c1[0][(0, 0)].abs() - 10.0 / 9.0).abs() < 1e-10);
            assert!((ss.a1[1][(0, 0)] - 27.0 / 11.0).abs() < 1e-10);
            assert!((ss.c1[1][(0, 0)].abs() - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn full_rank_descriptor() {
        let m = Model::new(
            Kind::Continuous,
            Matrix::identity(2, 2),
            vec![mat(2, 2, &[-1.0, 0.3, 0.0, -2.0])],
            vec![Matrix::zeros(2, 2)],
            Matrix::zeros(1, 1),
        )
        .unwrap();
        let rf = restricted_form(&m).unwrap();
        assert_eq!(rf.rank, 2);
        assert!(rf.modes[0].a22.is_empty());
        let v = impulse_check(&m, &rf).unwrap();
        assert!(v.impulse_free());
        assert_eq!(v.modes[0].mechanism, Mechanism::NonsingularDescriptor);
    }

    #[test]
    fn example1_is_impulse_free() {
        let m = example1();
        let rf = restricted_form(&m).unwrap();
        let v = impulse_check(&m, &rf).unwrap();
        assert!(v.impulse_free() && v.consistent());
        assert!(v.modes.iter().all(|s| s.pencil_degree == Some(1)));
    }

    #[test]
    fn nilpotent_descriptor_is_impulsive() {
        let m = Model::new(
            Kind::Continuous,
            mat(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            vec![Matrix::identity(2, 2)],
            vec![Matrix::zeros(2, 2)],
            Matrix::zeros(1, 1),
        )
        .unwrap();
        let rf = restricted_form(&m).unwrap();
        let v = impulse_check(&m, &rf).unwrap();
        assert!(v.modes[0].regular);
        assert!(!v.modes[0].impulse_free);
        assert_eq!(v.modes[0].pencil_degree, Some(0));
        assert_eq!(v.modes[0].mechanism, Mechanism::Impulsive);
        assert!(matches!(slow_subsystem(&rf), Err(Error::Impulsive { mode: 1 })));
    }

    #[test]
    fn assumption_violation_blocks_restricted_form() {
        let m = Model::new(
            Kind::Continuous,
            mat(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            vec![-Matrix::identity(2, 2)],
            vec![mat(2, 2, &[0.0, 0.0, 1.0, 0.0])],
            Matrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(restricted_form(&m), Err(Error::AssumptionViolated { mode: 1 })));
    }

    #[test]
    fn slow_part_of_simple_pencils() {
        let a = mat(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let sp = pencil_slow_part(&Matrix::identity(2, 2), &a).unwrap();
        assert_eq!(sp.dim, 2);
        let got = linalg::eig_general(&sp.j).unwrap();
        let want = linalg::eig_general(&a).unwrap();
        for (g, w) in got.eigenvalues.iter().zip(&want.eigenvalues) {
            assert!((g - w).norm() < 1e-10);
        }

        let sp = pencil_slow_part(&mat(2, 2, &[1.0, 0.0, 0.0, 0.0]), &mat(2, 2, &[-1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(sp.dim, 1);
        assert!((sp.j[(0, 0)] + 1.0).abs() < 1e-12);

        let singular = pencil_slow_part(&mat(2, 2, &[1.0, 0.0, 0.0, 0.0]), &mat(2, 2, &[1.0, 2.0, 0.0, 0.0]));
        assert!(matches!(singular, Err(Error::NonRegularPencil)));
    }
}
