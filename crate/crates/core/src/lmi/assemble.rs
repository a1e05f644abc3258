//! LMI criteria for mean-square admissibility, as affine forms.
//!
//! Variable order is fixed so certificates can be mapped back:
//! continuous strict criterion `P(1..N), Q(1..N)`; discrete strict criterion
//! `P(1..N), Q`; lifted criterion `P, Q`; the non-strict criteria carry one
//! matrix per mode.

use super::form::{AffineMatrixForm, LmiProblem, Sense, Term, VarSpec};
use crate::error::{Error, Result};
use crate::lift::LiftedSystem;
use crate::linalg::{self, Matrix};
use crate::model::{Kind, Model};

/// Orthonormal basis of `null(E^T)`, `n x (n - r)`; empty when `E` is nonsingular.
pub fn build_f(e: &Matrix) -> Result<Matrix> {
    linalg::null_basis(&e.transpose(), None)
}

fn check_f(model: &Model, f: &Matrix) -> Result<()> {
    if f.nrows() != model.n() && !(f.is_empty() && f.nrows() == 0) {
        return Err(Error::Dimension(format!(
            "F has {} rows, expected n = {}",
            f.nrows(),
            model.n()
        )));
    }
    Ok(())
}

fn positivity(problem: &mut LmiProblem, var: usize, label: String) {
    let n = problem.vars[var].rows;
    let mut pos = AffineMatrixForm::new(label, Sense::Positive, n);
    pos.push(Term::new(var, Matrix::identity(n, n), Matrix::identity(n, n), 1.0));
    problem.forms.push(pos);
}

/// `E E^+ C(i)`: the part of the noise seen through `E`.
fn projected_noise(model: &Model) -> Result<Vec<Matrix>> {
    let ep = &model.e * linalg::pinv(&model.e)?;
    Ok(model.c.iter().map(|c| &ep * c).collect())
}

/// Strict continuous-time criterion in `P(i) > 0`, `Q(i)`:
///
/// `A^T (P E + F Q) + (P E + F Q)^T A + sum_j pi_ij E^T P(j) E + C^T (E^+)^T E^T P E E^+ C < 0`.
pub fn assemble_thm3(model: &Model, f: &Matrix) -> Result<LmiProblem> {
    model.ensure_kind(Kind::Continuous)?;
    check_f(model, f)?;
    let n = model.n();
    let modes = model.modes();
    let k = f.ncols();
    let mut problem = LmiProblem::default();
    let p: Vec<usize> = (0..modes)
        .map(|i| problem.add_var(VarSpec::symmetric(format!("P({})", i + 1), n, true)))
        .collect();
    let q: Vec<usize> = if k > 0 {
        (0..modes)
            .map(|i| problem.add_var(VarSpec::general(format!("Q({})", i + 1), k, n)))
            .collect()
    } else {
        Vec::new()
    };
    let noise = projected_noise(model)?;
    let id = Matrix::identity(n, n);
    for i in 0..modes {
        let a = &model.a[i];
        let mut form = AffineMatrixForm::new(format!("mode {}", i + 1), Sense::Negative, n);
        form.push(Term::new(p[i], a.transpose(), model.e.clone(), 2.0));
        if k > 0 {
            form.push(Term::new(q[i], a.transpose() * f, id.clone(), 2.0));
        }
        for j in 0..modes {
            let pij = model.transition[(i, j)];
            if pij != 0.0 {
                form.push(Term::new(p[j], model.e.transpose(), model.e.clone(), pij));
            }
        }
        form.push(Term::new(p[i], noise[i].transpose(), noise[i].clone(), 1.0));
        problem.forms.push(form);
    }
    for (i, &v) in p.iter().enumerate() {
        positivity(&mut problem, v, format!("P({}) > 0", i + 1));
    }
    Ok(problem)
}

/// A linear equality `left * V - (left * V)^T = 0` on one variable.
#[derive(Debug, Clone)]
pub struct SymmetryConstraint {
    pub label: String,
    pub var: usize,
    pub left: Matrix,
}

/// Non-strict criterion with equality constraints; verification only.
#[derive(Debug, Clone)]
pub struct NonStrictProblem {
    pub problem: LmiProblem,
    /// Forms that must be positive semidefinite (not strictly definite).
    pub semidefinite: Vec<AffineMatrixForm>,
    pub equalities: Vec<SymmetryConstraint>,
}

/// Continuous criterion in general `P(i)`: `E^T P = P^T E >= 0` and
/// `A^T P + P^T A + sum_j pi_ij E^T P(j) + C^T (E^+)^T E^T P E^+ C < 0`.
pub fn assemble_thm2(model: &Model) -> Result<NonStrictProblem> {
    model.ensure_kind(Kind::Continuous)?;
    let n = model.n();
    let modes = model.modes();
    let e = &model.e;
    let ep = linalg::pinv(e)?;
    let id = Matrix::identity(n, n);
    let mut problem = LmiProblem::default();
    let p: Vec<usize> = (0..modes)
        .map(|i| problem.add_var(VarSpec::general(format!("P({})", i + 1), n, n)))
        .collect();
    let mut semidefinite = Vec::new();
    let mut equalities = Vec::new();
    for i in 0..modes {
        let a = &model.a[i];
        let c = &model.c[i];
        let mut form = AffineMatrixForm::new(format!("mode {}", i + 1), Sense::Negative, n);
        form.push(Term::new(p[i], a.transpose(), id.clone(), 2.0));
        for j in 0..modes {
            let pij = model.transition[(i, j)];
            if pij != 0.0 {
                form.push(Term::new(p[j], e.transpose(), id.clone(), pij));
            }
        }
        let outer = &ep * c;
        form.push(Term::new(p[i], outer.transpose() * e.transpose(), outer, 1.0));
        problem.forms.push(form);

        let mut sd = AffineMatrixForm::new(format!("E^T P({}) >= 0", i + 1), Sense::Positive, n);
        sd.push(Term::new(p[i], e.transpose(), id.clone(), 1.0));
        semidefinite.push(sd);
        equalities.push(SymmetryConstraint {
            label: format!("E^T P({0}) = P({0})^T E", i + 1),
            var: p[i],
            left: e.transpose(),
        });
    }
    Ok(NonStrictProblem {
        problem,
        semidefinite,
        equalities,
    })
}

fn mixed_terms(form: &mut AffineMatrixForm, vars: &[usize], weights: &[f64], outer: &Matrix) {
    for (&v, &w) in vars.iter().zip(weights) {
        if w != 0.0 {
            form.push(Term::new(v, outer.transpose(), outer.clone(), w));
        }
    }
}

/// Strict discrete-time criterion in `P(i) > 0` and a shared symmetric `Q`:
///
/// `A^T (sum_j l_ij P(j) + F Q F^T) A + C^T (sum_j l_ij P(j) + F Q F^T) C - E^T P(i) E < 0`.
pub fn assemble_thm6(model: &Model, f: &Matrix) -> Result<LmiProblem> {
    model.ensure_kind(Kind::Discrete)?;
    check_f(model, f)?;
    let n = model.n();
    let modes = model.modes();
    let k = f.ncols();
    let mut problem = LmiProblem::default();
    let p: Vec<usize> = (0..modes)
        .map(|i| problem.add_var(VarSpec::symmetric(format!("P({})", i + 1), n, true)))
        .collect();
    let q = (k > 0).then(|| problem.add_var(VarSpec::symmetric("Q", k, false)));
    for i in 0..modes {
        let a = &model.a[i];
        let c = &model.c[i];
        let weights: Vec<f64> = (0..modes).map(|j| model.transition[(i, j)]).collect();
        let mut form = AffineMatrixForm::new(format!("mode {}", i + 1), Sense::Negative, n);
        mixed_terms(&mut form, &p, &weights, a);
        mixed_terms(&mut form, &p, &weights, c);
        if let Some(q) = q {
            let fa = f.transpose() * a;
            let fc = f.transpose() * c;
            form.push(Term::new(q, fa.transpose(), fa, 1.0));
            form.push(Term::new(q, fc.transpose(), fc, 1.0));
        }
        form.push(Term::new(p[i], model.e.transpose(), model.e.clone(), -1.0));
        problem.forms.push(form);
    }
    for (i, &v) in p.iter().enumerate() {
        positivity(&mut problem, v, format!("P({}) > 0", i + 1));
    }
    Ok(problem)
}

/// Discrete criterion in symmetric (possibly indefinite) `P(i)`:
/// `E^T P E >= 0` and `A^T (sum_j l_ij P(j)) A + C^T (...) C - E^T P(i) E < 0`.
pub fn assemble_thm5(model: &Model) -> Result<NonStrictProblem> {
    model.ensure_kind(Kind::Discrete)?;
    let n = model.n();
    let modes = model.modes();
    let mut problem = LmiProblem::default();
    let p: Vec<usize> = (0..modes)
        .map(|i| problem.add_var(VarSpec::symmetric(format!("P({})", i + 1), n, false)))
        .collect();
    let mut semidefinite = Vec::new();
    for i in 0..modes {
        let weights: Vec<f64> = (0..modes).map(|j| model.transition[(i, j)]).collect();
        let mut form = AffineMatrixForm::new(format!("mode {}", i + 1), Sense::Negative, n);
        mixed_terms(&mut form, &p, &weights, &model.a[i]);
        mixed_terms(&mut form, &p, &weights, &model.c[i]);
        form.push(Term::new(p[i], model.e.transpose(), model.e.clone(), -1.0));
        problem.forms.push(form);

        let mut sd = AffineMatrixForm::new(format!("E^T P({}) E >= 0", i + 1), Sense::Positive, n);
        sd.push(Term::new(p[i], model.e.transpose(), model.e.clone(), 1.0));
        semidefinite.push(sd);
    }
    Ok(NonStrictProblem {
        problem,
        semidefinite,
        equalities: Vec::new(),
    })
}

/// Basis of `null(Es^T)` for the lifted criterion.
pub fn build_s(ls: &LiftedSystem) -> Result<Matrix> {
    build_f(&ls.e)
}

/// Strict criterion on a continuous-time lift, in `P > 0` and `Q`:
/// `(P Es + S Q)^T As + As^T (P Es + S Q) < 0`.
pub fn assemble_cor1(ls: &LiftedSystem, s: &Matrix) -> Result<LmiProblem> {
    if ls.kind != Kind::Continuous {
        return Err(Error::KindMismatch {
            expected: Kind::Continuous.as_str(),
            found: ls.kind.as_str(),
        });
    }
    let d = ls.dim();
    if s.nrows() != d && s.ncols() > 0 {
        return Err(Error::Dimension(format!("S has {} rows, expected {d}", s.nrows())));
    }
    let mut problem = LmiProblem::default();
    let p = problem.add_var(VarSpec::symmetric("P", d, true));
    let k = s.ncols();
    let q = (k > 0).then(|| problem.add_var(VarSpec::general("Q", k, d)));
    let mut form = AffineMatrixForm::new("lifted", Sense::Negative, d);
    form.push(Term::new(p, ls.a.transpose(), ls.e.clone(), 2.0));
    if let Some(q) = q {
        form.push(Term::new(q, ls.a.transpose() * s, Matrix::identity(d, d), 2.0));
    }
    problem.forms.push(form);
    positivity(&mut problem, p, "P > 0".into());
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(r, c, v)
    }

    fn scalar(kind: Kind, a: f64, c: f64) -> Model {
        let t = if kind == Kind::Continuous { 0.0 } else { 1.0 };
        Model::new(kind, mat(1, 1, &[1.0]), vec![mat(1, 1, &[a])], vec![mat(1, 1, &[c])], mat(1, 1, &[t])).unwrap()
    }

    #[test]
    fn f_for_full_rank_descriptor_is_empty() {
        assert_eq!(build_f(&Matrix::identity(3, 3)).unwrap().shape(), (3, 0));
    }

    #[test]
    fn lyapunov_reductions() {
        let m = scalar(Kind::Continuous, -0.5, 0.3);
        let prob = assemble_thm3(&m, &build_f(&m.e).unwrap()).unwrap();
        assert_eq!(prob.unknowns(), 1);
        let g = prob.forms[0].evaluate(&[mat(1, 1, &[1.0])]).unwrap();
        assert!((g[(0, 0)] - (-1.0 + 0.09)).abs() < 1e-15);

        let m = scalar(Kind::Discrete, 0.6, 0.5);
        let prob = assemble_thm6(&m, &build_f(&m.e).unwrap()).unwrap();
        let g = prob.forms[0].evaluate(&[mat(1, 1, &[1.0])]).unwrap();
        assert!((g[(0, 0)] - (0.36 + 0.25 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_variables_give_zero_forms() {
        let m = Model::new(
            Kind::Continuous,
            mat(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            vec![mat(2, 2, &[-0.5, 0.7, 0.4, 0.5])],
            vec![mat(2, 2, &[0.4, 0.2, 0.0, 0.0])],
            mat(1, 1, &[0.0]),
        )
        .unwrap();
        let f = build_f(&m.e).unwrap();
        let prob = assemble_thm3(&m, &f).unwrap();
        let zeros = prob.unpack(&vec![0.0; prob.unknowns()]);
        assert_eq!(prob.forms[0].evaluate(&zeros).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn cor1_rejects_discrete_lifts() {
        let m = scalar(Kind::Discrete, 0.5, 0.0);
        let ls = crate::lift::lift_discrete(&m).unwrap();
        assert!(assemble_cor1(&ls, &build_s(&ls).unwrap()).is_err());
    }
}
