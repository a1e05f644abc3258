//! Symmetric-matrix-valued functions affine in a set of matrix variables.

use crate::error::{Error, Result};
use crate::linalg::{svec_len, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct VarSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    /// Counted in the trace normalization `sum tr(P) <= bound`.
    pub normalized: bool,
}

impl VarSpec {
    pub fn symmetric(name: impl Into<String>, n: usize, normalized: bool) -> Self {
        VarSpec {
            name: name.into(),
            rows: n,
            cols: n,
            symmetric: true,
            normalized,
        }
    }

    pub fn general(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        VarSpec {
            name: name.into(),
            rows,
            cols,
            symmetric: false,
            normalized: false,
        }
    }

    /// Number of scalar unknowns.
    pub fn len(&self) -> usize {
        if self.symmetric {
            svec_len(self.rows)
        } else {
            self.rows * self.cols
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `k`-th basis matrix of this variable's space.
    pub fn basis(&self, k: usize) -> Matrix {
        let mut b = Matrix::zeros(self.rows, self.cols);
        if self.symmetric {
            let (i, j) = sym_position(self.rows, k);
            b[(i, j)] = 1.0;
            b[(j, i)] = 1.0;
        } else {
            b[(k / self.cols, k % self.cols)] = 1.0;
        }
        b
    }

    fn pack_into(&self, m: &Matrix, out: &mut Vec<f64>) {
        if self.symmetric {
            for i in 0..self.rows {
                for j in i..self.rows {
                    out.push(0.5 * (m[(i, j)] + m[(j, i)]));
                }
            }
        } else {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    out.push(m[(i, j)]);
                }
            }
        }
    }

    fn unpack(&self, x: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        if self.symmetric {
            let mut k = 0;
            for i in 0..self.rows {
                for j in i..self.rows {
                    m[(i, j)] = x[k];
                    m[(j, i)] = x[k];
                    k += 1;
                }
            }
        } else {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    m[(i, j)] = x[i * self.cols + j];
                }
            }
        }
        m
    }
}

fn sym_position(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i;
        if k < row {
            return (i, i + k);
        }
        k -= row;
    }
    unreachable!("symmetric basis index out of range")
}

/// Contributes `scale * sym(left * V * right)` with `sym(X) = (X + X^T) / 2`.
#[derive(Debug, Clone)]
pub struct Term {
    pub var: usize,
    pub left: Matrix,
    pub right: Matrix,
    pub scale: f64,
}

impl Term {
    pub fn new(var: usize, left: Matrix, right: Matrix, scale: f64) -> Self {
        Term {
            var,
            left,
            right,
            scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `G(x) < 0`.
    Negative,
    /// `G(x) > 0`.
    Positive,
}

#[derive(Debug, Clone)]
pub struct AffineMatrixForm {
    pub label: String,
    pub sense: Sense,
    pub constant: Matrix,
    pub terms: Vec<Term>,
}

impl AffineMatrixForm {
    pub fn new(label: impl Into<String>, sense: Sense, dim: usize) -> Self {
        AffineMatrixForm {
            label: label.into(),
            sense,
            constant: Matrix::zeros(dim, dim),
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn push(&mut self, term: Term) -> &mut Self {
        self.terms.push(term);
        self
    }

    /// Value of the form for one matrix per declared variable.
    pub fn evaluate(&self, values: &[Matrix]) -> Result<Matrix> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = values
                .get(t.var)
                .ok_or_else(|| Error::Dimension(format!("no value for variable {}", t.var)))?;
            if t.left.ncols() != v.nrows() || v.ncols() != t.right.nrows() {
                return Err(Error::Dimension(format!(
                    "{}: term expects a {}x{} variable, got {}x{}",
                    self.label,
                    t.left.ncols(),
                    t.right.nrows(),
                    v.nrows(),
                    v.ncols()
                )));
            }
            let p = &t.left * v * &t.right;
            out += (&p + p.transpose()) * (0.5 * t.scale);
        }
        Ok(out)
    }

    /// `sym(left * B * right)` summed over the terms of `var`, for a basis matrix `B`.
    pub(crate) fn coefficient(&self, var: usize, basis: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.dim(), self.dim());
        for t in self.terms.iter().filter(|t| t.var == var) {
            let p = &t.left * basis * &t.right;
            out += (&p + p.transpose()) * (0.5 * t.scale);
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    pub vars: Vec<VarSpec>,
    pub forms: Vec<AffineMatrixForm>,
}

impl LmiProblem {
    pub fn add_var(&mut self, spec: VarSpec) -> usize {
        self.vars.push(spec);
        self.vars.len() - 1
    }

    pub fn unknowns(&self) -> usize {
        self.vars.iter().map(VarSpec::len).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.vars
            .iter()
            .map(|v| {
                let o = acc;
                acc += v.len();
                o
            })
            .collect()
    }

    pub fn pack(&self, values: &[Matrix]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.unknowns());
        for (v, m) in self.vars.iter().zip(values) {
            v.pack_into(m, &mut out);
        }
        out
    }

    pub fn unpack(&self, x: &[f64]) -> Vec<Matrix> {
        self.vars
            .iter()
            .zip(self.offsets())
            .map(|(v, o)| v.unpack(&x[o..o + v.len()]))
            .collect()
    }

    /// Sum of the dimensions of the normalized variables.
    pub fn normalization_bound(&self) -> f64 {
        self.vars
            .iter()
            .filter(|v| v.normalized)
            .map(|v| v.rows as f64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_unpack_round_trip() {
        let mut p = LmiProblem::default();
        p.add_var(VarSpec::symmetric("P", 3, true));
        p.add_var(VarSpec::general("Q", 1, 3));
        assert_eq!(p.unknowns(), 9);
        let x: Vec<f64> = (0..9).map(|k| k as f64 - 4.0).collect();
        let m = p.unpack(&x);
        assert_eq!(m[0], m[0].transpose());
        assert_eq!(p.pack(&m), x);
    }

    #[test]
    fn symmetric_basis_follows_svec_order() {
        let v = VarSpec::symmetric("P", 3, false);
        let positions: Vec<(usize, usize)> = (0..6).map(|k| sym_position(3, k)).collect();
        assert_eq!(positions, vec![(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]);
        assert_eq!(v.basis(1)[(1, 0)], 1.0);
    }

    #[test]
    fn evaluation_is_symmetric() {
        let mut p = LmiProblem::default();
        let q = p.add_var(VarSpec::general("Q", 1, 2));
        let mut f = AffineMatrixForm::new("g", Sense::Negative, 2);
        f.push(Term::new(q, Matrix::from_row_slice(2, 1, &[0.3, -1.0]), Matrix::identity(2, 2), 2.0));
        let g = f.evaluate(&[Matrix::from_row_slice(1, 2, &[1.5, 0.2])]).unwrap();
        assert!((&g - g.transpose()).amax() < 1e-15);
        assert!((g[(0, 0)] - 0.9).abs() < 1e-15);
        assert!(f.evaluate(&[Matrix::zeros(2, 2)]).is_err());
    }
}
