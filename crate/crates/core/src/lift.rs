//! H-representation of the second-moment equations.
//!
//! With `X_i = E[x x^T 1{r = i}]` and `psi` stacking `svec(X_i)` over the
//! modes, the moment equations become a deterministic singular system of
//! dimension `N n (n + 1) / 2`:
//!
//! ```text
//! continuous:  Es psi(X)' = As psi(X)
//! discrete:    Es psi(X(k+1)) = As psi(X(k))
//! ```

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{self, block_diag, build_dup, kron, svec_len, Matrix};
use crate::model::{Kind, Model};

/// Direction of the mode coupling on the moment side of the continuous lift.
///
/// `Adjoint` couples `X_i` to `sum_j pi_ji E X_j E^T` (generator transposed),
/// the forward Kolmogorov direction. `Direct` uses `pi_ij` literally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    #[default]
    Adjoint,
    Direct,
}

impl Coupling {
    pub fn as_str(self) -> &'static str {
        match self {
            Coupling::Adjoint => "adjoint",
            Coupling::Direct => "direct",
        }
    }
}

impl std::str::FromStr for Coupling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "adjoint" => Ok(Coupling::Adjoint),
            "direct" => Ok(Coupling::Direct),
            other => Err(format!("unknown coupling '{other}' (expected adjoint or direct)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub kind: Kind,
    pub coupling: Coupling,
    /// State dimension of the original model.
    pub n: usize,
    pub modes: usize,
    pub e: Matrix,
    pub a: Matrix,
    /// Columns span the lifted images of `Sym(V_i)`, where
    /// `V_i = {x : A(i) x in range E}` is the set of states consistent with
    /// the algebraic constraint of mode `i`. `None` for lifts read back from
    /// a model file.
    pub consistent: Option<Matrix>,
}

impl LiftedSystem {
    pub fn dim(&self) -> usize {
        self.e.nrows()
    }

    /// The lift as a single-mode noise-free model of the same kind.
    pub fn to_model(&self) -> Result<Model> {
        let d = self.dim();
        let transition = match self.kind {
            Kind::Continuous => Matrix::zeros(1, 1),
            Kind::Discrete => Matrix::identity(1, 1),
        };
        Model::new(
            self.kind,
            self.e.clone(),
            vec![self.a.clone()],
            vec![Matrix::zeros(d, d)],
            transition,
        )
    }
}

fn e_blocks(model: &Model) -> Matrix {
    let ee = kron(&model.e, &model.e);
    block_diag(&vec![ee; model.modes()])
}

/// Lift of the continuous-time moment equations.
pub fn lift_continuous(model: &Model, coupling: Coupling) -> Result<LiftedSystem> {
    model.ensure_kind(Kind::Continuous)?;
    let n = model.n();
    let modes = model.modes();
    let h = build_dup(n, modes).h;
    let de = e_blocks(model);
    let drift = block_diag(
        &model
            .a
            .iter()
            .zip(&model.c)
            .map(|(a, c)| kron(a, &model.e) + kron(&model.e, a) + kron(c, c))
            .collect::<Vec<_>>(),
    );
    let generator = match coupling {
        Coupling::Direct => model.transition.clone(),
        Coupling::Adjoint => model.transition.transpose(),
    };
    let couple = kron(&generator, &Matrix::identity(n * n, n * n)) * &de;
    let ht = h.transpose();
    Ok(LiftedSystem {
        kind: Kind::Continuous,
        coupling,
        n,
        modes,
        e: &ht * &de * &h,
        a: &ht * (drift + couple) * &h,
        consistent: consistent_basis(model)?,
    })
}

/// Lift of the discrete-time moment recursion.
pub fn lift_discrete(model: &Model) -> Result<LiftedSystem> {
    model.ensure_kind(Kind::Discrete)?;
    let n = model.n();
    let modes = model.modes();
    let h = build_dup(n, modes).h;
    let de = e_blocks(model);
    let step = block_diag(
        &model
            .a
            .iter()
            .zip(&model.c)
            .map(|(a, c)| kron(a, a) + kron(c, c))
            .collect::<Vec<_>>(),
    );
    let mix = kron(&model.transition.transpose(), &Matrix::identity(n * n, n * n));
    let ht = h.transpose();
    Ok(LiftedSystem {
        kind: Kind::Discrete,
        coupling: Coupling::Adjoint,
        n,
        modes,
        e: &ht * &de * &h,
        a: &ht * mix * step * &h,
        consistent: consistent_basis(model)?,
    })
}

/// Lift for either kind; the coupling only affects continuous models.
pub fn lift(model: &Model, coupling: Coupling) -> Result<LiftedSystem> {
    match model.kind {
        Kind::Continuous => lift_continuous(model, coupling),
        Kind::Discrete => lift_discrete(model),
    }
}

fn consistent_basis(model: &Model) -> Result<Option<Matrix>> {
    let n = model.n();
    let f = linalg::null_basis(&model.e.transpose(), None)?;
    let mut blocks = Vec::with_capacity(model.modes());
    for a in &model.a {
        let v = if f.ncols() == 0 {
            Matrix::identity(n, n)
        } else {
            linalg::null_basis(&(f.transpose() * a), None)?
        };
        let d = v.ncols();
        let mut block = Matrix::zeros(svec_len(n), svec_len(d));
        let mut col = 0;
        for k in 0..d {
            for s in k..d {
                let mut unit = Matrix::zeros(d, d);
                unit[(k, s)] = 1.0;
                unit[(s, k)] = 1.0;
                block.set_column(col, &linalg::svec(&(&v * unit * v.transpose()))?);
                col += 1;
            }
        }
        blocks.push(block);
    }
    Ok(Some(block_diag(&blocks)))
}
