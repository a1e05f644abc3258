//! Random instances with prescribed structure, for property tests and
//! randomized cross-checks.
//!
//! Models are drawn in restricted coordinates and mapped back through random
//! well-conditioned transforms, so rank, impulse-freeness and the noise
//! range condition hold by construction.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{self, Matrix};
use crate::model::{Kind, Model};

pub fn matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn symmetric<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    let a = matrix(rng, n, n);
    (&a + a.transpose()) * 0.5
}

/// Random `rows x cols` matrix of exact rank `k` (generically).
pub fn of_rank<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, k: usize) -> Matrix {
    matrix(rng, rows, k) * matrix(rng, k, cols)
}

/// `U diag(I_r, 0) V` with well-conditioned `U`, `V`: rank exactly `r` with
/// nonzero singular values of moderate spread.
pub fn descriptor<R: Rng + ?Sized>(rng: &mut R, n: usize, r: usize) -> Matrix {
    let mut core = Matrix::zeros(n, n);
    core.view_mut((0, 0), (r, r)).fill_with_identity();
    well_conditioned(rng, n, 10.0) * core * well_conditioned(rng, n, 10.0)
}

/// Invertible matrix with 2-norm condition number at most `max_cond`.
pub fn well_conditioned<R: Rng + ?Sized>(rng: &mut R, n: usize, max_cond: f64) -> Matrix {
    loop {
        let m = Matrix::identity(n, n) + matrix(rng, n, n) * 0.4;
        let Ok(s) = linalg::singular_values(&m) else {
            continue;
        };
        let (hi, lo) = (s.max(), s.min());
        if lo > 0.0 && hi / lo <= max_cond {
            return m;
        }
    }
}

/// Generator with uniform off-diagonal rates in `(0, rate)`.
pub fn generator<R: Rng + ?Sized>(rng: &mut R, modes: usize, rate: f64) -> Matrix {
    let mut p = Matrix::zeros(modes, modes);
    for i in 0..modes {
        for j in 0..modes {
            if i != j {
                p[(i, j)] = rate * rng.random::<f64>();
            }
        }
        p[(i, i)] = -p.row(i).sum();
    }
    p
}

pub fn stochastic<R: Rng + ?Sized>(rng: &mut R, modes: usize) -> Matrix {
    let mut p = Matrix::from_fn(modes, modes, |_, _| 0.05 + rng.random::<f64>());
    for i in 0..modes {
        let s = p.row(i).sum();
        p.row_mut(i).scale_mut(1.0 / s);
    }
    p
}

#[derive(Debug, Clone, Copy)]
pub struct ModelSpec {
    pub kind: Kind,
    pub n: usize,
    pub rank: usize,
    pub modes: usize,
    /// Continuous: subtracted from the diagonal of the slow block.
    /// Discrete: scale of the slow block.
    pub bias: f64,
    /// Scale of the noise coefficients.
    pub noise: f64,
    /// Make the fast block of this mode singular.
    pub impulsive_mode: Option<usize>,
}

impl ModelSpec {
    pub fn new(kind: Kind, n: usize, rank: usize, modes: usize) -> Self {
        ModelSpec {
            kind,
            n,
            rank,
            modes,
            bias: match kind {
                Kind::Continuous => 1.0,
                Kind::Discrete => 0.4,
            },
            noise: 0.3,
            impulsive_mode: None,
        }
    }
}

/// A model together with the transforms it was built from:
/// `left * E * right = diag(I_r, 0)`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: Model,
    pub left: Matrix,
    pub right: Matrix,
    pub rank: usize,
}

pub fn model<R: Rng + ?Sized>(rng: &mut R, spec: &ModelSpec) -> Result<Instance> {
    let (n, r) = (spec.n, spec.rank);
    let left = well_conditioned(rng, n, 10.0);
    let right = well_conditioned(rng, n, 10.0);
    let left_inv = linalg::inverse(&left, "left transform")?;
    let right_inv = linalg::inverse(&right, "right transform")?;
    let mut core = Matrix::zeros(n, n);
    core.view_mut((0, 0), (r, r)).fill_with_identity();
    let e = &left_inv * core * &right_inv;

    let mut a = Vec::with_capacity(spec.modes);
    let mut c = Vec::with_capacity(spec.modes);
    for i in 0..spec.modes {
        let mut ab = matrix(rng, n, n) * 0.5;
        match spec.kind {
            Kind::Continuous => {
                for k in 0..r {
                    ab[(k, k)] -= spec.bias;
                }
            }
            Kind::Discrete => {
                let mut slow = ab.view_mut((0, 0), (r, r));
                slow *= 2.0 * spec.bias;
            }
        }
        if r < n {
            let f = n - r;
            let a22 = if spec.impulsive_mode == Some(i) {
                of_rank(rng, f, f, f - 1)
            } else {
                well_conditioned(rng, f, 10.0)
            };
            ab.view_mut((r, r), (f, f)).copy_from(&a22);
        }
        // Noise only in the equations of the dynamic part keeps
        // rank [E C] = rank E.
        let mut cb = matrix(rng, n, n) * spec.noise;
        cb.rows_mut(r, n - r).fill(0.0);
        a.push(&left_inv * ab * &right_inv);
        c.push(&left_inv * cb * &right_inv);
    }
    let transition = match spec.kind {
        Kind::Continuous => generator(rng, spec.modes, 1.0),
        Kind::Discrete => stochastic(rng, spec.modes),
    };
    Ok(Instance {
        model: Model::new(spec.kind, e, a, c, transition)?,
        left,
        right,
        rank: r,
    })
}
