//! Strict LMI feasibility by margin maximization.
//!
//! Solves
//!
//! ```text
//! maximize t  s.t.  -G_k(x) - t I > 0      (negative-sense forms)
//!                    G_k(x) - t I > 0      (positive-sense forms)
//!                    bound - sum tr(P) > 0 (normalized variables)
//!                    R^2 - |x|^2 > 0
//! ```
//!
//! with a primal log-det barrier and damped Newton centering. After each
//! centering step the optimal margin is bracketed by `[t, t + nu / tau]`,
//! where `nu` is the barrier parameter, which gives a sound stopping rule in
//! both directions.

use nalgebra::Cholesky;

use super::form::{LmiProblem, Sense};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Strictness threshold: feasible iff the optimal margin exceeds this.
    pub eps: f64,
    /// Total Newton step budget.
    pub max_iter: usize,
    /// Radius of the ball that keeps the decision variables bounded.
    pub radius: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            eps: 1e-6,
            max_iter: 2000,
            radius: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    Unknown(String),
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Margin at the returned point.
    pub margin: f64,
    /// Upper bound on the optimal margin.
    pub upper_bound: f64,
    /// Variable values at the returned point.
    pub values: Vec<Matrix>,
    pub iterations: usize,
}

struct Block {
    s0: Matrix,
    coeffs: Vec<(usize, Matrix)>,
}

impl Block {
    fn eval(&self, y: &[f64]) -> Matrix {
        let mut s = self.s0.clone();
        for (j, c) in &self.coeffs {
            s += c * y[*j];
        }
        s
    }
}

struct Barrier {
    blocks: Vec<Block>,
    m: usize,
    radius2: f64,
    nu: f64,
}

const GROWTH: f64 = 20.0;
const CENTERED: f64 = 1e-10;
const MAX_CENTERING: usize = 60;

impl Barrier {
    fn new(problem: &LmiProblem, radius: f64) -> Self {
        let m = problem.unknowns();
        let offsets = problem.offsets();
        let mut blocks = Vec::new();
        for form in &problem.forms {
            let d = form.dim();
            let sign = match form.sense {
                Sense::Negative => -1.0,
                Sense::Positive => 1.0,
            };
            let mut coeffs = Vec::new();
            for (v, spec) in problem.vars.iter().enumerate() {
                if !form.terms.iter().any(|t| t.var == v) {
                    continue;
                }
                for k in 0..spec.len() {
                    let c = form.coefficient(v, &spec.basis(k)) * sign;
                    if c.amax() > 0.0 {
                        coeffs.push((offsets[v] + k, c));
                    }
                }
            }
            coeffs.push((m, -Matrix::identity(d, d)));
            blocks.push(Block {
                s0: &form.constant * sign,
                coeffs,
            });
        }
        let bound = problem.normalization_bound();
        if bound > 0.0 {
            let mut coeffs = Vec::new();
            for (v, spec) in problem.vars.iter().enumerate().filter(|(_, s)| s.normalized) {
                for k in 0..spec.len() {
                    let tr = spec.basis(k).trace();
                    if tr != 0.0 {
                        coeffs.push((offsets[v] + k, Matrix::from_element(1, 1, -tr)));
                    }
                }
            }
            blocks.push(Block {
                s0: Matrix::from_element(1, 1, bound),
                coeffs,
            });
        }
        let nu = blocks.iter().map(|b| b.s0.nrows() as f64).sum::<f64>() + 1.0;
        Barrier {
            blocks,
            m,
            radius2: radius * radius,
            nu,
        }
    }

    fn ball(&self, y: &[f64]) -> f64 {
        self.radius2 - y[..self.m].iter().map(|v| v * v).sum::<f64>()
    }

    /// Barrier value, or `None` outside the domain.
    fn value(&self, y: &[f64]) -> Option<f64> {
        let psi = self.ball(y);
        if psi <= 0.0 {
            return None;
        }
        let mut v = -psi.ln();
        for b in &self.blocks {
            let chol = Cholesky::new(b.eval(y))?;
            v -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(v)
    }

    fn derivatives(&self, y: &[f64]) -> Option<(Vector, Matrix)> {
        let dim = self.m + 1;
        let mut g = Vector::zeros(dim);
        let mut h = Matrix::zeros(dim, dim);
        for b in &self.blocks {
            let chol = Cholesky::new(b.eval(y))?;
            let l = chol.l();
            let d = l.nrows();
            let linv = l.solve_lower_triangular(&Matrix::identity(d, d))?;
            let scaled: Vec<(usize, Matrix)> = b
                .coeffs
                .iter()
                .map(|(j, c)| (*j, &linv * c * linv.transpose()))
                .collect();
            for (a, (ja, da)) in scaled.iter().enumerate() {
                g[*ja] -= da.trace();
                for (jb, db) in &scaled[a..] {
                    let v = da.dot(db);
                    h[(*ja, *jb)] += v;
                    if ja != jb {
                        h[(*jb, *ja)] += v;
                    }
                }
            }
        }
        let psi = self.ball(y);
        if psi <= 0.0 {
            return None;
        }
        for i in 0..self.m {
            g[i] += 2.0 * y[i] / psi;
            h[(i, i)] += 2.0 / psi;
            for k in 0..self.m {
                h[(i, k)] += 4.0 * y[i] * y[k] / (psi * psi);
            }
        }
        Some((g, h))
    }

    fn min_eig(&self, y: &[f64]) -> f64 {
        self.blocks
            .iter()
            .filter_map(|b| crate::linalg::eig_sym(&crate::linalg::symmetric_part(&b.eval(y))).ok())
            .map(|v| v[0])
            .fold(f64::INFINITY, f64::min)
    }
}

fn newton_direction(g: &Vector, h: &Matrix) -> Option<Vector> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return Some(-ch.solve(g));
    }
    let scale = h.diagonal().amax().max(1.0);
    let mut jitter = 1e-12 * scale;
    for _ in 0..8 {
        let shifted = h + Matrix::identity(h.nrows(), h.ncols()) * jitter;
        if let Some(ch) = Cholesky::new(shifted) {
            return Some(-ch.solve(g));
        }
        jitter *= 100.0;
    }
    None
}

/// Maximizes the common margin of all forms of `problem`.
pub fn solve_feasibility(problem: &LmiProblem, opts: &SolveOptions) -> SolveResult {
    let barrier = Barrier::new(problem, opts.radius);
    let m = barrier.m;

    // Start: normalized variables at I/2, everything else at zero, and t
    // one unit below the smallest eigenvalue so every block is interior.
    let mut start: Vec<Matrix> = problem
        .vars
        .iter()
        .map(|v| {
            if v.normalized {
                Matrix::identity(v.rows, v.cols) * 0.5
            } else {
                Matrix::zeros(v.rows, v.cols)
            }
        })
        .collect();
    if start.len() != problem.vars.len() {
        start.clear();
    }
    let mut y = problem.pack(&start);
    y.push(0.0);
    y[m] = barrier.min_eig(&y) - 1.0;
    let mut y = Vector::from_vec(y);

    let mut tau = 1.0;
    let mut iterations = 0;
    let gap_tol = 1e-3 * opts.eps;
    let finish = |y: &Vector, status: SolveStatus, upper: f64, iterations: usize| SolveResult {
        status,
        margin: y[m],
        upper_bound: upper,
        values: problem.unpack(&y.as_slice()[..m]),
        iterations,
    };

    loop {
        // Centering by damped Newton. All blocks are self-concordant, so the
        // step 1 / (1 + lambda) stays interior and decreases the objective
        // without function-value comparisons, which lose all precision once
        // tau * t dominates the barrier value.
        let mut lambda = f64::INFINITY;
        for _ in 0..MAX_CENTERING {
            if iterations >= opts.max_iter {
                let gap = gap_bound(barrier.nu, tau, lambda);
                return finish(&y, undecided(y[m], gap, opts.eps, "iteration limit reached"), y[m] + gap, iterations);
            }
            iterations += 1;
            let Some((mut g, h)) = barrier.derivatives(y.as_slice()) else {
                return finish(&y, SolveStatus::Unknown("left the barrier domain".into()), f64::INFINITY, iterations);
            };
            g[m] -= tau;
            let Some(dir) = newton_direction(&g, &h) else {
                return finish(&y, SolveStatus::Unknown("singular Newton system".into()), f64::INFINITY, iterations);
            };
            lambda = (-g.dot(&dir)).max(0.0).sqrt();
            if lambda * lambda * 0.5 <= CENTERED {
                break;
            }
            let mut alpha = if lambda < 0.25 { 1.0 } else { 1.0 / (1.0 + lambda) };
            loop {
                let trial = &y + &dir * alpha;
                if barrier.value(trial.as_slice()).is_some() {
                    y = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    let gap = gap_bound(barrier.nu, tau, lambda);
                    return finish(&y, undecided(y[m], gap, opts.eps, "step left the barrier domain"), y[m] + gap, iterations);
                }
            }
        }

        let gap = gap_bound(barrier.nu, tau, lambda);
        let upper = y[m] + gap;
        if upper <= opts.eps {
            return finish(&y, SolveStatus::Infeasible, upper, iterations);
        }
        if gap <= gap_tol.max(1e-9 * y[m].abs()) {
            let status = if y[m] > opts.eps {
                SolveStatus::Feasible
            } else {
                SolveStatus::Infeasible
            };
            return finish(&y, status, upper, iterations);
        }
        tau *= GROWTH;
    }
}

/// Bound on `t* - t` at an approximately centered point with Newton
/// decrement `lambda`; only meaningful for `lambda < 1`.
fn gap_bound(nu: f64, tau: f64, lambda: f64) -> f64 {
    if lambda < 1.0 {
        (nu + lambda * nu.sqrt()) / tau
    } else {
        f64::INFINITY
    }
}

fn undecided(t: f64, gap: f64, eps: f64, why: &str) -> SolveStatus {
    if t > eps {
        SolveStatus::Feasible
    } else if t + gap <= eps {
        SolveStatus::Infeasible
    } else {
        SolveStatus::Unknown(why.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::super::form::{AffineMatrixForm, Term, VarSpec};
    use super::*;

    fn lyapunov(a: &Matrix) -> LmiProblem {
        let n = a.nrows();
        let mut p = LmiProblem::default();
        let v = p.add_var(VarSpec::symmetric("P", n, true));
        let mut neg = AffineMatrixForm::new("lyap", Sense::Negative, n);
        neg.push(Term::new(v, a.transpose(), Matrix::identity(n, n), 2.0));
        let mut pos = AffineMatrixForm::new("P>0", Sense::Positive, n);
        pos.push(Term::new(v, Matrix::identity(n, n), Matrix::identity(n, n), 1.0));
        p.forms = vec![neg, pos];
        p
    }

    #[test]
    fn scalar_lyapunov() {
        let r = solve_feasibility(&lyapunov(&Matrix::from_element(1, 1, -1.0)), &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Feasible);
        // max t: -2p <= -t, p >= t, p <= 1  =>  t* = 1 at p = 1
        assert!((r.margin - 1.0).abs() < 1e-6);
        let r = solve_feasibility(&lyapunov(&Matrix::from_element(1, 1, 1.0)), &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.upper_bound <= 1e-6);
    }

    #[test]
    fn matrix_lyapunov_margin_is_certified() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
        let prob = lyapunov(&a);
        let r = solve_feasibility(&prob, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Feasible);
        for f in &prob.forms {
            let g = f.evaluate(&r.values).unwrap();
            let eig = crate::linalg::eig_sym(&g).unwrap();
            match f.sense {
                Sense::Negative => assert!(eig[eig.len() - 1] <= -r.margin * (1.0 - 1e-9)),
                Sense::Positive => assert!(eig[0] >= r.margin * (1.0 - 1e-9)),
            }
        }
    }

    #[test]
    fn marginal_system_is_not_feasible() {
        let r = solve_feasibility(&lyapunov(&Matrix::zeros(2, 2)), &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
    }
}
