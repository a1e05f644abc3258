//! Ground-truth oracles: exact second-moment propagation on the slow
//! subsystem, spectral stability verdicts, and Monte-Carlo simulation.
//!
//! Everything runs in the slow coordinate `xi1` of the common restricted
//! form; the algebraic part is re-solved in whichever mode is active, so
//! `xi1` is continuous across jumps.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lift::LiftedSystem;
use crate::linalg::{self, smat, svec, svec_len, Matrix, Spectrum, Vector};
use crate::model::{Kind, Model};
use crate::structure::{self, SlowPart, SlowSubsystem};

/// Linear map on stacked `svec(M_i)`, `M_i = E[xi1 xi1^T 1{r = i}]`.
#[derive(Debug, Clone)]
pub struct MomentOperator {
    pub kind: Kind,
    pub rank: usize,
    pub modes: usize,
    pub l: Matrix,
    /// `E|x|^2 = weights . psi`, with `psi` the stacked moments.
    pub weights: Vector,
}

/// Matrix of `X -> f(X)` on symmetric `r x r` matrices in svec coordinates.
fn svec_operator(r: usize, f: impl Fn(&Matrix) -> Matrix) -> Result<Matrix> {
    let d = svec_len(r);
    let mut out = Matrix::zeros(d, d);
    for k in 0..d {
        let mut unit = vec![0.0; d];
        unit[k] = 1.0;
        out.set_column(k, &svec(&f(&smat(&unit, r)?))?);
    }
    Ok(out)
}

/// `tr(S M) = w . svec(M)` for symmetric `S`.
fn trace_weights(s: &Matrix) -> Vector {
    let r = s.nrows();
    Vector::from_iterator(
        svec_len(r),
        (0..r).flat_map(|k| (k..r).map(move |j| if k == j { s[(k, k)] } else { 2.0 * s[(k, j)] })),
    )
}

pub fn moment_operator(model: &Model, ss: &SlowSubsystem) -> Result<MomentOperator> {
    let r = ss.rank;
    let modes = model.modes();
    let d = svec_len(r);
    let mut l = Matrix::zeros(d * modes, d * modes);
    for i in 0..modes {
        let (a, c) = (&ss.a1[i], &ss.c1[i]);
        match model.kind {
            Kind::Continuous => {
                let op = svec_operator(r, |m| a * m + m * a.transpose() + c * m * c.transpose())?;
                let mut block = l.view_mut((i * d, i * d), (d, d));
                block += op;
                for j in 0..modes {
                    // d/dt M_i gains sum_j pi_ji M_j.
                    let pji = model.transition[(j, i)];
                    let mut b = l.view_mut((i * d, j * d), (d, d));
                    b += Matrix::identity(d, d) * pji;
                }
            }
            Kind::Discrete => {
                let op = svec_operator(r, |m| a * m * a.transpose() + c * m * c.transpose())?;
                for j in 0..modes {
                    let lij = model.transition[(i, j)];
                    let mut b = l.view_mut((j * d, i * d), (d, d));
                    b += &op * lij;
                }
            }
        }
    }
    let mut weights = Vector::zeros(d * modes);
    for (i, g) in ss.reconstruction.iter().enumerate() {
        weights.rows_mut(i * d, d).copy_from(&trace_weights(&(g.transpose() * g)));
    }
    Ok(MomentOperator {
        kind: model.kind,
        rank: r,
        modes,
        l,
        weights,
    })
}

impl MomentOperator {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Stacked moments of a deterministic start `xi1(0)` in mode `r0`.
    pub fn initial_moments(&self, xi0: &Vector, r0: usize) -> Result<Vector> {
        let d = svec_len(self.rank);
        let mut psi = Vector::zeros(self.dim());
        psi.rows_mut(r0 * d, d).copy_from(&svec(&(xi0 * xi0.transpose()))?);
        Ok(psi)
    }

    /// Moments at time `t` (continuous) or after `t` steps (discrete).
    pub fn propagate(&self, psi0: &Vector, t: f64) -> Vector {
        match self.kind {
            Kind::Continuous => (&self.l * t).exp() * psi0,
            Kind::Discrete => {
                let mut psi = psi0.clone();
                for _ in 0..(t.round() as usize) {
                    psi = &self.l * psi;
                }
                psi
            }
        }
    }

    pub fn mean_square(&self, psi: &Vector) -> f64 {
        self.weights.dot(psi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictSource {
    MomentOperator,
    /// Finite part of a regular lifted pencil.
    LiftedPencil,
    /// Lifted dynamics restricted to the moments of consistent states.
    LiftedConsistent,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub kind: Kind,
    pub source: VerdictSource,
    /// `abscissa` (continuous) or `radius` (discrete).
    pub quantity: &'static str,
    pub value: f64,
    /// Distance to the stability boundary; positive when stable.
    pub margin: f64,
    pub stable: bool,
    /// `(re, im)` pairs, sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
}

fn verdict(kind: Kind, source: VerdictSource, spectrum: Spectrum) -> Verdict {
    let (quantity, value, margin) = match kind {
        Kind::Continuous => ("abscissa", spectrum.abscissa, -spectrum.abscissa),
        Kind::Discrete => ("radius", spectrum.radius, 1.0 - spectrum.radius),
    };
    Verdict {
        kind,
        source,
        quantity,
        value,
        margin,
        stable: margin > 0.0,
        eigenvalues: spectrum.eigenvalues.iter().map(|z| (z.re, z.im)).collect(),
    }
}

/// Stable iff the abscissa of `L` is negative (continuous) or its radius is
/// below one (discrete). The boundary counts as not stable.
pub fn spectral_verdict(op: &MomentOperator) -> Result<Verdict> {
    Ok(verdict(op.kind, VerdictSource::MomentOperator, linalg::eig_general(&op.l)?))
}

const CONSISTENT_RESIDUAL_TOL: f64 = 1e-8;

/// Verdict from the lifted system alone.
///
/// A regular lifted pencil is reduced to its finite part. When the descriptor
/// is singular the continuous lift is never regular (the left null vectors of
/// `E` give a common left null vector of both lifted matrices), so the lift
/// is restricted to the moments of states that satisfy the algebraic
/// constraints, where it becomes an ordinary linear system.
pub fn lifted_verdict(ls: &LiftedSystem) -> Result<Verdict> {
    match structure::pencil_slow_part(&ls.e, &ls.a) {
        Ok(SlowPart { j, .. }) => Ok(verdict(ls.kind, VerdictSource::LiftedPencil, linalg::eig_general(&j)?)),
        Err(Error::NonRegularPencil) => {
            let t = ls.consistent.as_ref().ok_or(Error::NonRegularPencil)?;
            let et = &ls.e * t;
            if linalg::rank(&et, Some(1e-9))? < t.ncols() {
                return Err(Error::NonRegularPencil);
            }
            let at = &ls.a * t;
            let j = linalg::pinv(&et)? * &at;
            let residual = (&at - &et * &j).norm();
            if residual > CONSISTENT_RESIDUAL_TOL * at.norm().max(1.0) {
                return Err(Error::NonRegularPencil);
            }
            Ok(verdict(ls.kind, VerdictSource::LiftedConsistent, linalg::eig_general(&j)?))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub paths: usize,
    /// Continuous: final time. Discrete: number of steps.
    pub horizon: f64,
    /// Euler-Maruyama step (continuous only).
    pub dt: f64,
    pub seed: u64,
    /// Initial state in original coordinates; defaults to the model's `x0`
    /// or to the consistent state with all slow coordinates equal to one.
    pub x0: Option<Vec<f64>>,
    /// Initial mode (0-based); defaults to the model's `r0` or mode 0.
    pub r0: Option<usize>,
    /// Number of sampling intervals on `[0, horizon]` (continuous only;
    /// discrete runs sample every step).
    pub samples: usize,
    /// Replace an inconsistent `x0` by the consistent state with the same
    /// slow coordinates (hence the same `E x0`) instead of rejecting it.
    pub project_x0: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            paths: 1000,
            horizon: 5.0,
            dt: 1e-3,
            seed: 0,
            x0: None,
            r0: None,
            samples: 50,
            project_x0: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimStats {
    pub kind: Kind,
    pub paths: usize,
    pub times: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `occupation[s][i]`: fraction of paths in mode `i` at sample `s`.
    pub occupation: Vec<Vec<f64>>,
    /// The initial state actually used.
    pub x0: Vec<f64>,
    pub r0: usize,
    pub warnings: Vec<String>,
}

impl SimStats {
    pub fn to_csv(&self) -> String {
        let modes = self.occupation.first().map_or(0, Vec::len);
        let mut out = String::from("time,mean_sq_norm,stderr");
        for i in 0..modes {
            let _ = write!(out, ",occ_{}", i + 1);
        }
        out.push('\n');
        for s in 0..self.times.len() {
            let _ = write!(out, "{:.6},{:.12e},{:.12e}", self.times[s], self.mean_sq[s], self.stderr[s]);
            for occ in &self.occupation[s] {
                let _ = write!(out, ",{occ:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// `E|x(T)|^2 / E|x(0)|^2`, or `None` for a zero initial state.
    pub fn ratio(&self) -> Option<f64> {
        let first = *self.mean_sq.first()?;
        let last = *self.mean_sq.last()?;
        (first > 0.0).then(|| last / first)
    }
}

fn validate_config(model: &Model, cfg: &SimConfig) -> Result<()> {
    if cfg.paths == 0 {
        return Err(Error::InvalidConfig("paths must be at least 1".into()));
    }
    if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    if model.kind == Kind::Continuous {
        if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if cfg.samples == 0 {
            return Err(Error::InvalidConfig("samples must be at least 1".into()));
        }
    } else if cfg.horizon.fract() != 0.0 {
        return Err(Error::InvalidConfig("discrete horizon is a whole number of steps".into()));
    }
    Ok(())
}

/// Initial slow coordinates and the (possibly projected) initial state.
pub fn initial_state(model: &Model, ss: &SlowSubsystem, x0: Option<&[f64]>, r0: usize, project: bool) -> Result<(Vector, Vector)> {
    let g = &ss.reconstruction[r0];
    let Some(x0) = x0 else {
        let xi = Vector::from_element(ss.rank, 1.0);
        return Ok((g * &xi, xi));
    };
    if x0.len() != model.n() {
        return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), model.n())));
    }
    let x = Vector::from_column_slice(x0);
    let xi = &ss.slow_projection * &x;
    let consistent = g * &xi;
    let gap = (&consistent - &x).norm();
    if gap > 1e-9 * x.norm().max(1.0) {
        if !project {
            return Err(Error::InconsistentInitialState(format!(
                "x0 violates the algebraic constraint of mode {} by {gap:.3e}; pass the projection option to keep its slow part",
                r0 + 1
            )));
        }
        return Ok((consistent, xi));
    }
    Ok((x, xi))
}

struct PathRecord {
    sq: Vec<f64>,
    mode: Vec<usize>,
}

struct Chain<'a> {
    transition: &'a Matrix,
}

impl Chain<'_> {
    fn holding(&self, mode: usize, rng: &mut ChaCha8Rng) -> f64 {
        let rate = -self.transition[(mode, mode)];
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        // Inverse CDF on (0, 1].
        let u: f64 = 1.0 - rng.random::<f64>();
        -u.ln() / rate
    }

    fn jump(&self, mode: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = self.transition.nrows();
        let rate = -self.transition[(mode, mode)];
        let target = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut last = mode;
        for j in (0..n).filter(|&j| j != mode) {
            let q = self.transition[(mode, j)];
            if q <= 0.0 {
                continue;
            }
            acc += q;
            last = j;
            if target < acc {
                return j;
            }
        }
        last
    }

    fn step(&self, mode: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = self.transition.nrows();
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        let mut last = mode;
        for j in 0..n {
            let p = self.transition[(mode, j)];
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
        last
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn simulate_continuous_path(ss: &SlowSubsystem, chain: &Chain, xi0: &Vector, r0: usize, times: &[f64], dt: f64, rng: &mut ChaCha8Rng) -> PathRecord {
    let mut xi = xi0.clone();
    let mut mode = r0;
    let mut t = 0.0;
    let mut next_jump = chain.holding(mode, rng);
    let mut rec = PathRecord {
        sq: Vec::with_capacity(times.len()),
        mode: Vec::with_capacity(times.len()),
    };
    for &target in times {
        while target - t > 1e-12 * target.max(1.0) {
            let mut h = dt.min(target - t);
            let jumps = next_jump - t <= h;
            if jumps {
                h = (next_jump - t).max(0.0);
            }
            let dw: f64 = rng.sample::<f64, _>(StandardNormal) * h.sqrt();
            xi = &xi + (&ss.a1[mode] * &xi) * h + (&ss.c1[mode] * &xi) * dw;
            if jumps {
                t = next_jump;
                mode = chain.jump(mode, rng);
                next_jump = t + chain.holding(mode, rng);
            } else {
                t += h;
            }
        }
        t = target;
        rec.sq.push((&ss.reconstruction[mode] * &xi).norm_squared());
        rec.mode.push(mode);
    }
    rec
}

fn simulate_discrete_path(ss: &SlowSubsystem, chain: &Chain, xi0: &Vector, r0: usize, steps: usize, rng: &mut ChaCha8Rng) -> PathRecord {
    let mut xi = xi0.clone();
    let mut mode = r0;
    let mut rec = PathRecord {
        sq: Vec::with_capacity(steps + 1),
        mode: Vec::with_capacity(steps + 1),
    };
    rec.sq.push((&ss.reconstruction[mode] * &xi).norm_squared());
    rec.mode.push(mode);
    for _ in 0..steps {
        let w: f64 = rng.sample(StandardNormal);
        xi = &ss.a1[mode] * &xi + (&ss.c1[mode] * &xi) * w;
        mode = chain.step(mode, rng);
        rec.sq.push((&ss.reconstruction[mode] * &xi).norm_squared());
        rec.mode.push(mode);
    }
    rec
}

/// Monte-Carlo estimate of `E|x|^2` and mode occupation.
///
/// Paths use independent ChaCha streams keyed by `(seed, path index)` and are
/// reduced in path order, so the output does not depend on thread scheduling.
pub fn simulate(model: &Model, cfg: &SimConfig) -> Result<SimStats> {
    validate_config(model, cfg)?;
    let rf = structure::restricted_form(model)?;
    let ss = structure::slow_subsystem(&rf)?;
    let modes = model.modes();
    let r0 = cfg.r0.or(model.r0).unwrap_or(0);
    if r0 >= modes {
        return Err(Error::InvalidConfig(format!("r0 = {} exceeds N = {modes}", r0 + 1)));
    }
    let x0 = cfg.x0.as_deref().or(model.x0.as_deref());
    let (x_init, xi0) = initial_state(model, &ss, x0, r0, cfg.project_x0)?;

    let mut warnings = Vec::new();
    let times: Vec<f64> = match model.kind {
        Kind::Continuous => {
            let worst = ss.a1.iter().map(|a| a.norm()).fold(0.0, f64::max);
            if cfg.dt * worst > 0.1 {
                warnings.push(format!(
                    "dt * |A1| = {:.3} exceeds 0.1; Euler-Maruyama may be inaccurate or unstable",
                    cfg.dt * worst
                ));
            }
            (0..=cfg.samples).map(|s| cfg.horizon * s as f64 / cfg.samples as f64).collect()
        }
        Kind::Discrete => (0..=cfg.horizon as usize).map(|k| k as f64).collect(),
    };
    let chain = Chain {
        transition: &model.transition,
    };
    let records: Vec<PathRecord> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            match model.kind {
                Kind::Continuous => simulate_continuous_path(&ss, &chain, &xi0, r0, &times[1..], cfg.dt, &mut rng),
                Kind::Discrete => simulate_discrete_path(&ss, &chain, &xi0, r0, cfg.horizon as usize, &mut rng),
            }
        })
        .collect();

    let samples = times.len();
    let n = cfg.paths as f64;
    let initial = x_init.norm_squared();
    let mut mean_sq = vec![0.0; samples];
    let mut stderr = vec![0.0; samples];
    let mut occupation = vec![vec![0.0; modes]; samples];
    for s in 0..samples {
        let value = |rec: &PathRecord| match model.kind {
            Kind::Continuous if s == 0 => initial,
            Kind::Continuous => rec.sq[s - 1],
            Kind::Discrete => rec.sq[s],
        };
        let mode = |rec: &PathRecord| match model.kind {
            Kind::Continuous if s == 0 => r0,
            Kind::Continuous => rec.mode[s - 1],
            Kind::Discrete => rec.mode[s],
        };
        let mean = records.iter().map(value).sum::<f64>() / n;
        let var = if cfg.paths > 1 {
            records.iter().map(|r| (value(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean_sq[s] = mean;
        stderr[s] = (var / n).sqrt();
        for rec in &records {
            occupation[s][mode(rec)] += 1.0 / n;
        }
    }
    Ok(SimStats {
        kind: model.kind,
        paths: cfg.paths,
        times,
        mean_sq,
        stderr,
        occupation,
        x0: x_init.iter().copied().collect(),
        r0,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{restricted_form, slow_subsystem};

    fn mat(r: usize, c: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(r, c, v)
    }

    #[test]
    fn scalar_deterministic_operator() {
        let m = Model::new(Kind::Continuous, mat(1, 1, &[1.0]), vec![mat(1, 1, &[-0.3])], vec![mat(1, 1, &[0.0])], mat(1, 1, &[0.0])).unwrap();
        let ss = slow_subsystem(&restricted_form(&m).unwrap()).unwrap();
        let op = moment_operator(&m, &ss).unwrap();
        assert!((op.l[(0, 0)] + 0.6).abs() < 1e-15);
        let v = spectral_verdict(&op).unwrap();
        assert!(v.stable && (v.value + 0.6).abs() < 1e-14);
    }

    #[test]
    fn zero_operator_is_on_the_boundary() {
        let m = Model::new(Kind::Continuous, mat(1, 1, &[1.0]), vec![mat(1, 1, &[0.0])], vec![mat(1, 1, &[0.0])], mat(1, 1, &[0.0])).unwrap();
        let ss = slow_subsystem(&restricted_form(&m).unwrap()).unwrap();
        assert!(!spectral_verdict(&moment_operator(&m, &ss).unwrap()).unwrap().stable);
    }

    #[test]
    fn lyapunov_operator_matches_kronecker_sum() {
        let a = mat(2, 2, &[-1.0, 0.5, 0.2, -0.7]);
        let m = Model::new(Kind::Continuous, Matrix::identity(2, 2), vec![a.clone()], vec![Matrix::zeros(2, 2)], mat(1, 1, &[0.0])).unwrap();
        let ss = slow_subsystem(&restricted_form(&m).unwrap()).unwrap();
        let op = moment_operator(&m, &ss).unwrap();
        let mut got: Vec<f64> = linalg::eig_general(&op.l).unwrap().eigenvalues.iter().map(|z| z.re).collect();
        let ev: Vec<f64> = linalg::eig_general(&a).unwrap().eigenvalues.iter().map(|z| z.re).collect();
        let mut want = vec![2.0 * ev[0], ev[0] + ev[1], 2.0 * ev[1]];
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_initial_state_gives_zero_statistics() {
        let m = Model::new(Kind::Continuous, mat(1, 1, &[1.0]), vec![mat(1, 1, &[-0.3])], vec![mat(1, 1, &[0.5])], mat(1, 1, &[0.0])).unwrap();
        let cfg = SimConfig {
            paths: 20,
            horizon: 1.0,
            x0: Some(vec![0.0]),
            samples: 4,
            ..SimConfig::default()
        };
        let s = simulate(&m, &cfg).unwrap();
        assert!(s.mean_sq.iter().all(|&v| v == 0.0));
        assert!(s.ratio().is_none());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let m = Model::new(Kind::Continuous, mat(1, 1, &[1.0]), vec![mat(1, 1, &[-0.3])], vec![mat(1, 1, &[0.0])], mat(1, 1, &[0.0])).unwrap();
        for cfg in [
            SimConfig { paths: 0, ..SimConfig::default() },
            SimConfig { dt: 0.0, ..SimConfig::default() },
            SimConfig { horizon: -1.0, ..SimConfig::default() },
        ] {
            assert!(matches!(simulate(&m, &cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
