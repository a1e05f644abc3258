//! Certificates, plug-in verification, and the solve-then-verify entry points.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::assemble::{self, NonStrictProblem};
use super::form::{AffineMatrixForm, LmiProblem, Sense};
use super::solver::{solve_feasibility, SolveOptions, SolveStatus};
use crate::error::{Error, Result};
use crate::lift::{self, Coupling, LiftedSystem};
use crate::linalg::{self, Matrix};
use crate::model::{matrix_to_rows, Kind, Model};

/// Relative tolerance on `E^T F = 0` for a supplied `F`.
pub const PRECONDITION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Thm2,
    Thm3,
    Thm5,
    Thm6,
    Cor1,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Thm2 => "thm2",
            Method::Thm3 => "thm3",
            Method::Thm5 => "thm5",
            Method::Thm6 => "thm6",
            Method::Cor1 => "cor1",
        }
    }

    pub fn kind(self) -> Kind {
        match self {
            Method::Thm2 | Method::Thm3 | Method::Cor1 => Kind::Continuous,
            Method::Thm5 | Method::Thm6 => Kind::Discrete,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "thm2" => Ok(Method::Thm2),
            "thm3" => Ok(Method::Thm3),
            "thm5" => Ok(Method::Thm5),
            "thm6" => Ok(Method::Thm6),
            "cor1" => Ok(Method::Cor1),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub method: Method,
    /// One matrix per mode (a single lifted matrix for `cor1`).
    pub p: Vec<Matrix>,
    /// Per-mode `Q(i)` for `thm3`; a single matrix for `thm6` and `cor1`;
    /// empty for the non-strict methods.
    pub q: Vec<Matrix>,
    /// Null-space matrix used in the `Q` terms (`S` for `cor1`).
    pub f: Matrix,
    pub margin: Option<f64>,
    /// Lift convention, `cor1` only.
    pub coupling: Option<Coupling>,
}

fn matrix_value(m: &Matrix) -> Value {
    if m.is_empty() {
        json!([])
    } else {
        json!(matrix_to_rows(m))
    }
}

fn parse_matrix(v: &Value, what: &str) -> Result<Matrix> {
    match v {
        Value::Number(x) => Ok(Matrix::from_element(1, 1, x.as_f64().unwrap_or(f64::NAN))),
        Value::Array(rows) if rows.is_empty() => Ok(Matrix::zeros(0, 0)),
        Value::Array(rows) => {
            let parsed: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    r.as_array()
                        .ok_or_else(|| Error::Parse(format!("{what}: expected an array of rows")))?
                        .iter()
                        .map(|x| x.as_f64().ok_or_else(|| Error::Parse(format!("{what}: non-numeric entry"))))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?;
            if parsed.iter().all(|r| r.is_empty()) {
                return Ok(Matrix::zeros(parsed.len(), 0));
            }
            crate::model::matrix_from_rows(&parsed, what)
        }
        _ => Err(Error::Parse(format!("{what}: expected a matrix"))),
    }
}

fn parse_list(v: &Value, what: &str) -> Result<Vec<Matrix>> {
    v.as_array()
        .ok_or_else(|| Error::Parse(format!("{what}: expected a list of matrices")))?
        .iter()
        .enumerate()
        .map(|(i, m)| parse_matrix(m, &format!("{what}({})", i + 1)))
        .collect()
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        let q = match self.method {
            Method::Thm3 => Value::Array(self.q.iter().map(matrix_value).collect()),
            _ => self.q.first().map(matrix_value).unwrap_or(json!([])),
        };
        let mut obj = serde_json::Map::new();
        obj.insert("method".into(), json!(self.method.as_str()));
        obj.insert("P".into(), Value::Array(self.p.iter().map(matrix_value).collect()));
        obj.insert("Q".into(), q);
        obj.insert("F".into(), matrix_value(&self.f));
        obj.insert("margin".into(), self.margin.map_or(Value::Null, |m| json!(m)));
        if let Some(c) = self.coupling {
            obj.insert("coupling".into(), json!(c.as_str()));
        }
        Ok(serde_json::to_string_pretty(&Value::Object(obj))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Parse("certificate must be a JSON object".into()))?;
        for key in obj.keys() {
            if !["method", "P", "Q", "F", "margin", "coupling"].contains(&key.as_str()) {
                return Err(Error::Parse(format!("unknown certificate field '{key}'")));
            }
        }
        let method: Method = obj
            .get("method")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse("missing \"method\"".into()))?
            .parse()
            .map_err(Error::Parse)?;
        let p = parse_list(obj.get("P").ok_or_else(|| Error::Parse("missing \"P\"".into()))?, "P")?;
        let q = match (method, obj.get("Q")) {
            (_, None) | (_, Some(Value::Null)) => Vec::new(),
            (Method::Thm3, Some(v)) => parse_list(v, "Q")?,
            (_, Some(v)) => {
                let m = parse_matrix(v, "Q")?;
                if m.is_empty() {
                    Vec::new()
                } else {
                    vec![m]
                }
            }
        };
        let f = match obj.get("F") {
            None | Some(Value::Null) => Matrix::zeros(0, 0),
            Some(v) => parse_matrix(v, "F")?,
        };
        let margin = obj.get("margin").and_then(Value::as_f64);
        let coupling = match obj.get("coupling").and_then(Value::as_str) {
            Some(s) => Some(s.parse().map_err(Error::Parse)?),
            None => None,
        };
        Ok(Certificate {
            method,
            p,
            q,
            f,
            margin,
            coupling,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Multiplies every decision matrix by `alpha`; `F` is unchanged.
    pub fn scaled(&self, alpha: f64) -> Self {
        Certificate {
            p: self.p.iter().map(|m| m * alpha).collect(),
            q: self.q.iter().map(|m| m * alpha).collect(),
            margin: self.margin.map(|m| m * alpha),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    /// Value is the largest eigenvalue; passes below `-tol`.
    StrictNegative,
    /// Value is the smallest eigenvalue; passes above `tol`.
    StrictPositive,
    /// Value is the smallest eigenvalue; passes above `-tol`.
    Semidefinite,
    /// Value is a residual norm; passes below `tol` relative to the data scale.
    Equality,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintResidual {
    pub label: String,
    pub kind: ConstraintKind,
    pub value: f64,
    pub pass: bool,
    /// Checked on a derived certificate (the non-strict criterion implied by
    /// the strict one), not on the supplied variables directly.
    pub derived: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PreconditionReport {
    /// `E^T F`, flattened row-major.
    pub et_f: Vec<f64>,
    pub et_f_norm: f64,
    /// `E F`, flattened row-major; reported because the two annihilation
    /// conventions are easily confused.
    pub e_f: Vec<f64>,
    pub e_f_norm: f64,
    pub full_column_rank: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub method: Method,
    pub tol: f64,
    pub constraints: Vec<ConstraintResidual>,
    pub precondition: Option<PreconditionReport>,
    pub diagnostics: Vec<String>,
    pub pass: bool,
}

impl ResidualReport {
    pub fn constraint(&self, label: &str) -> Option<&ConstraintResidual> {
        self.constraints.iter().find(|c| c.label == label && !c.derived)
    }

    pub fn text(&self) -> String {
        let mut out = format!("verification of {} certificate (tol {:e})\n", self.method.as_str(), self.tol);
        for c in &self.constraints {
            let what = match c.kind {
                ConstraintKind::StrictNegative => "max eig",
                ConstraintKind::StrictPositive | ConstraintKind::Semidefinite => "min eig",
                ConstraintKind::Equality => "residual",
            };
            out += &format!(
                "  {:<4} {}{}: {what} = {:.6e}\n",
                if c.pass { "ok" } else { "FAIL" },
                c.label,
                if c.derived { " [derived]" } else { "" },
                c.value
            );
        }
        if let Some(p) = &self.precondition {
            out += &format!(
                "  {:<4} E^T F = 0: |E^T F| = {:.3e} (|E F| = {:.3e})\n",
                if p.pass { "ok" } else { "FAIL" },
                p.et_f_norm,
                p.e_f_norm
            );
        }
        for d in &self.diagnostics {
            out += &format!("  note: {d}\n");
        }
        out += if self.pass { "result: pass\n" } else { "result: fail\n" };
        out
    }
}

fn flatten(m: &Matrix) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

fn precondition(e: &Matrix, f: &Matrix) -> Result<PreconditionReport> {
    let etf = e.transpose() * f;
    let ef = e * f;
    let scale = (e.norm() * f.norm()).max(1.0);
    let full = f.ncols() == 0 || linalg::rank(f, None)? == f.ncols();
    Ok(PreconditionReport {
        et_f: flatten(&etf),
        et_f_norm: etf.norm(),
        e_f: flatten(&ef),
        e_f_norm: ef.norm(),
        full_column_rank: full,
        pass: etf.norm() <= PRECONDITION_TOL * scale && full,
    })
}

fn residual(form: &AffineMatrixForm, values: &[Matrix], tol: f64, derived: bool) -> Result<ConstraintResidual> {
    let g = form.evaluate(values)?;
    let eig = linalg::eig_sym(&linalg::symmetric_part(&g))?;
    let (kind, value, pass) = match form.sense {
        Sense::Negative => {
            let v = eig[eig.len() - 1];
            (ConstraintKind::StrictNegative, v, v < -tol)
        }
        Sense::Positive => (ConstraintKind::StrictPositive, eig[0], eig[0] > tol),
    };
    Ok(ConstraintResidual {
        label: form.label.clone(),
        kind,
        value,
        pass,
        derived,
    })
}

fn check_problem(problem: &LmiProblem, values: &[Matrix], tol: f64, derived: bool) -> Result<Vec<ConstraintResidual>> {
    problem.forms.iter().map(|f| residual(f, values, tol, derived)).collect()
}

fn check_nonstrict(ns: &NonStrictProblem, values: &[Matrix], tol: f64, derived: bool) -> Result<Vec<ConstraintResidual>> {
    let mut out = check_problem(&ns.problem, values, tol, derived)?;
    for f in &ns.semidefinite {
        let mut r = residual(f, values, tol, derived)?;
        r.kind = ConstraintKind::Semidefinite;
        r.pass = r.value >= -tol;
        out.push(r);
    }
    for eq in &ns.equalities {
        let lv = &eq.left * &values[eq.var];
        let res = (&lv - lv.transpose()).norm();
        let scale = lv.norm().max(1.0);
        out.push(ConstraintResidual {
            label: eq.label.clone(),
            kind: ConstraintKind::Equality,
            value: res,
            pass: res <= tol * scale,
            derived,
        });
    }
    Ok(out)
}

fn expect_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
    if m.shape() == (rows, cols) {
        return Ok(m.clone());
    }
    if m.is_empty() && rows * cols == 0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    Err(Error::CertificateMismatch(format!(
        "{what} is {}x{}, expected {rows}x{cols}",
        m.nrows(),
        m.ncols()
    )))
}

fn symmetric_list(list: &[Matrix], count: usize, n: usize, what: &str, diagnostics: &mut Vec<String>) -> Result<Vec<Matrix>> {
    if list.len() != count {
        return Err(Error::CertificateMismatch(format!(
            "{what} has {} matrices, expected {count}",
            list.len()
        )));
    }
    list.iter()
        .enumerate()
        .map(|(i, m)| {
            let m = expect_shape(m, n, n, &format!("{what}({})", i + 1))?;
            let skew = linalg::asymmetry(&m);
            if skew > 1e-8 * m.norm().max(1.0) {
                diagnostics.push(format!("{what}({}) is not symmetric (asymmetry {skew:.3e}); its symmetric part is used", i + 1));
            }
            Ok(linalg::symmetric_part(&m))
        })
        .collect()
}

fn certificate_f(n: usize, f: &Matrix) -> Result<Matrix> {
    if f.is_empty() {
        return Ok(Matrix::zeros(n, 0));
    }
    if f.nrows() != n {
        return Err(Error::CertificateMismatch(format!("F has {} rows, expected {n}", f.nrows())));
    }
    Ok(f.clone())
}

/// Plug-in check of a certificate against a model.
///
/// Strict forms are evaluated with the certificate's own `F`; the `E^T F = 0`
/// precondition is checked separately and is part of the overall verdict.
pub fn verify_certificate(model: &Model, cert: &Certificate, tol: f64) -> Result<ResidualReport> {
    if cert.method.kind() != model.kind {
        return Err(Error::CertificateMismatch(format!(
            "{} certificates apply to {} models",
            cert.method.as_str(),
            cert.method.kind()
        )));
    }
    let n = model.n();
    let modes = model.modes();
    let mut diagnostics = Vec::new();
    let mut constraints = Vec::new();
    let mut pre = None;
    match cert.method {
        Method::Thm3 => {
            let f = certificate_f(n, &cert.f)?;
            let k = f.ncols();
            let p = symmetric_list(&cert.p, modes, n, "P", &mut diagnostics)?;
            if cert.q.len() != modes && k > 0 {
                return Err(Error::CertificateMismatch(format!("Q has {} matrices, expected {modes}", cert.q.len())));
            }
            let q: Vec<Matrix> = (0..modes)
                .map(|i| match cert.q.get(i) {
                    Some(m) => expect_shape(m, k, n, &format!("Q({})", i + 1)),
                    None => Ok(Matrix::zeros(k, n)),
                })
                .collect::<Result<_>>()?;
            let problem = assemble::assemble_thm3(model, &f)?;
            let mut values = p.clone();
            if k > 0 {
                values.extend(q.iter().cloned());
            }
            constraints.extend(check_problem(&problem, &values, tol, false)?);
            for (i, pi) in p.iter().enumerate() {
                let epe = model.e.transpose() * pi * &model.e;
                constraints.push(ConstraintResidual {
                    label: format!("E^T P({}) E >= 0", i + 1),
                    kind: ConstraintKind::Semidefinite,
                    value: linalg::eig_sym(&linalg::symmetric_part(&epe))?[0],
                    pass: linalg::eig_sym(&linalg::symmetric_part(&epe))?[0] >= -tol,
                    derived: false,
                });
            }
            // The implied non-strict certificate P~(i) = P(i) E + F Q(i).
            let bar: Vec<Matrix> = p.iter().zip(&q).map(|(pi, qi)| pi * &model.e + &f * qi).collect();
            constraints.extend(check_nonstrict(&assemble::assemble_thm2(model)?, &bar, tol, true)?);
            pre = Some(precondition(&model.e, &f)?);
        }
        Method::Thm6 => {
            let f = certificate_f(n, &cert.f)?;
            let k = f.ncols();
            let p = symmetric_list(&cert.p, modes, n, "P", &mut diagnostics)?;
            let q = match cert.q.first() {
                Some(m) => linalg::symmetric_part(&expect_shape(m, k, k, "Q")?),
                None => Matrix::zeros(k, k),
            };
            if k > 0 && linalg::rank(&q, None)? < k {
                diagnostics.push("Q is singular (informational; the sufficiency argument does not need it)".into());
            }
            let problem = assemble::assemble_thm6(model, &f)?;
            let mut values = p.clone();
            if k > 0 {
                values.push(q.clone());
            }
            constraints.extend(check_problem(&problem, &values, tol, false)?);
            // The implied non-strict certificate X(i) = P(i) + F Q F^T.
            let fqf = &f * &q * f.transpose();
            let x: Vec<Matrix> = p.iter().map(|pi| pi + &fqf).collect();
            constraints.extend(check_nonstrict(&assemble::assemble_thm5(model)?, &x, tol, true)?);
            pre = Some(precondition(&model.e, &f)?);
        }
        Method::Thm2 => {
            let p: Vec<Matrix> = if cert.p.len() == modes {
                cert.p
                    .iter()
                    .enumerate()
                    .map(|(i, m)| expect_shape(m, n, n, &format!("P({})", i + 1)))
                    .collect::<Result<_>>()?
            } else {
                return Err(Error::CertificateMismatch(format!("P has {} matrices, expected {modes}", cert.p.len())));
            };
            constraints.extend(check_nonstrict(&assemble::assemble_thm2(model)?, &p, tol, false)?);
        }
        Method::Thm5 => {
            let p = symmetric_list(&cert.p, modes, n, "P", &mut diagnostics)?;
            constraints.extend(check_nonstrict(&assemble::assemble_thm5(model)?, &p, tol, false)?);
        }
        Method::Cor1 => {
            let coupling = cert.coupling.unwrap_or_default();
            let ls = lift::lift_continuous(model, coupling)?;
            let d = ls.dim();
            let s = certificate_f(d, &cert.f)?;
            let k = s.ncols();
            let p = symmetric_list(&cert.p, 1, d, "P", &mut diagnostics)?;
            let mut values = p;
            if k > 0 {
                let q = cert
                    .q
                    .first()
                    .ok_or_else(|| Error::CertificateMismatch("missing Q".into()))?;
                values.push(expect_shape(q, k, d, "Q")?);
            }
            constraints.extend(check_problem(&assemble::assemble_cor1(&ls, &s)?, &values, tol, false)?);
            pre = Some(precondition(&ls.e, &s)?);
        }
    }
    if let Some(p) = &pre {
        if !p.pass && p.e_f_norm <= PRECONDITION_TOL * p.et_f_norm.max(1.0) {
            diagnostics.push(format!(
                "supplied F satisfies E F = 0 instead of E^T F = 0 (|E^T F| = {:.3e}); the F-term does not vanish on the range of E",
                p.et_f_norm
            ));
        } else if !p.pass {
            diagnostics.push(format!("supplied F violates E^T F = 0 (|E^T F| = {:.3e})", p.et_f_norm));
        }
    }
    let pass = constraints.iter().all(|c| c.pass) && pre.as_ref().is_none_or(|p| p.pass);
    Ok(ResidualReport {
        method: cert.method,
        tol,
        constraints,
        precondition: pre,
        diagnostics,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Feasible,
    Infeasible,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub outcome: Outcome,
    /// Margin at the returned point (negative when infeasible).
    pub margin: f64,
    /// Upper bound on the achievable margin.
    pub upper_bound: f64,
    pub iterations: usize,
    pub certificate: Option<Certificate>,
    pub verification: Option<ResidualReport>,
    pub diagnostics: Vec<String>,
}

fn conclude(
    model: &Model,
    method: Method,
    problem: &LmiProblem,
    f: Matrix,
    coupling: Option<Coupling>,
    opts: &SolveOptions,
    mut diagnostics: Vec<String>,
) -> Result<MethodResult> {
    let r = solve_feasibility(problem, opts);
    let mut outcome = match &r.status {
        SolveStatus::Feasible => Outcome::Feasible,
        SolveStatus::Infeasible => Outcome::Infeasible,
        SolveStatus::Unknown(why) => {
            diagnostics.push(format!("solver: {why}"));
            Outcome::Unknown
        }
    };
    let (mut certificate, mut verification) = (None, None);
    if outcome == Outcome::Feasible {
        let modes = match method {
            Method::Cor1 => 1,
            _ => model.modes(),
        };
        let mut values = r.values.clone();
        let q = values.split_off(modes);
        let cert = Certificate {
            method,
            p: values,
            q,
            f,
            margin: Some(r.margin),
            coupling,
        };
        let report = verify_certificate(model, &cert, opts.eps / 10.0)?;
        if !report.pass {
            diagnostics.push("solver reported feasibility but the certificate failed plug-in verification".into());
            outcome = Outcome::Unknown;
        }
        certificate = Some(cert);
        verification = Some(report);
    }
    Ok(MethodResult {
        method,
        outcome,
        margin: r.margin,
        upper_bound: r.upper_bound,
        iterations: r.iterations,
        certificate,
        verification,
        diagnostics,
    })
}

pub fn run_thm3(model: &Model, opts: &SolveOptions) -> Result<MethodResult> {
    let f = assemble::build_f(&model.e)?;
    let problem = assemble::assemble_thm3(model, &f)?;
    conclude(model, Method::Thm3, &problem, f, None, opts, Vec::new())
}

pub fn run_thm6(model: &Model, opts: &SolveOptions) -> Result<MethodResult> {
    let f = assemble::build_f(&model.e)?;
    let problem = assemble::assemble_thm6(model, &f)?;
    conclude(model, Method::Thm6, &problem, f, None, opts, Vec::new())
}

pub fn run_cor1(model: &Model, coupling: Coupling, opts: &SolveOptions) -> Result<MethodResult> {
    let ls: LiftedSystem = lift::lift_continuous(model, coupling)?;
    let s = assemble::build_s(&ls)?;
    let problem = assemble::assemble_cor1(&ls, &s)?;
    let mut diagnostics = Vec::new();
    let d = ls.dim();
    if linalg::rank(&ls.a, Some(1e-10))? < d {
        diagnostics.push(
            "lifted drift matrix is singular, so the lifted pencil is not regular and no strict certificate can exist"
                .into(),
        );
    }
    conclude(model, Method::Cor1, &problem, s, Some(coupling), opts, diagnostics)
}

/// Solves the strict criterion matching the model's kind.
pub fn run_default(model: &Model, opts: &SolveOptions) -> Result<MethodResult> {
    match model.kind {
        Kind::Continuous => run_thm3(model, opts),
        Kind::Discrete => run_thm6(model, opts),
    }
}
