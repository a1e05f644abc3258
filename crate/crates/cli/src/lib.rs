//! Command-line front end: argument definitions, the versioned run report,
//! and the four commands. `main` only prints what [`execute`] returns, so the
//! whole contract (output bytes and exit code) is testable in-process.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ssa_core::dynamics::{self, SimConfig, SimStats, Verdict};
use ssa_core::lift::{self, Coupling};
use ssa_core::lmi::{self, Certificate, Method, MethodResult, Outcome, ResidualReport, SolveOptions};
use ssa_core::model::ValidationReport;
use ssa_core::structure::{self, Mechanism, StructureVerdict};
use ssa_core::{Error, Kind, Model};

pub const SCHEMA: &str = "ssa-report";
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ssa", version, about = "Mean-square admissibility of singular Markov jump systems with multiplicative noise")]
pub struct Cli {
    /// Print the run report as JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide admissibility with an LMI criterion or the moment oracle.
    Check(CheckArgs),
    /// Check a certificate by plugging it into the LMIs.
    Verify(VerifyArgs),
    /// Monte-Carlo estimate of E|x(t)|^2.
    Simulate(SimulateArgs),
    /// Write the lifted second-moment system as a single-mode model.
    Lift(LiftArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Thm3,
    Thm6,
    Cor1,
    Spectral,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CouplingArg {
    Adjoint,
    Direct,
}

impl From<CouplingArg> for Coupling {
    fn from(c: CouplingArg) -> Self {
        match c {
            CouplingArg::Adjoint => Coupling::Adjoint,
            CouplingArg::Direct => Coupling::Direct,
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    /// Strictness threshold on the LMI margin.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Direction of the mode coupling in the continuous lift (cor1 only).
    #[arg(long, value_enum, default_value = "adjoint")]
    pub coupling: CouplingArg,
    /// Where to write the certificate when the criterion is feasible.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run even when rank [E C(i)] > rank E or the transition matrix is invalid.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub model: PathBuf,
    pub certificate: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Final time (continuous) or number of steps (discrete).
    #[arg(long, default_value_t = 5.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, env = "SSA_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Initial mode, 1-based.
    #[arg(long)]
    pub r0: Option<usize>,
    /// Sampling intervals on [0, horizon] (continuous only).
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    /// Replace an inconsistent x0 by the consistent state with the same E x0.
    #[arg(long)]
    pub project_x0: bool,
    /// CSV destination; without it the CSV goes to stdout in text mode.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "adjoint")]
    pub coupling: CouplingArg,
    /// Model file destination; without it the model goes to stdout in text mode.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub path: String,
    pub kind: Kind,
    pub n: usize,
    pub modes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub outcome: Outcome,
    pub margin: f64,
    pub upper_bound: f64,
    pub iterations: usize,
    /// Plug-in verification of the solver's own certificate.
    pub verified: Option<bool>,
    pub diagnostics: Vec<String>,
}

impl MethodSummary {
    fn new(r: &MethodResult) -> Self {
        MethodSummary {
            method: r.method.as_str().into(),
            outcome: r.outcome,
            margin: r.margin,
            upper_bound: r.upper_bound,
            iterations: r.iterations,
            verified: r.verification.as_ref().map(|v| v.pass),
            diagnostics: r.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub paths: usize,
    pub seed: u64,
    pub horizon: f64,
    pub dt: Option<f64>,
    pub x0: Vec<f64>,
    pub r0: usize,
    pub initial_mean_sq: f64,
    pub final_mean_sq: f64,
    pub final_stderr: f64,
    /// `E|x(T)|^2 / E|x(0)|^2`; absent for a zero initial state.
    pub ratio: Option<f64>,
    pub diverged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LiftSummary {
    pub kind: Kind,
    pub dim: usize,
    pub rank_e: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub version: u32,
    pub command: &'static str,
    pub model: Option<ModelSummary>,
    pub validation: Option<ValidationReport>,
    pub structure: Option<StructureVerdict>,
    pub coupling: Option<&'static str>,
    pub methods: Vec<MethodSummary>,
    pub oracle: Option<Verdict>,
    pub verification: Option<ResidualReport>,
    pub simulation: Option<SimSummary>,
    pub lift: Option<LiftSummary>,
    /// Files written by the run.
    pub outputs: Vec<String>,
    pub diagnostics: Vec<String>,
    pub exit_code: i32,
}

impl RunReport {
    fn new(command: &'static str) -> Self {
        RunReport {
            schema: SCHEMA,
            version: SCHEMA_VERSION,
            command,
            model: None,
            validation: None,
            structure: None,
            coupling: None,
            methods: Vec::new(),
            oracle: None,
            verification: None,
            simulation: None,
            lift: None,
            outputs: Vec::new(),
            diagnostics: Vec::new(),
            exit_code: EXIT_OK,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.model {
            let _ = writeln!(out, "model {}: {} n={} N={}", m.path, m.kind, m.n, m.modes);
        }
        if let Some(v) = &self.validation {
            let _ = writeln!(
                out,
                "rank E = {}, rank [E C] = rank E: {}, regular: {}, transition ok: {}",
                v.rank_e,
                v.range_condition_holds(),
                v.regular.iter().all(|&b| b),
                v.transition_ok
            );
        }
        if let Some(s) = &self.structure {
            let _ = writeln!(out, "impulse-free: {}", s.impulse_free());
        }
        if let Some(c) = self.coupling {
            let _ = writeln!(out, "coupling: {c}");
        }
        for m in &self.methods {
            let _ = write!(out, "{}: {:?}, margin {:.6e} (bound {:.6e}, {} iterations)", m.method, m.outcome, m.margin, m.upper_bound, m.iterations);
            match m.verified {
                Some(true) => out += ", certificate verified\n",
                Some(false) => out += ", certificate FAILED verification\n",
                None => out.push('\n'),
            }
            for d in &m.diagnostics {
                let _ = writeln!(out, "  note: {d}");
            }
        }
        if let Some(o) = &self.oracle {
            let _ = writeln!(out, "oracle ({:?}): {} = {:.6}, {}", o.source, o.quantity, o.value, if o.stable { "stable" } else { "not stable" });
        }
        if let Some(v) = &self.verification {
            out += &v.text();
        }
        if let Some(s) = &self.simulation {
            let _ = writeln!(
                out,
                "simulated {} paths (seed {}): E|x|^2 {:.6e} -> {:.6e} (stderr {:.3e}), ratio {}",
                s.paths,
                s.seed,
                s.initial_mean_sq,
                s.final_mean_sq,
                s.final_stderr,
                s.ratio.map_or("n/a".to_string(), |r| format!("{r:.6e}"))
            );
            for w in &s.warnings {
                let _ = writeln!(out, "  warning: {w}");
            }
        }
        if let Some(l) = &self.lift {
            let _ = writeln!(out, "lifted {} system: dim {}, rank E = {}", l.kind, l.dim, l.rank_e);
        }
        for p in &self.outputs {
            let _ = writeln!(out, "wrote {p}");
        }
        for d in &self.diagnostics {
            if d.starts_with("error:") {
                let _ = writeln!(out, "{d}");
            } else {
                let _ = writeln!(out, "note: {d}");
            }
        }
        let _ = writeln!(out, "exit {}", self.exit_code);
        out
    }
}

/// Exit code for a library error.
pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Impulsive { .. } | Error::NonRegularPencil => EXIT_NEGATIVE,
        Error::NoConvergence(_) | Error::Singular(_) | Error::ShiftExhausted => EXIT_UNKNOWN,
        _ => EXIT_INPUT,
    }
}

struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(error_code(&e), e.to_string())
    }
}

type Step<T> = std::result::Result<T, Fail>;

pub struct Execution {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
    pub report: RunReport,
}

pub fn execute(cli: &Cli) -> Execution {
    let mut report = RunReport::new(match &cli.command {
        Command::Check(_) => "check",
        Command::Verify(_) => "verify",
        Command::Simulate(_) => "simulate",
        Command::Lift(_) => "lift",
    });
    let mut payload = None;
    let result = match &cli.command {
        Command::Check(a) => check(a, &mut report),
        Command::Verify(a) => verify(a, &mut report),
        Command::Simulate(a) => simulate(a, &mut report).map(|(code, csv)| {
            payload = csv;
            code
        }),
        Command::Lift(a) => lift_cmd(a, &mut report).map(|(code, json)| {
            payload = json;
            code
        }),
    };
    report.exit_code = match result {
        Ok(code) => code,
        Err(Fail(code, msg)) => {
            report.diagnostics.push(format!("error: {msg}"));
            code
        }
    };
    let (stdout, stderr) = match (cli.json, payload) {
        (true, _) => (report.to_json(), String::new()),
        // The data file goes to stdout, the summary to stderr.
        (false, Some(data)) if report.exit_code != EXIT_INPUT => (data, report.text()),
        (false, _) => (report.text(), String::new()),
    };
    Execution {
        code: report.exit_code,
        stdout,
        stderr,
        report,
    }
}

fn load(path: &Path, report: &mut RunReport) -> Step<Model> {
    let model = Model::load(path)?;
    report.model = Some(ModelSummary {
        path: path.display().to_string(),
        kind: model.kind,
        n: model.n(),
        modes: model.modes(),
    });
    Ok(model)
}

fn write_file(path: &Path, contents: &str, report: &mut RunReport) -> Step<()> {
    std::fs::write(path, contents).map_err(|e| Fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))?;
    report.outputs.push(path.display().to_string());
    Ok(())
}

fn outcome_code(o: Outcome) -> i32 {
    match o {
        Outcome::Feasible => EXIT_OK,
        Outcome::Infeasible => EXIT_NEGATIVE,
        Outcome::Unknown => EXIT_UNKNOWN,
    }
}

fn check(args: &CheckArgs, report: &mut RunReport) -> Step<i32> {
    let model = load(&args.model, report)?;
    report.coupling = Some(Coupling::from(args.coupling).as_str());
    let validation = model.validate()?;
    let admissible_input = validation.range_condition_holds() && validation.transition_ok;
    report.diagnostics.extend(validation.notes.iter().cloned());
    report.validation = Some(validation);
    if !admissible_input {
        if !args.force {
            return Err(Fail(EXIT_INPUT, "model violates rank [E C(i)] = rank E or has an invalid transition matrix; pass --force to run anyway".into()));
        }
        report.diagnostics.push("preconditions violated; running anyway (--force)".into());
    }

    let method = match (args.method, model.kind) {
        (MethodArg::Auto, Kind::Continuous) => Some(Method::Thm3),
        (MethodArg::Auto, Kind::Discrete) => Some(Method::Thm6),
        (MethodArg::Thm3, _) => Some(Method::Thm3),
        (MethodArg::Thm6, _) => Some(Method::Thm6),
        (MethodArg::Cor1, _) => Some(Method::Cor1),
        (MethodArg::Spectral, _) => None,
    };
    if let Some(m) = method {
        if m.kind() != model.kind {
            return Err(Fail(EXIT_INPUT, format!("{} applies to {} models, this one is {}", m.as_str(), m.kind(), model.kind)));
        }
    }

    // Structure and the moment oracle need the common restricted form.
    match structure::restricted_form(&model) {
        Ok(rf) => {
            let sv = structure::impulse_check(&model, &rf)?;
            let consistent = sv.consistent();
            let impulse_free = sv.impulse_free();
            let non_regular = sv.modes.iter().any(|m| m.mechanism == Mechanism::NonRegular);
            report.diagnostics.extend(sv.diagnostics.iter().cloned());
            report.structure = Some(sv);
            if !consistent {
                return Err(Fail(EXIT_UNKNOWN, "impulse tests disagree; structure is numerically undecided".into()));
            }
            if !impulse_free {
                let what = match (non_regular, model.kind) {
                    (true, _) => "a mode pencil is not regular",
                    (false, Kind::Continuous) => "a mode is impulsive",
                    (false, Kind::Discrete) => "a mode is not causal",
                };
                report.diagnostics.push(format!("not admissible: {what}"));
                return Ok(EXIT_NEGATIVE);
            }
            let ss = structure::slow_subsystem(&rf)?;
            match dynamics::moment_operator(&model, &ss).and_then(|op| dynamics::spectral_verdict(&op)) {
                Ok(v) => report.oracle = Some(v),
                Err(e) => report.diagnostics.push(format!("moment oracle unavailable: {e}")),
            }
        }
        Err(Error::AssumptionViolated { .. }) if args.force => {
            report.diagnostics.push("structure checks and moment oracle skipped: no common restricted form".into());
        }
        Err(e) => return Err(e.into()),
    }

    let Some(method) = method else {
        let oracle = report.oracle.as_ref().ok_or(Fail(EXIT_UNKNOWN, "spectral method needs the moment oracle".into()))?;
        return Ok(if oracle.stable { EXIT_OK } else { EXIT_NEGATIVE });
    };

    let opts = SolveOptions {
        eps: args.eps,
        ..SolveOptions::default()
    };
    let result = match method {
        Method::Thm3 => lmi::run_thm3(&model, &opts)?,
        Method::Thm6 => lmi::run_thm6(&model, &opts)?,
        _ => lmi::run_cor1(&model, args.coupling.into(), &opts)?,
    };
    report.methods.push(MethodSummary::new(&result));
    let mut code = outcome_code(result.outcome);

    if let Some(oracle) = &report.oracle {
        let agrees = match result.outcome {
            Outcome::Feasible => oracle.stable,
            Outcome::Infeasible => !oracle.stable,
            Outcome::Unknown => true,
        };
        if !agrees {
            report.diagnostics.push(format!(
                "{} is {:?} but the moment oracle says {} ({} = {:.6})",
                method.as_str(),
                result.outcome,
                if oracle.stable { "stable" } else { "not stable" },
                oracle.quantity,
                oracle.value
            ));
            if args.method == MethodArg::Auto {
                report.diagnostics.push("cross-check failed; verdict withheld".into());
                code = EXIT_UNKNOWN;
            }
        }
    } else if args.method == MethodArg::Auto {
        report.diagnostics.push("no moment oracle; LMI outcome not cross-checked".into());
    }

    if let (Some(cert), Some(path)) = (&result.certificate, &args.out) {
        if code == EXIT_OK {
            write_file(path, &certificate_json(cert)?, report)?;
        }
    }
    Ok(code)
}

fn certificate_json(cert: &Certificate) -> Step<String> {
    let mut s = cert.to_json()?;
    s.push('\n');
    Ok(s)
}

fn verify(args: &VerifyArgs, report: &mut RunReport) -> Step<i32> {
    let model = load(&args.model, report)?;
    let cert = Certificate::load(&args.certificate)?;
    if let Some(c) = cert.coupling {
        report.coupling = Some(c.as_str());
    }
    let res = lmi::verify_certificate(&model, &cert, args.tol)?;
    let pass = res.pass;
    report.verification = Some(res);
    Ok(if pass { EXIT_OK } else { EXIT_NEGATIVE })
}

/// Nonzero initial moments that end above where they started.
fn diverged(stats: &SimStats) -> bool {
    stats.mean_sq.iter().any(|v| !v.is_finite()) || stats.ratio().is_some_and(|r| r > 1.0)
}

fn simulate(args: &SimulateArgs, report: &mut RunReport) -> Step<(i32, Option<String>)> {
    let model = load(&args.model, report)?;
    let r0 = match args.r0 {
        Some(0) => return Err(Fail(EXIT_INPUT, "--r0 is 1-based".into())),
        Some(r) => Some(r - 1),
        None => None,
    };
    let cfg = SimConfig {
        paths: args.paths,
        horizon: args.horizon,
        dt: args.dt,
        seed: args.seed,
        x0: args.x0.clone(),
        r0,
        samples: args.samples,
        project_x0: args.project_x0,
    };
    let stats = dynamics::simulate(&model, &cfg).map_err(|e| match e {
        // Simulation presupposes an impulse-free model.
        Error::Impulsive { .. } | Error::NonRegularPencil => Fail(EXIT_INPUT, e.to_string()),
        e => e.into(),
    })?;
    let last = stats.times.len() - 1;
    let div = diverged(&stats);
    report.simulation = Some(SimSummary {
        paths: stats.paths,
        seed: args.seed,
        horizon: args.horizon,
        dt: (model.kind == Kind::Continuous).then_some(args.dt),
        x0: stats.x0.clone(),
        r0: stats.r0 + 1,
        initial_mean_sq: stats.mean_sq[0],
        final_mean_sq: stats.mean_sq[last],
        final_stderr: stats.stderr[last],
        ratio: stats.ratio(),
        diverged: div,
        warnings: stats.warnings.clone(),
    });
    if div {
        report.diagnostics.push("mean square grew over the horizon".into());
    }
    let code = if div { EXIT_NEGATIVE } else { EXIT_OK };
    let csv = stats.to_csv();
    match &args.out {
        Some(path) => {
            write_file(path, &csv, report)?;
            Ok((code, None))
        }
        None => Ok((code, Some(csv))),
    }
}

fn lift_cmd(args: &LiftArgs, report: &mut RunReport) -> Step<(i32, Option<String>)> {
    let model = load(&args.model, report)?;
    let ls = lift::lift(&model, args.coupling.into())?;
    if model.kind == Kind::Continuous {
        report.coupling = Some(ls.coupling.as_str());
    }
    report.lift = Some(LiftSummary {
        kind: ls.kind,
        dim: ls.dim(),
        rank_e: ssa_core::linalg::rank(&ls.e, None)?,
    });
    match dynamics::lifted_verdict(&ls) {
        Ok(v) => report.oracle = Some(v),
        Err(e) => report.diagnostics.push(format!("lifted verdict unavailable: {e}")),
    }
    let mut json = ls.to_model()?.to_json()?;
    json.push('\n');
    match &args.out {
        Some(path) => {
            write_file(path, &json, report)?;
            Ok((EXIT_OK, None))
        }
        None => Ok((EXIT_OK, Some(json))),
    }
}
