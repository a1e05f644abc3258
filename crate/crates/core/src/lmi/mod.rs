//! LMI criteria, a feasibility engine, and certificate verification.

pub mod assemble;
pub mod certificate;
pub mod form;
pub mod solver;

pub use assemble::{assemble_cor1, assemble_thm2, assemble_thm3, assemble_thm5, assemble_thm6, build_f, build_s};
pub use certificate::{
    run_cor1, run_default, run_thm3, run_thm6, verify_certificate, Certificate, ConstraintKind, Method,
    MethodResult, Outcome, ResidualReport,
};
pub use form::{AffineMatrixForm, LmiProblem, Sense, Term, VarSpec};
pub use solver::{solve_feasibility, SolveOptions, SolveResult, SolveStatus};
