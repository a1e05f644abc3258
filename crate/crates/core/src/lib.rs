//! Mean-square admissibility of singular stochastic systems with Markovian
//! jumps and state-dependent noise.
//!
//! The crate covers both the continuous-time Itô form `E dx = A(r) x dt + C(r) x dw`
//! and the discrete-time form `E x(k+1) = A(r) x(k) + C(r) x(k) w(k)`:
//! structural checks (regularity, impulse-freeness/causality), the lifted
//! second-moment system, strict LMI criteria with a built-in feasibility
//! engine, and independent oracles (exact moment propagation and
//! Monte-Carlo simulation).

pub mod dynamics;
pub mod error;
pub mod lift;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod random;
pub mod structure;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{Kind, Model};
