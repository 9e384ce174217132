//! Finite-difference solver for the clamped nonlinear Kirchhoff–Love plate and
//! numerical verification of its duality principles.

pub mod config;
pub mod dual1;
pub mod error;
pub mod expr;
pub mod gradcheck;
pub mod grid;
pub mod linalg;
pub mod material;
pub mod multidual;
pub mod primal;
pub mod primal_dual;
pub mod scenario;
pub mod spectrum;

pub use error::{Error, Result};
