//! Flat extensions of truncated hermitian functionals on finitely presented
//! *-algebras.

pub mod algebra;
pub mod cli;
pub mod error;
pub mod filtration;
pub mod extension;
pub mod hankel;
pub mod io;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
