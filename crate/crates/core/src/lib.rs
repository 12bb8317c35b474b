pub mod dual;
pub mod error;
pub mod hamiltonian;
pub mod io;
pub mod loops;
pub mod ode;
pub mod runner;
pub mod symplectic;
pub mod verify;

pub use error::{Error, Result};
