//! Self-similar spiral solutions of the 2D Euler equations in adapted coordinates.

pub mod certifier;
pub mod error;
pub mod grid_space;
pub mod nonlinear;
pub mod operators;
pub mod physical;
pub mod solver;

pub use error::{Error, Result};
