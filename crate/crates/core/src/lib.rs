//! Monte Carlo toolkit for stochastic Volterra games driven by time-changed
//! Levy noise.

pub mod backward;
pub mod calculus;
pub mod error;
pub mod forward;
pub mod game;
pub mod hamiltonian;
pub mod io;
pub mod noise;
pub mod scenarios;
pub mod table;

pub use error::{Error, Result};
