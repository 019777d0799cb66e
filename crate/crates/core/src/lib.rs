//! Simulation and verification of spill-free feedback stabilization of a
//! moving tank filled with viscous liquid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod controller;
pub mod discrete;
pub mod error;
pub mod functionals;
pub mod model;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
