//! Independent reference solutions: closed-form rod temperatures and
//! finite-difference solvers for the ring, sphere and square.

pub mod erfc;
pub mod fdm;
pub mod rod;

pub use erfc::{erfc, erfcx};
pub use fdm::{fdm_ring, fdm_sphere, fdm_square, FdmConfig, FdmGrid, FdmSolution};
pub use rod::{rod_temperature_constant_flux, rod_temperature_convective, RodParams};
