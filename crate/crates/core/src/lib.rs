//! Explicit material point method heat conduction with nonconforming Neumann
//! boundaries imposed through a virtual heat flux field.

pub mod boundary;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod oracles;
pub mod particles;
pub mod scenario;
pub mod solver;
pub mod transfer;

/// Spatial vector; the third component is zero in 2D.
pub type Vec3 = [f64; 3];

pub use error::{Error, Result};
pub use grid::{build_grid, Grid, Locator, Stencil};
pub use particles::ParticleSet;
