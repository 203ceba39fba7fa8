//! Numerical lab for the Vlasov–Poisson–Boltzmann system in a bounded convex
//! domain with diffuse reflection.

pub mod characteristics;
pub mod collision;
pub mod error;
pub mod field;
pub mod geometry;
pub mod math;
pub mod simulator;
pub mod singularity;
pub mod verify;
pub mod wall;

pub use error::{Error, Result};
pub use geometry::{BoundaryPoint, LevelSetDomain};
pub use math::{Mat3, Vec3};
