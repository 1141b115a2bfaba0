//! Particle simulation of a repulsive Vlasov-Poisson plasma coupled to point charges.
//!
//! The plasma is a weighted ensemble of macroparticles advected along characteristics;
//! charges interact with it through a sphere-regularized Coulomb kernel. The
//! [`diagnostics`] module turns energy functionals and scattering inequalities into
//! runtime monitors.

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod io;
pub mod kernels;
pub mod oracle;
pub mod phase;
pub mod sampling;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::Vec3;
