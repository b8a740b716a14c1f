//! granubed: a desk-scale CFD-DEM solver for bubbling fluidized beds.
//!
//! The gas phase is advanced with an incompressible projection scheme on a
//! uniform staggered grid; every particle is tracked with a soft-sphere
//! (linear spring-dashpot) contact model and advanced in sub-steps, either
//! with a fixed step or with an error-controlled adaptive step. The grid is
//! split into boxes that are distributed over in-process ranks along a
//! Morton curve, with ghost particles and one-layer fluid halos exchanged
//! through a message-passing communicator.

pub mod bench;
pub mod config;
pub mod coupling;
pub mod decomp;
pub mod dem;
pub mod driver;
pub mod error;
pub mod fluid;
pub mod particles;
pub mod vec3;

pub use config::{DomainSpec, FluidProps, ParticleConstants, ParticleProps, SimConfig};
pub use error::{Error, Result};
pub use particles::ParticleStore;
