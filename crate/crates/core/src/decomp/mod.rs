//! Box decomposition of the grid, Morton-curve rank assignment, the
//! in-process rank communicator, and the particle/fluid exchanges that run
//! over it.

pub mod boxes;
pub mod comm;
pub mod ghosts;
pub mod halo;
pub mod redistribute;
pub mod sfc;
pub mod wire;

pub use boxes::{decompose, BoxDecomposition, GridBox};
pub use comm::{run_ranks, Comm};
pub use ghosts::{exchange_ghosts, GhostPlan};
pub use halo::{exchange_face_halos, HaloPlan};
pub use redistribute::{redistribute, RedistributeStats};
pub use sfc::{morton_key, sfc_assign};
