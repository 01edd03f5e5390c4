//! Nonlocal cohesive-dynamics solver on uniform lattices.
//!
//! Bond-based model with a double-well potential: bonds respond elastically at
//! small strain and soften monotonically past a critical strain, so the
//! dynamics can carry fracture-like features without spatial derivatives of
//! the displacement. The crate provides
//!
//! - the potential family, influence function, and every computable constant
//!   derived from them ([`potential`]),
//! - the uniform lattice with horizon stencil, boundary taper, nodal fields,
//!   and discrete norms ([`grid`]),
//! - the nonlocal force, energies, and the force Lipschitz diagnostic
//!   ([`force`]),
//! - forward Euler and the implicit one-step theta family with an energy
//!   stability check ([`integrate`]),
//! - local spectral stability analysis under radial perturbations
//!   ([`stability`]),
//! - a manufactured-solution verification harness with refinement studies,
//!   rate fitting, and a-priori error bounds ([`study`]),
//! - a command-line surface tying it together ([`cli`], [`config`]).

pub mod cli;
pub mod config;
pub mod error;
pub mod force;
pub mod grid;
pub mod integrate;
pub mod potential;
pub mod stability;
pub mod study;

pub use error::{Error, Result};
