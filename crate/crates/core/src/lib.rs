//! Discontinuous Galerkin-induced neural networks.
//!
//! Each mesh element carries its own shallow tanh network; the networks are
//! trained against element-local weak residuals tested with monomials and
//! coupled through numerical fluxes and jump penalties. An interior-penalty
//! DG solver provides reference fields on the same meshes.

pub mod error;
pub mod geometry;

pub use error::{DgnnError, Result};
pub mod quadrature;
pub mod basis;
pub mod dg;
pub mod net;
pub mod loss;
pub mod optim;
pub mod problems;
pub mod experiment;
