//! Variational inference for hybrid discrete/continuous factor graphs with
//! symmetry-aware (lifted) and coarse-to-fine execution modes.

pub mod autodiff;
pub mod error;
pub mod ext;
pub mod fit;
pub mod formula;
pub mod graph;
pub mod inference;
pub mod lifting;
pub mod models;
pub mod optimizer;
pub mod oracles;
pub mod potentials;
pub mod quadrature;
pub mod variational;

pub use error::{Error, Result};
