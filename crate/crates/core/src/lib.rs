//! Robust approximate dynamic programming.
//!
//! Exact robust dynamic programming for small models, robust projected value
//! iteration (RPVI) with linear features in exact and sampled form,
//! approximate robust policy iteration (ARPI), and a robust American-put
//! pricing experiment built on top of them.

pub mod arpi;
pub mod error;
pub mod exact;
pub mod instances;
pub mod linalg;
pub mod linear;
pub mod model;
pub mod pricing;
pub mod sampling;
pub mod sigma;

pub use error::{Error, Result};
pub use model::{NominalSelector, Policy, RobustMdp, UncertaintySet, ValueVector};
