//! Sparse-vector and low-rank-matrix recovery with the non-convex `r_mu`
//! regularizer.
//!
//! The crate is organised bottom-up:
//!
//! * [`regularizers`]: closed-form evaluation of `r_mu`, `g = r_mu + x^2`,
//!   its subdifferential, and the proximal operators for `r_mu`, `card`,
//!   `l1` and their spectral counterparts.
//! * [`linear_ops`]: dense and structured linear operators, RIP-calibrated
//!   random operators, instance generators and the instance JSON schema.
//! * [`solver`]: the GIST proximal-linearisation loop and exact 1-D
//!   stationary-point enumeration.
//! * [`certificate`]: the RIP-based separation certificate for stationary
//!   points.
//! * [`experiments`]: seeded phase grids and the synthetic non-rigid
//!   structure-from-motion study.
//!
//! Matrices are flattened column-major everywhere a vector is expected.

pub mod certificate;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod linear_ops;
pub mod regularizers;
pub mod seed;
pub mod solver;

pub use error::{Error, Result};
