//! Numerical verification toolkit for quaternionic contact geometry.
//!
//! The crate builds the two flat-model geometries of the subject — the
//! quaternionic Heisenberg group and the 3-Sasakian round sphere — assembles
//! the canonical connection adapted to their contact structure, and checks the
//! tensor identities, eigenvalue relations and conformal-map formulas those
//! spaces satisfy, reporting a residual for every identity.
//!
//! The differentiation engine is truncated Taylor (jet) arithmetic: every
//! geometric quantity is an algebraic formula in the ambient coordinates, so
//! jets give derivatives that are exact to roundoff up to total order four.

pub mod error;
pub mod jet;
pub mod scalar;
pub mod quat;
pub mod linalg;
pub mod models;
pub mod tensor;
pub mod biquard;
pub mod operators;
pub mod conformal;

pub use error::{QcError, Result};
