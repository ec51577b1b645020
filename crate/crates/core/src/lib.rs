//! Nonholonomic ball bearings: reduced dynamics, first integrals, invariant
//! measures and quadratures for the spherical bearing in its four configurations
//! and for the planar bearing.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod ansatz;
pub mod error;
pub mod geometry;
pub mod invariants;
pub mod ode;
pub mod planar;
pub mod quadrature;
pub mod sampling;
pub mod spherical;

pub use error::{Error, Result};
pub use geometry::{
    derive_params, hat, vee, Ball, Configuration, DerivedGeometry, Mat3, SphericalParams, Vec3,
};
pub use spherical::{FullState, ReducedModel, ReducedState};
