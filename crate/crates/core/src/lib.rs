//! Weighted finite elements for one-dimensional degenerate elliptic and
//! parabolic problems with diffusion `x^α`, truncated-domain approximation,
//! Carleman weight evaluation, observability and penalized HUM null control.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod carleman;
pub mod control;
pub mod elliptic;
pub mod error;
pub mod linalg;
pub mod logspace;
pub mod mesh;
pub mod parabolic;
pub mod quadrature;
pub mod sampling;
pub mod weights;

pub use error::{Error, Result};
pub use mesh::{Field, Mesh1D};
pub use parabolic::{SpaceTimeField, TimeGrid};
pub use weights::{CoefficientSpec, WeightSpec};
