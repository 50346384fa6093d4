//! Minimal differentiation engine used to train the hybrid surface model.
//!
//! Reverse mode runs over a [`Tape`] of 2-D arrays. Input derivatives of a
//! network (surface tangents, occupancy gradients) are obtained with
//! [`jvp`], whose tangents are themselves tape nodes, so losses built from
//! them can be differentiated with respect to the parameters.

pub mod checkpoint;
mod dual;
mod error;
pub mod finite_diff;
mod params;
mod tape;

pub use dual::{jvp, jvp_many, Dual};
pub use error::{AutodiffError, Result};
pub use params::{AdamConfig, ParameterSet};
pub use tape::{CustomOp, Gradients, Mat, ParamKey, Tape, Var};
