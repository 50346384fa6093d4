//! Hybrid surface model: an atlas decoder and an occupancy decoder trained
//! jointly so that the atlas surface lies on the occupancy level set and the
//! two normal fields agree.

pub mod config;
pub mod dataset;
mod error;
pub mod evaluate;
pub mod extract;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod render;
pub mod nn;
pub mod trainer;

pub use error::{CoreError, Result};
