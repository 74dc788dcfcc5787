//! Individualized task-contrast prediction from resting-state connectomes
//! and group-average contrast maps, on icosphere meshes.

pub mod baselines;
pub mod cohort;
pub mod connectome;
pub mod error;
#[cfg(feature = "fs")]
pub mod io;
pub mod eval;
mod linalg;
pub mod mesh;
pub mod models;
pub mod nncore;
mod par;
pub mod seed;
pub mod synthdata;

pub use error::{Error, ErrorClass, Result};
