//! Structured GAN training laboratory.
//!
//! Two adversarial games match joint distributions in the visible space
//! (`(x, z)` via critic `D_xz`, `(x, y)` via critic `D_xy`) and two
//! collaborative games minimize reconstruction error in the hidden space
//! (`R_y` through classifier `C`, `R_z` through inference network `I`),
//! all sharing one conditional generator `G(y, z)`.
//!
//! Everything is deterministic in the configured seeds and runs on a small
//! hand-rolled f64 tensor engine with reverse-mode autodiff.

mod error;

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod games;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
