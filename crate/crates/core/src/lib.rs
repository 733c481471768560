//! Robust Perspective-n-Point estimation.
//!
//! The main pipeline ([`pipeline::PnpNet`]) canonicalizes an instance, feeds
//! it to a small fully connected network for a coarse pose, and refines that
//! pose with a fixed number of iteratively reweighted Levenberg-Marquardt
//! layers ([`lm`]). Classical baselines ([`epnp`], [`ransac`]), a synthetic
//! data generator ([`synthgen`]), a trainer ([`trainer`]) and a benchmark
//! harness ([`evalbench`]) complete the toolkit.

mod error;

pub mod config;
pub mod epnp;
pub mod evalbench;
pub mod geometry;
pub mod io;
pub mod lm;
pub mod mlp;
pub mod opcount;
pub mod pipeline;
pub mod preprocess;
pub mod ransac;
pub mod scalar;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
