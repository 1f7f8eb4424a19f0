//! Physics-grounded haze synthesis and ODE dehazing.
//!
//! The crate models haze formation with the atmospheric scattering model,
//! synthesizes non-homogeneous paired datasets via a Brownian-walk density
//! field, estimates transmission with the dark channel prior, and dehazes by
//! integrating a per-pixel ODE whose exact velocity is `J - A`. Velocity
//! fields are pluggable: the analytic oracle verifies the solver end to end,
//! and learned fields (see the companion flow crate) slot into the same
//! trait.

pub mod asm;
pub mod dcp;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod manifest;
pub mod mcbm;
pub mod metrics;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use image::{AtmosphericLight, ImageRGB, ScalarField};
pub use rng::Rng;
