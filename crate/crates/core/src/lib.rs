//! Desk-scale laboratory for preference optimization of a 2D conditional
//! diffusion model.
//!
//! The crate builds a DDPM-style forward/reverse process over 2D points, a
//! small conditional ε-prediction MLP with exact hand-rolled gradients, the
//! preference objectives (Diffusion-DPO, DDSPO in its generic, practical
//! and unpaired-efficient forms, DSPO and DSPO+CPP), seeded trainers, mode-
//! separation metrics and an N × β sweep harness over a multi-modal Gaussian
//! toy task.
//!
//! Everything is deterministic in (config, seed). The data-parallel inner
//! loops (sampling chains, batch gradients, sweep cells) run on rayon under
//! the default `parallel` feature and sequentially without it; both produce
//! identical bytes.

pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod net;
pub mod objectives;
mod par;
pub mod pipeline;
pub mod point;
pub mod rng;
pub mod schedule;
pub mod selfcheck;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
pub use point::Point2;
pub use schedule::NoiseSchedule;
