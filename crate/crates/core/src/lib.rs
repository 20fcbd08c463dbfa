//! Gradient-free, reward-guided sampling for diffusion processes with
//! closed-form scores.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs: noise is drawn from counter-based streams keyed
//! by `(seed, timestep, candidate)`, so a run is reproducible regardless of
//! how candidate evaluation is scheduled. IO, the remote reward client and
//! the experiment harness live in the `gfguide` crate.
#![no_std]

extern crate alloc;

pub mod ensemble;
mod error;
pub mod guidance;
pub mod latent;
pub mod math;
pub mod models;
pub mod rewards;
pub mod rng;
pub mod schedule;

pub use error::{Error, RewardError};
pub use latent::{FrameSequence, LatentVideo};

pub type Result<T, E = Error> = core::result::Result<T, E>;
