//! Preference-data toolchain for aligning generative models with
//! multi-dimensional quality scores.
//!
//! The crate is organised as a pipeline:
//!
//! - [`scores`]: parse raw per-dimension score files, normalise, aggregate
//!   into an OmniScore and run dataset analyses.
//! - [`pairing`]: build winner/loser preference pairs per prompt.
//! - [`reweight`]: OmniScore histogram and per-pair training weights.
//! - [`diffusion`]: a small conditional denoising diffusion model with
//!   hand-written backpropagation.
//! - [`dpo`]: preference losses, weighted training, SFT baseline and margin
//!   evaluation on the toy model.
//! - [`cli`]: the `videodpo` command line front end.

pub mod cli;
pub mod diffusion;
pub mod dpo;
pub mod error;
pub mod io;
pub mod pairing;
pub mod reweight;
pub mod rng;
pub mod scores;
pub mod toy;

pub use error::{Error, Result};
