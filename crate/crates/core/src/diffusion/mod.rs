//! Minimal conditional denoising diffusion model.
//!
//! Data points are low-dimensional vectors tagged with a condition id. The
//! forward process is `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`; the
//! denoiser is a two-hidden-layer MLP trained to predict `eps` with a
//! squared-error loss. Gradients are computed by hand.

mod denoiser;
mod schedule;
mod train;

pub(crate) mod train_internals {
    pub(crate) use super::train::{sample_error_grad, standard_normal};
}

pub use denoiser::{DenoiserParams, Gradient, ModelDims, TensorKind};
pub use schedule::{forward_noise, make_schedule, noised, NoiseSchedule};
pub use train::{
    ancestral_sample, diffusion_loss, read_checkpoint, sample_error, train_diffusion,
    write_checkpoint, Batch, Checkpoint, ConditionedSample, LossRecord, TrainConfig,
};
