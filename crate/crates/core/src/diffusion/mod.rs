//! Noise schedules, denoiser interfaces and backends, and the ancestral
//! sampler shared by every generation strategy.

pub mod checkpoint;
pub mod denoiser;
pub mod gaussian;
pub mod net;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use denoiser::{DenoiserR, DenoiserU};
pub use gaussian::{
    gaussian_conditional_x0, gaussian_posterior_x0, GaussianConditionalDenoiser, GaussianDenoiser, GaussianMotionPrior,
    KernelParams,
};
pub use sampler::{run_sampler, sample, Model, NoHook, StepHook};
pub use schedule::{forward_noise, NoiseSchedule, DEFAULT_STEPS};
