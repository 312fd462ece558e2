use ndarray::Array3;

use crate::diffusion::schedule::NoiseSchedule;
use crate::error::Result;
use crate::motion::Condition;
use crate::num::Real;

/// Unconditioned x0-predictor `U(t, Y_t)`.
pub trait DenoiserU<T: Real>: Send + Sync {
    fn schedule(&self) -> &NoiseSchedule<T>;

    /// Predicts the clean motion from the noisy state at timestep `t ∈ [1, T]`.
    fn predict_x0(&self, noisy: &Array3<T>, t: usize) -> Result<Array3<T>>;
}

/// Condition-taking x0-predictor `R(X, t, Y_t)`.
pub trait DenoiserR<T: Real>: Send + Sync {
    fn schedule(&self) -> &NoiseSchedule<T>;

    fn predict_x0(&self, condition: &Condition<T>, noisy: &Array3<T>, t: usize) -> Result<Array3<T>>;
}
