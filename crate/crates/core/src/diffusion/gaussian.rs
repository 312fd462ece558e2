//! Exact Bayes denoisers under a Gaussian motion prior.
//!
//! Every joint coordinate is an independent channel whose F-frame trajectory
//! is `N(μ_c, Σ)`, with `Σ` a squared-exponential temporal kernel shared by all
//! channels. Under the forward process `Y_t = √ᾱ Y + √(1−ᾱ) ε` the posterior
//! mean of `Y` is available in closed form, which makes these backends the
//! reference against which the sampler and refinement plumbing are tested.
//!
//! The free functions solve with a fresh Cholesky factor on every call. The
//! denoiser structs reuse one eigen-decomposition of `Σ`, so each step costs
//! two matrix products.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis, Zip};

use crate::diffusion::denoiser::{DenoiserR, DenoiserU};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::linalg::{squared_exponential, Cholesky, SymmetricEigen};
use crate::motion::Condition;
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// σ², m².
    pub variance: f64,
    /// ℓ, frames.
    pub length_scale: f64,
    /// ε added to the diagonal.
    pub jitter: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            variance: 0.04,
            length_scale: 6.0,
            jitter: 1e-6,
        }
    }
}

pub const DEFAULT_OBSERVATION_VARIANCE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct GaussianMotionPrior<T: Real> {
    mean: Array3<T>,
    covariance: Array2<T>,
}

impl<T: Real> GaussianMotionPrior<T> {
    pub fn new(mean: Array3<T>, kernel: KernelParams) -> Result<Self> {
        let f = mean.dim().0;
        let cov = squared_exponential(
            f,
            T::lit(kernel.variance),
            T::lit(kernel.length_scale),
            T::lit(kernel.jitter),
        );
        Self::with_covariance(mean, cov)
    }

    /// Prior with an explicit F×F temporal covariance; rejects anything that
    /// is not symmetric positive definite.
    pub fn with_covariance(mean: Array3<T>, covariance: Array2<T>) -> Result<Self> {
        let f = mean.dim().0;
        if covariance.dim() != (f, f) {
            return Err(Error::Shape(format!(
                "covariance {:?} for a {f}-frame mean",
                covariance.dim()
            )));
        }
        let tol = T::lit(1e-12) * covariance.iter().fold(T::one(), |m, &x| m.max(x.abs()));
        for i in 0..f {
            for j in 0..i {
                if (covariance[[i, j]] - covariance[[j, i]]).abs() > tol {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        Cholesky::factor(covariance.view())?;
        Ok(Self {
            mean: mean.as_standard_layout().into_owned(),
            covariance,
        })
    }

    pub fn mean(&self) -> &Array3<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<T> {
        &self.covariance
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.mean.dim()
    }

    fn check_shape(&self, a: &Array3<T>, what: &str) -> Result<()> {
        if a.dim() != self.mean.dim() {
            return Err(Error::Shape(format!(
                "{what} {:?} vs prior {:?}",
                a.dim(),
                self.mean.dim()
            )));
        }
        Ok(())
    }
}

/// F×C view of an F×J×D array (C = J·D channels).
fn channels<T: Real>(a: &Array3<T>) -> Array2<T> {
    let (f, j, d) = a.dim();
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((f, j * d))
        .expect("standard layout reshapes")
}

fn unchannels<T: Real>(a: Array2<T>, shape: (usize, usize, usize)) -> Array3<T> {
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order(shape)
        .expect("standard layout reshapes")
}

/// `μ + √ᾱ Σ (ᾱ Σ + (1−ᾱ) I)⁻¹ (Y_t − √ᾱ μ)` per channel, by Cholesky solve.
pub fn gaussian_posterior_x0<T: Real>(
    prior: &GaussianMotionPrior<T>,
    schedule: &NoiseSchedule<T>,
    noisy: &Array3<T>,
    t: usize,
) -> Result<Array3<T>> {
    schedule.check_timestep(t, 1)?;
    prior.check_shape(noisy, "noisy state")?;
    let ab = schedule.alpha_bar(t);
    let a = ab.sqrt();
    let f = prior.dim().0;
    let mut system = prior.covariance.mapv(|x| ab * x);
    for i in 0..f {
        system[[i, i]] += T::one() - ab;
    }
    let chol = Cholesky::factor(system.view())?;
    let mu = channels(&prior.mean);
    let innovation = &channels(noisy) - &mu.mapv(|m| a * m);
    let solved = chol.solve_matrix(innovation.view());
    let pred = &mu + &prior.covariance.dot(&solved).mapv(|x| a * x);
    Ok(unchannels(pred, prior.dim()))
}

/// Combines the diffusion observation and the condition (`X = Y + N(0, σ_c² I)`)
/// into one equivalent observation `z = Y + N(0, v I)`.
fn combined_observation<T: Real>(
    schedule: &NoiseSchedule<T>,
    condition: &Array3<T>,
    observation_variance: T,
    noisy: &Array3<T>,
    t: usize,
) -> (Array3<T>, T) {
    let ab = schedule.alpha_bar(t);
    let diffusion_precision = ab / (T::one() - ab);
    let condition_precision = T::one() / observation_variance;
    let precision = diffusion_precision + condition_precision;
    let v = T::one() / precision;
    let w_noisy = ab.sqrt() / (T::one() - ab) * v;
    let w_cond = condition_precision * v;
    let z = Zip::from(noisy)
        .and(condition)
        .map_collect(|&y, &x| w_noisy * y + w_cond * x);
    (z, v)
}

/// Exact posterior mean of `Y` given both `Y_t` and the condition `X`, per
/// channel, with the two Gaussian likelihoods fused by precision.
pub fn gaussian_conditional_x0<T: Real>(
    prior: &GaussianMotionPrior<T>,
    schedule: &NoiseSchedule<T>,
    condition: &Condition<T>,
    observation_variance: T,
    noisy: &Array3<T>,
    t: usize,
) -> Result<Array3<T>> {
    schedule.check_timestep(t, 1)?;
    prior.check_shape(noisy, "noisy state")?;
    prior.check_shape(condition.frames(), "condition")?;
    if !(observation_variance > T::zero()) {
        return Err(Error::Config("condition observation variance must be positive".into()));
    }
    let (z, v) = combined_observation(schedule, condition.frames(), observation_variance, noisy, t);
    let f = prior.dim().0;
    let mut system = prior.covariance.clone();
    for i in 0..f {
        system[[i, i]] += v;
    }
    let chol = Cholesky::factor(system.view())?;
    let mu = channels(&prior.mean);
    let innovation = &channels(&z) - &mu;
    let solved = chol.solve_matrix(innovation.view());
    let pred = &mu + &prior.covariance.dot(&solved);
    Ok(unchannels(pred, prior.dim()))
}

/// `μ + Q diag(g(λ)) Qᵀ (r)` with `Σ = Q diag(λ) Qᵀ`.
fn spectral_apply<T: Real>(
    eigen: &SymmetricEigen<T>,
    mu: ArrayView2<'_, T>,
    residual: &Array2<T>,
    gain: impl Fn(T) -> T,
) -> Array2<T> {
    let gains = Array1::from_iter(eigen.values.iter().map(|&l| gain(l)));
    let mut projected = eigen.vectors.t().dot(residual);
    for (mut row, &g) in projected.axis_iter_mut(Axis(0)).zip(gains.iter()) {
        row.mapv_inplace(|x| x * g);
    }
    &mu + &eigen.vectors.dot(&projected)
}

/// Analytic unconditioned denoiser.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser<T: Real> {
    prior: GaussianMotionPrior<T>,
    schedule: NoiseSchedule<T>,
    eigen: SymmetricEigen<T>,
    mean_channels: Array2<T>,
}

impl<T: Real> GaussianDenoiser<T> {
    pub fn new(prior: GaussianMotionPrior<T>, schedule: NoiseSchedule<T>) -> Result<Self> {
        let eigen = SymmetricEigen::new(prior.covariance.view())?;
        let mean_channels = channels(&prior.mean);
        Ok(Self {
            prior,
            schedule,
            eigen,
            mean_channels,
        })
    }

    pub fn prior(&self) -> &GaussianMotionPrior<T> {
        &self.prior
    }
}

impl<T: Real> DenoiserU<T> for GaussianDenoiser<T> {
    fn schedule(&self) -> &NoiseSchedule<T> {
        &self.schedule
    }

    fn predict_x0(&self, noisy: &Array3<T>, t: usize) -> Result<Array3<T>> {
        self.schedule.check_timestep(t, 1)?;
        self.prior.check_shape(noisy, "noisy state")?;
        let ab = self.schedule.alpha_bar(t);
        let a = ab.sqrt();
        let residual = &channels(noisy) - &self.mean_channels.mapv(|m| a * m);
        let pred = spectral_apply(&self.eigen, self.mean_channels.view(), &residual, |l| {
            a * l / (ab * l + (T::one() - ab))
        });
        Ok(unchannels(pred, self.prior.dim()))
    }
}

/// Analytic conditioned denoiser treating the condition as a noisy dense
/// observation of the clean motion.
#[derive(Debug, Clone)]
pub struct GaussianConditionalDenoiser<T: Real> {
    inner: GaussianDenoiser<T>,
    observation_variance: T,
}

impl<T: Real> GaussianConditionalDenoiser<T> {
    pub fn new(prior: GaussianMotionPrior<T>, schedule: NoiseSchedule<T>, observation_variance: T) -> Result<Self> {
        if !(observation_variance > T::zero()) {
            return Err(Error::Config("condition observation variance must be positive".into()));
        }
        Ok(Self {
            inner: GaussianDenoiser::new(prior, schedule)?,
            observation_variance,
        })
    }

    pub fn observation_variance(&self) -> T {
        self.observation_variance
    }
}

impl<T: Real> DenoiserR<T> for GaussianConditionalDenoiser<T> {
    fn schedule(&self) -> &NoiseSchedule<T> {
        &self.inner.schedule
    }

    fn predict_x0(&self, condition: &Condition<T>, noisy: &Array3<T>, t: usize) -> Result<Array3<T>> {
        let inner = &self.inner;
        inner.schedule.check_timestep(t, 1)?;
        inner.prior.check_shape(noisy, "noisy state")?;
        inner.prior.check_shape(condition.frames(), "condition")?;
        let (z, v) = combined_observation(&inner.schedule, condition.frames(), self.observation_variance, noisy, t);
        let residual = &channels(&z) - &inner.mean_channels;
        let pred = spectral_apply(&inner.eigen, inner.mean_channels.view(), &residual, |l| l / (l + v));
        Ok(unchannels(pred, inner.prior.dim()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_array(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_covariance_zero_mean_collapses() {
        let schedule = NoiseSchedule::<f64>::cosine(100).unwrap();
        let prior = GaussianMotionPrior::with_covariance(Array3::zeros((5, 2, 3)), Array2::eye(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_array((5, 2, 3), &mut rng);
        for t in [1, 30, 100] {
            let p = gaussian_posterior_x0(&prior, &schedule, &y, t).unwrap();
            let a = schedule.alpha_bar(t).sqrt();
            for (pv, yv) in p.iter().zip(y.iter()) {
                assert!((pv - a * yv).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_innovation_returns_mean() {
        let schedule = NoiseSchedule::<f64>::cosine(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mean = random_array((12, 2, 3), &mut rng);
        let prior = GaussianMotionPrior::new(mean.clone(), KernelParams::default()).unwrap();
        let t = 40;
        let y = mean.mapv(|m| schedule.alpha_bar(t).sqrt() * m);
        let p = gaussian_posterior_x0(&prior, &schedule, &y, t).unwrap();
        for (a, b) in p.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_and_cholesky_routes_agree() {
        let schedule = NoiseSchedule::<f64>::cosine(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = random_array((20, 3, 3), &mut rng).mapv(|x| 0.2 * x);
        let prior = GaussianMotionPrior::new(mean, KernelParams::default()).unwrap();
        let u = GaussianDenoiser::new(prior.clone(), schedule.clone()).unwrap();
        let r = GaussianConditionalDenoiser::new(prior.clone(), schedule.clone(), 0.01).unwrap();
        let cond = Condition::new(random_array((20, 3, 3), &mut rng)).unwrap();
        for t in [1, 10, 500, 1000] {
            let y = random_array((20, 3, 3), &mut rng);
            let a = gaussian_posterior_x0(&prior, &schedule, &y, t).unwrap();
            let b = u.predict_x0(&y, t).unwrap();
            let c = gaussian_conditional_x0(&prior, &schedule, &cond, 0.01, &y, t).unwrap();
            let d = r.predict_x0(&cond, &y, t).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                assert!((p - q).abs() < 1e-8, "t={t}: {p} vs {q}");
            }
            for (p, q) in c.iter().zip(d.iter()) {
                assert!((p - q).abs() < 1e-8, "t={t}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn uninformative_and_clamping_conditions() {
        let schedule = NoiseSchedule::<f64>::cosine(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mean = random_array((16, 2, 3), &mut rng).mapv(|x| 0.1 * x);
        let prior = GaussianMotionPrior::new(mean, KernelParams::default()).unwrap();
        let cond = Condition::new(random_array((16, 2, 3), &mut rng).mapv(|x| 0.2 * x)).unwrap();
        for t in [5, 200, 900] {
            let y = random_array((16, 2, 3), &mut rng);
            let loose = gaussian_conditional_x0(&prior, &schedule, &cond, 1e9, &y, t).unwrap();
            let plain = gaussian_posterior_x0(&prior, &schedule, &y, t).unwrap();
            for (a, b) in loose.iter().zip(plain.iter()) {
                assert!((a - b).abs() < 1e-6, "t={t}");
            }
            let tight = gaussian_conditional_x0(&prior, &schedule, &cond, 1e-9, &y, t).unwrap();
            for (a, b) in tight.iter().zip(cond.frames().iter()) {
                assert!((a - b).abs() < 1e-3, "t={t}");
            }
        }
    }

    #[test]
    fn rejects_non_spd_and_bad_timestep() {
        let bad = ndarray::array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            GaussianMotionPrior::with_covariance(Array3::<f64>::zeros((2, 1, 3)), bad),
            Err(Error::NotPositiveDefinite)
        ));
        let asym = ndarray::array![[1.0, 0.5], [0.1, 1.0]];
        assert!(GaussianMotionPrior::with_covariance(Array3::<f64>::zeros((2, 1, 3)), asym).is_err());
        let schedule = NoiseSchedule::<f64>::cosine(10).unwrap();
        let prior = GaussianMotionPrior::new(Array3::<f64>::zeros((4, 1, 3)), KernelParams::default()).unwrap();
        let y = Array3::zeros((4, 1, 3));
        assert!(matches!(
            gaussian_posterior_x0(&prior, &schedule, &y, 0),
            Err(Error::Timestep { .. })
        ));
    }
}
