use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::denoiser::{DenoiserR, DenoiserU};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::motion::{Condition, Motion, DEFAULT_FPS, DIMS};
use crate::num::Real;

pub(crate) fn standard_normal<T: Real>(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<T> {
    Array3::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z)
    })
}

/// Ancestral x0-parameterized sampling loop.
///
/// Draws `Y_T ~ N(0, I)` from a ChaCha8 stream seeded with `seed`, then for
/// `t = T..1` asks `predict(t, Y_t)` for x̂0 and draws `Y_{t−1}` from
/// `q(Y_{t−1} | Y_t, x̂0)`. The stream is consumed identically no matter what
/// `predict` does, so strategies that leave x̂0 untouched reproduce each other
/// bit for bit.
pub fn run_sampler<T: Real>(
    schedule: &NoiseSchedule<T>,
    shape: (usize, usize, usize),
    seed: u64,
    mut predict: impl FnMut(usize, &Array3<T>) -> Result<Array3<T>>,
) -> Result<Array3<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = standard_normal::<T>(shape, &mut rng);
    for t in (1..=schedule.steps()).rev() {
        let x0 = predict(t, &state)?;
        if x0.dim() != shape {
            return Err(Error::Shape(format!(
                "prediction {:?} at t={t}, state {:?}",
                x0.dim(),
                shape
            )));
        }
        let (c0, ct, std) = schedule.posterior(t);
        if t > 1 {
            let noise = standard_normal::<T>(shape, &mut rng);
            ndarray::Zip::from(&mut state)
                .and(&x0)
                .and(&noise)
                .for_each(|y, &x, &z| *y = c0 * x + ct * *y + std * z);
        } else {
            ndarray::Zip::from(&mut state)
                .and(&x0)
                .for_each(|y, &x| *y = c0 * x + ct * *y);
        }
    }
    Ok(state)
}

/// Denoiser driving [`sample`]. The conditioned variant carries the
/// condition used at the first step.
pub enum Model<'a, T: Real> {
    Unconditioned(&'a dyn DenoiserU<T>),
    Conditioned(&'a dyn DenoiserR<T>, Condition<T>),
}

/// Called after every prediction with `(t, Y_t, x̂0)`. Returning a condition
/// replaces the one used from the next step onward.
pub trait StepHook<T: Real> {
    fn after_prediction(&mut self, t: usize, noisy: &Array3<T>, x0: &Array3<T>) -> Result<Option<Condition<T>>>;
}

pub struct NoHook;

impl<T: Real> StepHook<T> for NoHook {
    fn after_prediction(&mut self, _: usize, _: &Array3<T>, _: &Array3<T>) -> Result<Option<Condition<T>>> {
        Ok(None)
    }
}

impl<T: Real, F> StepHook<T> for F
where
    F: FnMut(usize, &Array3<T>, &Array3<T>) -> Result<Option<Condition<T>>>,
{
    fn after_prediction(&mut self, t: usize, noisy: &Array3<T>, x0: &Array3<T>) -> Result<Option<Condition<T>>> {
        self(t, noisy, x0)
    }
}

/// Samples one motion of `frames × joints` with the given model.
pub fn sample<T: Real>(
    model: Model<'_, T>,
    schedule: &NoiseSchedule<T>,
    frames: usize,
    joints: usize,
    seed: u64,
    hook: &mut dyn StepHook<T>,
) -> Result<Motion<T>> {
    let shape = (frames, joints, DIMS);
    let out = match model {
        Model::Unconditioned(u) => {
            check_schedule(u.schedule(), schedule)?;
            run_sampler(schedule, shape, seed, |t, y| {
                let x0 = u.predict_x0(y, t)?;
                hook.after_prediction(t, y, &x0)?;
                Ok(x0)
            })?
        }
        Model::Conditioned(r, condition) => {
            check_schedule(r.schedule(), schedule)?;
            if condition.dim() != shape {
                return Err(Error::Shape(format!(
                    "condition {:?} vs requested {:?}",
                    condition.dim(),
                    shape
                )));
            }
            let mut condition = condition;
            run_sampler(schedule, shape, seed, |t, y| {
                let x0 = r.predict_x0(&condition, y, t)?;
                if let Some(next) = hook.after_prediction(t, y, &x0)? {
                    if next.dim() != shape {
                        return Err(Error::MalformedCondition(format!(
                            "shape {:?} at t={t}, expected {:?}",
                            next.dim(),
                            shape
                        )));
                    }
                    condition = next;
                }
                Ok(x0)
            })?
        }
    };
    Motion::new(out, DEFAULT_FPS)
}

pub(crate) fn check_schedule<T: Real>(model: &NoiseSchedule<T>, sampler: &NoiseSchedule<T>) -> Result<()> {
    if model != sampler {
        return Err(Error::Schedule("denoiser and sampler schedules differ".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::gaussian::{GaussianDenoiser, GaussianMotionPrior, KernelParams};

    fn small_prior() -> (GaussianDenoiser<f64>, NoiseSchedule<f64>) {
        let schedule = NoiseSchedule::cosine(50).unwrap();
        let mean = Array3::from_shape_fn((6, 2, 3), |(f, j, d)| {
            0.1 * (f as f64) - 0.2 * j as f64 + 0.05 * d as f64
        });
        let prior = GaussianMotionPrior::new(mean, KernelParams::default()).unwrap();
        (GaussianDenoiser::new(prior, schedule.clone()).unwrap(), schedule)
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (u, s) = small_prior();
        let a = sample(Model::Unconditioned(&u), &s, 6, 2, 7, &mut NoHook).unwrap();
        let b = sample(Model::Unconditioned(&u), &s, 6, 2, 7, &mut NoHook).unwrap();
        assert_eq!(a, b);
        let c = sample(Model::Unconditioned(&u), &s, 6, 2, 8, &mut NoHook).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn malformed_hook_condition_is_rejected() {
        let (u, s) = small_prior();
        let r =
            crate::diffusion::gaussian::GaussianConditionalDenoiser::new(u.prior().clone(), s.clone(), 0.01).unwrap();
        let cond = Condition::new(u.prior().mean().clone()).unwrap();
        let mut hook = |_t: usize, _y: &Array3<f64>, _x: &Array3<f64>| -> Result<Option<Condition<f64>>> {
            Ok(Some(Condition::new(Array3::zeros((3, 2, 3))).unwrap()))
        };
        let err = sample(Model::Conditioned(&r, cond), &s, 6, 2, 1, &mut hook).unwrap_err();
        assert!(matches!(err, Error::MalformedCondition(_)));
    }

    #[test]
    fn schedule_mismatch_is_rejected() {
        let (u, _) = small_prior();
        let other = NoiseSchedule::cosine(40).unwrap();
        assert!(sample(Model::Unconditioned(&u), &other, 6, 2, 1, &mut NoHook).is_err());
    }
}
