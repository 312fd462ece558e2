use ndarray::{Array3, Zip};

use crate::error::{Error, Result};
use crate::num::Real;

pub const DEFAULT_STEPS: usize = 1000;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Cumulative signal fractions `ᾱ_0 = 1 > ᾱ_1 > … > ᾱ_T`, plus the
/// coefficients of the forward posterior `q(Y_{t−1} | Y_t, Y_0)` derived from
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T: Real> {
    alpha_bar: Vec<T>,
    coef_x0: Vec<T>,
    coef_xt: Vec<T>,
    posterior_std: Vec<T>,
}

impl<T: Real> NoiseSchedule<T> {
    /// Cosine schedule with per-step betas clipped at 0.999.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("at least one step required".into()));
        }
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for t in 1..=steps {
            let ratio = (f(t) / f0) / (f(t - 1) / f0);
            let beta = (1.0 - ratio).min(MAX_BETA);
            let prev = alpha_bar[t - 1];
            alpha_bar.push(prev * (1.0 - beta));
        }
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Schedule("need alpha_bar[0..=T] with T ≥ 1".into()));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::Schedule(format!("alpha_bar[0] must be 1, got {}", alpha_bar[0])));
        }
        for t in 1..alpha_bar.len() {
            let a = alpha_bar[t];
            if !(a > 0.0 && a < alpha_bar[t - 1]) {
                return Err(Error::Schedule(format!(
                    "alpha_bar must be strictly decreasing in (0, 1]; t={t} has {a} after {}",
                    alpha_bar[t - 1]
                )));
            }
        }
        let last = *alpha_bar.last().expect("non-empty");
        if last >= 1e-4 {
            return Err(Error::Schedule(format!("alpha_bar[T] = {last} must be below 1e-4")));
        }
        let steps = alpha_bar.len() - 1;
        let mut coef_x0 = vec![T::zero(); steps + 1];
        let mut coef_xt = vec![T::zero(); steps + 1];
        let mut posterior_std = vec![T::zero(); steps + 1];
        for t in 1..=steps {
            let ab = alpha_bar[t];
            let ab_prev = alpha_bar[t - 1];
            let alpha = ab / ab_prev;
            let beta = 1.0 - alpha;
            coef_x0[t] = T::lit(ab_prev.sqrt() * beta / (1.0 - ab));
            coef_xt[t] = T::lit(alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab));
            posterior_std[t] = T::lit((beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt());
        }
        Ok(Self {
            alpha_bar: alpha_bar.into_iter().map(T::lit).collect(),
            coef_x0,
            coef_xt,
            posterior_std,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bar
    }

    pub fn check_timestep(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::Timestep {
                t,
                min,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// `(coefficient on x̂0, coefficient on Y_t, standard deviation)` of
    /// `q(Y_{t−1} | Y_t, x̂0)`. At `t = 1` the posterior is a point mass at x̂0.
    pub fn posterior(&self, t: usize) -> (T, T, T) {
        (self.coef_x0[t], self.coef_xt[t], self.posterior_std[t])
    }

    pub fn cast<U: Real>(&self) -> NoiseSchedule<U> {
        NoiseSchedule::from_alpha_bar(self.alpha_bar.iter().map(|a| a.as_f64()).collect())
            .expect("a validated schedule stays valid")
    }
}

/// `Y_t = √ᾱ_t · Y + √(1 − ᾱ_t) · noise`.
pub fn forward_noise<T: Real>(
    schedule: &NoiseSchedule<T>,
    clean: &Array3<T>,
    t: usize,
    noise: &Array3<T>,
) -> Result<Array3<T>> {
    schedule.check_timestep(t, 0)?;
    if clean.dim() != noise.dim() {
        return Err(Error::Shape(format!(
            "clean {:?} vs noise {:?}",
            clean.dim(),
            noise.dim()
        )));
    }
    if t == 0 {
        return Ok(clean.clone());
    }
    let ab = schedule.alpha_bar(t);
    let signal = ab.sqrt();
    let spread = (T::one() - ab).sqrt();
    Ok(Zip::from(clean)
        .and(noise)
        .map_collect(|&y, &e| signal * y + spread * e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_invariants() {
        let s = NoiseSchedule::<f64>::cosine(DEFAULT_STEPS).unwrap();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0);
        }
        assert!(s.alpha_bar(1000) < 1e-4);
        assert!((1.0 - s.alpha_bar(1000)).sqrt() > 0.99995);
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(NoiseSchedule::<f64>::from_alpha_bar(vec![1.0]).is_err());
        assert!(NoiseSchedule::<f64>::from_alpha_bar(vec![0.9, 1e-5]).is_err());
        assert!(NoiseSchedule::<f64>::from_alpha_bar(vec![1.0, 0.5, 0.5, 1e-5]).is_err());
        assert!(NoiseSchedule::<f64>::from_alpha_bar(vec![1.0, 0.5]).is_err());
        assert!(NoiseSchedule::<f64>::cosine(0).is_err());
    }

    #[test]
    fn forward_endpoints() {
        let s = NoiseSchedule::<f64>::cosine(100).unwrap();
        let y = Array3::from_shape_fn((3, 2, 3), |(a, b, c)| (a + 2 * b + 3 * c) as f64 * 0.1);
        let e = Array3::from_elem((3, 2, 3), 0.7);
        assert_eq!(forward_noise(&s, &y, 0, &e).unwrap(), y);
        let zero = Array3::zeros((3, 2, 3));
        let yt = forward_noise(&s, &zero, 100, &e).unwrap();
        let expect = (1.0 - s.alpha_bar(100)).sqrt() * 0.7;
        assert!(yt.iter().all(|&v| (v - expect).abs() < 1e-15));
        assert!(matches!(forward_noise(&s, &y, 101, &e), Err(Error::Timestep { .. })));
    }

    #[test]
    fn last_step_posterior_is_point_mass() {
        let s = NoiseSchedule::<f64>::cosine(1000).unwrap();
        let (_, _, std) = s.posterior(1);
        assert_eq!(std, 0.0);
    }
}
