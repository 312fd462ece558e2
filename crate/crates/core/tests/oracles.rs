//! Analytic and Monte-Carlo oracles for the Gaussian denoisers and the
//! ancestral sampler.

use blockdetail::diffusion::{
    gaussian_conditional_x0, gaussian_posterior_x0, sample, DenoiserR, DenoiserU, GaussianConditionalDenoiser,
    GaussianDenoiser, GaussianMotionPrior, KernelParams, Model, NoHook, NoiseSchedule,
};
use blockdetail::motion::Condition;
use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_prior(frames: usize, joints: usize) -> GaussianMotionPrior<f64> {
    let mean = Array3::from_shape_fn((frames, joints, 3), |(f, j, d)| {
        0.3 * (f as f64 * 0.4 + j as f64 + d as f64).sin()
    });
    GaussianMotionPrior::new(mean, KernelParams::default()).unwrap()
}

fn to_dmatrix(a: &ndarray::Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Self-normalized importance sampling of E[Y | Y_t] with prior proposals.
fn importance_posterior_mean(
    prior: &GaussianMotionPrior<f64>,
    ab: f64,
    y: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> DVector<f64> {
    let f = prior.dim().0;
    let mu = DVector::from_fn(f, |i, _| prior.mean()[[i, 0, 0]]);
    let l = to_dmatrix(prior.covariance()).cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, DVector<f64>)> = (0..samples)
        .map(|_| {
            let x = &mu + &l * normal_vec(&mut rng, f);
            let r = y - &x * ab.sqrt();
            (-r.norm_squared() / (2.0 * (1.0 - ab)), x)
        })
        .collect();
    let max = draws.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    let mut acc = DVector::zeros(f);
    let mut total = 0.0;
    for (logw, x) in &draws {
        let w = (logw - max).exp();
        acc += x * w;
        total += w;
    }
    acc / total
}

#[test]
fn posterior_mean_matches_importance_sampling() {
    let frames = 8;
    let mean = Array3::from_shape_fn((frames, 1, 1), |(f, _, _)| 0.5 + 0.1 * f as f64);
    let cov = blockdetail::linalg::squared_exponential(frames, 0.04, 6.0, 1e-6);
    let prior = GaussianMotionPrior::with_covariance(mean, cov).unwrap();
    let schedule = NoiseSchedule::<f64>::cosine(1000).unwrap();
    let t = 150;
    let ab = schedule.alpha_bar(t);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = frames;
    let mu = DVector::from_fn(f, |i, _| prior.mean()[[i, 0, 0]]);
    let l = to_dmatrix(prior.covariance()).cholesky().unwrap().l();
    let x = &mu + &l * normal_vec(&mut rng, f);
    let y = &x * ab.sqrt() + normal_vec(&mut rng, f) * (1.0 - ab).sqrt();
    let noisy = Array3::from_shape_fn((f, 1, 1), |(i, _, _)| y[i]);

    let analytic = gaussian_posterior_x0(&prior, &schedule, &noisy, t).unwrap();
    let analytic = DVector::from_fn(f, |i, _| analytic[[i, 0, 0]]);
    let mc = importance_posterior_mean(&prior, ab, &y, 100_000, 11);
    let rel = (&mc - &analytic).norm() / (&analytic - &mu).norm();
    assert!(rel < 0.02, "relative error {rel}");
}

/// Dense conditioning of `Y` on `(Y_t, X)` for one channel.
fn dense_conditional(
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    ab: f64,
    obs_var: f64,
    y: &DVector<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    let f = mu.len();
    let a = ab.sqrt();
    let mut s_oo = DMatrix::zeros(2 * f, 2 * f);
    s_oo.view_mut((0, 0), (f, f))
        .copy_from(&(cov * ab + DMatrix::identity(f, f) * (1.0 - ab)));
    s_oo.view_mut((0, f), (f, f)).copy_from(&(cov * a));
    s_oo.view_mut((f, 0), (f, f)).copy_from(&(cov * a));
    s_oo.view_mut((f, f), (f, f))
        .copy_from(&(cov + DMatrix::identity(f, f) * obs_var));
    let mut s_xo = DMatrix::zeros(f, 2 * f);
    s_xo.view_mut((0, 0), (f, f)).copy_from(&(cov * a));
    s_xo.view_mut((0, f), (f, f)).copy_from(cov);
    let mut innovation = DVector::zeros(2 * f);
    innovation.rows_mut(0, f).copy_from(&(y - mu * a));
    innovation.rows_mut(f, f).copy_from(&(x - mu));
    mu + s_xo * s_oo.lu().solve(&innovation).unwrap()
}

#[test]
fn conditional_matches_dense_joint_gaussian() {
    let (frames, joints) = (12, 2);
    let prior = small_prior(frames, joints);
    let schedule = NoiseSchedule::<f64>::cosine(1000).unwrap();
    let cov = to_dmatrix(prior.covariance());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let denoiser = GaussianConditionalDenoiser::new(prior.clone(), schedule.clone(), 0.01).unwrap();
    for &t in &[1, 10, 200, 600, 1000] {
        for &obs_var in &[1e-4, 0.01, 1.0] {
            let noisy = Array3::from_shape_simple_fn((frames, joints, 3), || rng.sample::<f64, _>(StandardNormal));
            let cond = Array3::from_shape_simple_fn((frames, joints, 3), || 0.2 * rng.sample::<f64, _>(StandardNormal));
            let condition = Condition::new(cond.clone()).unwrap();
            let fast = gaussian_conditional_x0(&prior, &schedule, &condition, obs_var, &noisy, t).unwrap();
            let spectral = (obs_var == 0.01).then(|| denoiser.predict_x0(&condition, &noisy, t).unwrap());
            let ab = schedule.alpha_bar(t);
            for j in 0..joints {
                for d in 0..3 {
                    let pick = |a: &Array3<f64>| DVector::from_fn(frames, |i, _| a[[i, j, d]]);
                    let expected =
                        dense_conditional(&pick(prior.mean()), &cov, ab, obs_var, &pick(&noisy), &pick(&cond));
                    let diff = (pick(&fast) - &expected).amax();
                    assert!(diff < 1e-8, "t={t} σ²={obs_var} channel ({j},{d}): {diff}");
                    if let Some(s) = &spectral {
                        let diff = (pick(s) - &expected).amax();
                        assert!(diff < 1e-8, "spectral t={t} channel ({j},{d}): {diff}");
                    }
                }
            }
        }
    }
}

#[test]
fn sampler_reproduces_prior_mean() {
    let (frames, joints) = (8, 1);
    let prior = small_prior(frames, joints);
    let schedule = NoiseSchedule::<f64>::cosine(200).unwrap();
    let u = GaussianDenoiser::new(prior.clone(), schedule.clone()).unwrap();
    let n = 400;
    let motions: Vec<Array3<f64>> = (0..n)
        .map(|seed| {
            sample(Model::Unconditioned(&u), &schedule, frames, joints, seed, &mut NoHook)
                .unwrap()
                .into_frames()
        })
        .collect();
    for ((f, j, d), &m) in prior.mean().indexed_iter() {
        let xs: Vec<f64> = motions.iter().map(|a| a[[f, j, d]]).collect();
        assert!(xs.iter().all(|x| x.is_finite()));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - m).abs() < 3.0 * se,
            "channel ({f},{j},{d}): {mean} vs {m} (se {se})"
        );
        // Marginal variance of the prior is σ² + ε.
        assert!((var / 0.040001 - 1.0).abs() < 0.25, "variance {var}");
    }
}

#[test]
fn unconditioned_sampler_is_f32_capable() {
    let prior = small_prior(6, 1);
    let prior32 = GaussianMotionPrior::<f32>::with_covariance(
        prior.mean().mapv(|v| v as f32),
        prior.covariance().mapv(|v| v as f32),
    )
    .unwrap();
    let schedule = NoiseSchedule::<f32>::cosine(100).unwrap();
    let u = GaussianDenoiser::new(prior32, schedule.clone()).unwrap();
    for seed in 0..20 {
        let m = sample(Model::Unconditioned(&u), &schedule, 6, 1, seed, &mut NoHook).unwrap();
        assert!(m.frames().iter().all(|v| v.is_finite()));
    }
    assert_eq!(u.schedule().steps(), 100);
}
