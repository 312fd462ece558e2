//! Competing strategies: output blending with sparse or soft masks,
//! prediction-space reconstruction guidance, hard imputation, and the plain
//! R and U samplers. All of them go through the same sampler core, so a
//! strategy with no effect reproduces the plain sampler bit for bit.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::detailing::{detail_motion_with_progress, DetailProgress, RefinementConfig, RefinementTrace};
use crate::diffusion::denoiser::{DenoiserR, DenoiserU};
use crate::diffusion::sampler::{check_schedule, run_sampler, sample, Model};
use crate::error::{Error, Result};
use crate::motion::{build_condition, check_tolerance, BlockingPose, BlockingSet, Motion, DEFAULT_FPS, DIMS};
use crate::num::Real;
use crate::skeleton::SkeletonSpec;

pub const DEFAULT_FALLOFF: usize = 10;

/// Per-frame, per-joint weight on R's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask<T: Real> {
    values: Array2<T>,
}

impl<T: Real> BlendMask<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        for ((f, j), &v) in values.indexed_iter() {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::Config(format!(
                    "blend mask entry ({f}, {j}) = {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }
}

fn check_c<T: Real>(c: T) -> Result<()> {
    check_tolerance(&[c])
}

/// `c` on the specified joints of every key frame, 0 elsewhere.
pub fn sparse_mask<T: Real>(blocking: &BlockingSet<T>, c: T) -> Result<BlendMask<T>> {
    check_c(c)?;
    let mut m = Array2::zeros((blocking.timeline_length(), blocking.num_joints()));
    for key in blocking.poses() {
        for (j, &s) in key.specified.iter().enumerate() {
            if s {
                m[[key.frame, j]] = c;
            }
        }
    }
    BlendMask::new(m)
}

/// Triangular bumps of height `c` falling to 0 at `±falloff` frames around
/// each key, per specified joint, combined by maximum.
pub fn soft_mask<T: Real>(blocking: &BlockingSet<T>, c: T, falloff: usize) -> Result<BlendMask<T>> {
    check_c(c)?;
    if falloff == 0 {
        return Err(Error::Config("soft mask falloff must be at least 1 frame".into()));
    }
    let f_len = blocking.timeline_length();
    let mut m = Array2::<T>::zeros((f_len, blocking.num_joints()));
    let width = T::lit(falloff as f64);
    for key in blocking.poses() {
        let lo = key.frame.saturating_sub(falloff);
        let hi = (key.frame + falloff).min(f_len - 1);
        for f in lo..=hi {
            let dist = T::lit(f.abs_diff(key.frame) as f64);
            let v = c * (T::one() - dist / width);
            for (j, &s) in key.specified.iter().enumerate() {
                if s && v > m[[f, j]] {
                    m[[f, j]] = v;
                }
            }
        }
    }
    BlendMask::new(m)
}

fn check_pair<T: Real>(r: &dyn DenoiserR<T>, u: &dyn DenoiserU<T>) -> Result<()> {
    check_schedule(u.schedule(), r.schedule())
}

type StepObserver<'a> = &'a mut dyn FnMut(usize) -> Result<()>;

fn ignore_steps(_: usize) -> Result<()> {
    Ok(())
}

/// Output blending `x̂0 = M ⊙ R(X, t, Y_t) + (1 − M) ⊙ U(t, Y_t)` at every
/// step, with the condition fixed.
pub fn blended_sample<T: Real>(
    r: &dyn DenoiserR<T>,
    u: &dyn DenoiserU<T>,
    blocking: &BlockingSet<T>,
    mask: &BlendMask<T>,
    seed: u64,
) -> Result<Motion<T>> {
    blended_observed(r, u, blocking, mask, seed, &mut ignore_steps)
}

fn blended_observed<T: Real>(
    r: &dyn DenoiserR<T>,
    u: &dyn DenoiserU<T>,
    blocking: &BlockingSet<T>,
    mask: &BlendMask<T>,
    seed: u64,
    observe: StepObserver<'_>,
) -> Result<Motion<T>> {
    check_pair(r, u)?;
    let shape = (blocking.timeline_length(), blocking.num_joints(), DIMS);
    if mask.values.dim() != (shape.0, shape.1) {
        return Err(Error::Shape(format!(
            "mask {:?} for {:?}",
            mask.values.dim(),
            (shape.0, shape.1)
        )));
    }
    let condition = build_condition(blocking)?;
    let m = &mask.values;
    let out = run_sampler(r.schedule(), shape, seed, |t, y| {
        observe(t)?;
        let xr = r.predict_x0(&condition, y, t)?;
        let xu = u.predict_x0(y, t)?;
        Ok(Array3::from_shape_fn(shape, |(f, j, d)| {
            let w = m[[f, j]];
            w * xr[[f, j, d]] + (T::one() - w) * xu[[f, j, d]]
        }))
    })?;
    Motion::new(out, DEFAULT_FPS)
}

/// `x̂0 ← x̂0 − w · 2 (x̂0 − X)` on every specified joint of every key frame.
pub fn apply_guidance<T: Real>(x0: &mut Array3<T>, keys: &[BlockingPose<T>], weight: T) {
    let two_w = T::lit(2.0) * weight;
    for key in keys {
        let target = key.pose.features();
        for (j, &s) in key.specified.iter().enumerate() {
            if !s {
                continue;
            }
            for d in 0..DIMS {
                let e = x0[[key.frame, j, d]];
                x0[[key.frame, j, d]] = e - two_w * (e - target[[j, d]]);
            }
        }
    }
}

/// U sampling with prediction-space reconstruction guidance of weight `w`.
pub fn guided_sample<T: Real>(
    u: &dyn DenoiserU<T>,
    blocking: &BlockingSet<T>,
    weight: T,
    seed: u64,
) -> Result<Motion<T>> {
    guided_observed(u, blocking, weight, seed, &mut ignore_steps)
}

fn guided_observed<T: Real>(
    u: &dyn DenoiserU<T>,
    blocking: &BlockingSet<T>,
    weight: T,
    seed: u64,
    observe: StepObserver<'_>,
) -> Result<Motion<T>> {
    if !(weight >= T::zero()) || !weight.is_finite() {
        return Err(Error::Config(format!(
            "guidance weight {weight} must be finite and ≥ 0"
        )));
    }
    let shape = (blocking.timeline_length(), blocking.num_joints(), DIMS);
    let out = run_sampler(u.schedule(), shape, seed, |t, y| {
        observe(t)?;
        let mut x0 = u.predict_x0(y, t)?;
        if weight > T::zero() {
            apply_guidance(&mut x0, blocking.poses(), weight);
        }
        Ok(x0)
    })?;
    Motion::new(out, DEFAULT_FPS)
}

/// Overwrites the specified joints of every key frame with the key values.
pub fn impute<T: Real>(x0: &mut Array3<T>, keys: &[BlockingPose<T>]) {
    for key in keys {
        let target = key.pose.features();
        for (j, &s) in key.specified.iter().enumerate() {
            if s {
                for d in 0..DIMS {
                    x0[[key.frame, j, d]] = target[[j, d]];
                }
            }
        }
    }
}

/// U sampling with the key constraints imposed on every prediction.
pub fn hard_impute_sample<T: Real>(u: &dyn DenoiserU<T>, blocking: &BlockingSet<T>, seed: u64) -> Result<Motion<T>> {
    impute_observed(
        u,
        blocking.poses(),
        (blocking.timeline_length(), blocking.num_joints()),
        seed,
        &mut ignore_steps,
    )
}

pub(crate) fn impute_observed<T: Real>(
    u: &dyn DenoiserU<T>,
    keys: &[BlockingPose<T>],
    (frames, joints): (usize, usize),
    seed: u64,
    observe: StepObserver<'_>,
) -> Result<Motion<T>> {
    let out = run_sampler(u.schedule(), (frames, joints, DIMS), seed, |t, y| {
        observe(t)?;
        let mut x0 = u.predict_x0(y, t)?;
        impute(&mut x0, keys);
        Ok(x0)
    })?;
    Motion::new(out, DEFAULT_FPS)
}

/// Plain R sampling on the interpolated blocking condition.
pub fn no_tolerance_sample<T: Real>(r: &dyn DenoiserR<T>, blocking: &BlockingSet<T>, seed: u64) -> Result<Motion<T>> {
    no_tolerance_observed(r, blocking, seed, &mut ignore_steps)
}

fn no_tolerance_observed<T: Real>(
    r: &dyn DenoiserR<T>,
    blocking: &BlockingSet<T>,
    seed: u64,
    observe: StepObserver<'_>,
) -> Result<Motion<T>> {
    let condition = build_condition(blocking)?;
    let mut hook = |t: usize, _: &Array3<T>, _: &Array3<T>| -> Result<Option<crate::motion::Condition<T>>> {
        observe(t)?;
        Ok(None)
    };
    sample(
        Model::Conditioned(r, condition),
        r.schedule(),
        blocking.timeline_length(),
        blocking.num_joints(),
        seed,
        &mut hook,
    )
}

pub fn unconditioned_sample<T: Real>(
    u: &dyn DenoiserU<T>,
    frames: usize,
    joints: usize,
    seed: u64,
) -> Result<Motion<T>> {
    impute_observed(u, &[], (frames, joints), seed, &mut ignore_steps)
}

/// Strategy descriptor shared by the benchmark, CLI and service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Strategy {
    /// Constraint refinement. `tolerance` overrides every key's tolerance
    /// vector; the other fields override the refinement config.
    Detailing {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        search_radius: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_fix: Option<bool>,
    },
    NoTolerance,
    DiffusionBlending {
        tolerance: f64,
    },
    SoftMask {
        tolerance: f64,
        #[serde(default = "default_falloff")]
        falloff: usize,
    },
    Guidance {
        weight: f64,
    },
    HardImpute,
    Unconditioned,
}

fn default_falloff() -> usize {
    DEFAULT_FALLOFF
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::detailing(None)
    }
}

impl Strategy {
    pub fn detailing(tolerance: Option<f64>) -> Self {
        Strategy::Detailing {
            tolerance,
            n: None,
            search_radius: None,
            ground_fix: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |c: f64, what: &str| {
            if (0.0..=1.0).contains(&c) {
                Ok(())
            } else {
                Err(Error::Strategy(format!("{what} {c} outside [0, 1]")))
            }
        };
        match *self {
            Strategy::Detailing { tolerance, n, .. } => {
                if let Some(c) = tolerance {
                    unit(c, "tolerance")?;
                }
                if n == Some(0) {
                    return Err(Error::Strategy("refinement cadence must be at least 1".into()));
                }
                Ok(())
            }
            Strategy::DiffusionBlending { tolerance } => unit(tolerance, "tolerance"),
            Strategy::SoftMask { tolerance, falloff } => {
                unit(tolerance, "tolerance")?;
                if falloff == 0 {
                    return Err(Error::Strategy("falloff must be at least 1".into()));
                }
                Ok(())
            }
            Strategy::Guidance { weight } => {
                if weight >= 0.0 && weight.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Strategy(format!("guidance weight {weight} must be ≥ 0")))
                }
            }
            _ => Ok(()),
        }
    }

    /// Row label for reports.
    pub fn label(&self) -> String {
        match self {
            Strategy::Detailing {
                tolerance,
                n,
                search_radius,
                ground_fix,
            } => {
                let mut parts = Vec::new();
                if let Some(c) = tolerance {
                    parts.push(format!("c={c}"));
                }
                if let Some(n) = n {
                    parts.push(format!("N={n}"));
                }
                if let Some(r) = search_radius {
                    parts.push(format!("radius={r}"));
                }
                if let Some(g) = ground_fix {
                    parts.push(format!("ground_fix={g}"));
                }
                if parts.is_empty() {
                    "detailing".into()
                } else {
                    format!("detailing ({})", parts.join(", "))
                }
            }
            Strategy::NoTolerance => "R-NoTolerance".into(),
            Strategy::DiffusionBlending { tolerance } => format!("R-DiffusionBlending (c={tolerance})"),
            Strategy::SoftMask { tolerance, falloff } => format!("R-SoftMask (c={tolerance}, falloff={falloff})"),
            Strategy::Guidance { weight } => format!("U-Guidance (w={weight})"),
            Strategy::HardImpute => "U-HardImpute".into(),
            Strategy::Unconditioned => "U".into(),
        }
    }

    /// Parses a comma-separated list such as `detailing=0.85,hard-impute`.
    pub fn parse_list(text: &str) -> Result<Vec<Strategy>> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Strategy::from_str)
            .collect()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// `name` or `name=p1:p2:…`. Positional parameters:
/// `detailing=c:N:radius:ground_fix`, `diffusion-blending=c`,
/// `soft-mask=c:falloff`, `guidance=w`.
impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = match s.split_once('=') {
            Some((n, p)) => (n.trim(), p.split(':').map(str::trim).collect::<Vec<_>>()),
            None => (s.trim(), Vec::new()),
        };
        let bad = |msg: &str| Error::Strategy(format!("`{s}`: {msg}"));
        let float = |i: usize| -> Result<Option<f64>> {
            params
                .get(i)
                .filter(|p| !p.is_empty())
                .map(|p| p.parse::<f64>().map_err(|_| bad(&format!("`{p}` is not a number"))))
                .transpose()
        };
        let int = |i: usize| -> Result<Option<usize>> {
            params
                .get(i)
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|_| bad(&format!("`{p}` is not a non-negative integer")))
                })
                .transpose()
        };
        let max_params = |n: usize| {
            if params.len() > n {
                Err(bad(&format!("takes at most {n} parameter(s)")))
            } else {
                Ok(())
            }
        };
        let strategy = match name {
            "detailing" => {
                max_params(4)?;
                let ground_fix = params
                    .get(3)
                    .filter(|p| !p.is_empty())
                    .map(|p| p.parse::<bool>().map_err(|_| bad("ground_fix must be true or false")))
                    .transpose()?;
                Strategy::Detailing {
                    tolerance: float(0)?,
                    n: int(1)?,
                    search_radius: int(2)?,
                    ground_fix,
                }
            }
            "no-tolerance" => {
                max_params(0)?;
                Strategy::NoTolerance
            }
            "diffusion-blending" => {
                max_params(1)?;
                Strategy::DiffusionBlending {
                    tolerance: float(0)?.unwrap_or(DEFAULT_TOLERANCE_F64),
                }
            }
            "soft-mask" => {
                max_params(2)?;
                Strategy::SoftMask {
                    tolerance: float(0)?.unwrap_or(DEFAULT_TOLERANCE_F64),
                    falloff: int(1)?.unwrap_or(DEFAULT_FALLOFF),
                }
            }
            "guidance" => {
                max_params(1)?;
                Strategy::Guidance {
                    weight: float(0)?.ok_or_else(|| bad("needs a weight"))?,
                }
            }
            "hard-impute" => {
                max_params(0)?;
                Strategy::HardImpute
            }
            "unconditioned" => {
                max_params(0)?;
                Strategy::Unconditioned
            }
            other => return Err(Error::Strategy(format!("unknown strategy `{other}`"))),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

const DEFAULT_TOLERANCE_F64: f64 = crate::motion::DEFAULT_TOLERANCE;

/// Denoisers a strategy may use.
#[derive(Clone, Copy)]
pub struct Models<'a, T: Real> {
    pub r: &'a dyn DenoiserR<T>,
    pub u: &'a dyn DenoiserU<T>,
}

/// Output of [`run_strategy`]; only detailing produces a trace.
#[derive(Debug, Clone)]
pub struct StrategyOutput<T: Real> {
    pub motion: Motion<T>,
    pub trace: Option<RefinementTrace>,
}

/// Runs one strategy on one blocking set.
pub fn run_strategy<T: Real>(
    strategy: &Strategy,
    models: Models<'_, T>,
    blocking: &BlockingSet<T>,
    skeleton: &SkeletonSpec<T>,
    refinement: &RefinementConfig,
    seed: u64,
) -> Result<StrategyOutput<T>> {
    run_strategy_with_progress(strategy, models, blocking, skeleton, refinement, seed, &mut |_| Ok(()))
}

/// As [`run_strategy`], reporting progress. Strategies other than detailing
/// only report steps.
pub fn run_strategy_with_progress<T: Real>(
    strategy: &Strategy,
    models: Models<'_, T>,
    blocking: &BlockingSet<T>,
    skeleton: &SkeletonSpec<T>,
    refinement: &RefinementConfig,
    seed: u64,
    observer: &mut dyn FnMut(DetailProgress<'_>) -> Result<()>,
) -> Result<StrategyOutput<T>> {
    strategy.validate()?;
    check_pair(models.r, models.u)?;
    let steps = models.r.schedule().steps();
    let shape = (blocking.timeline_length(), blocking.num_joints());
    let mut observe = |t: usize| observer(DetailProgress::Step { t, steps });
    let motion = match *strategy {
        Strategy::Detailing {
            tolerance,
            n,
            search_radius,
            ground_fix,
        } => {
            let mut config = refinement.clone();
            if let Some(n) = n {
                config.n = n;
            }
            if let Some(radius) = search_radius {
                config.search_radius = radius;
            }
            if let Some(g) = ground_fix {
                config.apply_ground_fix = g;
            }
            let keys = match tolerance {
                Some(c) => blocking.with_uniform_tolerance(T::lit(c))?,
                None => blocking.clone(),
            };
            let (motion, trace) =
                detail_motion_with_progress(&keys, models.r, models.u, skeleton, &config, seed, observer)?;
            return Ok(StrategyOutput {
                motion,
                trace: Some(trace),
            });
        }
        Strategy::NoTolerance => no_tolerance_observed(models.r, blocking, seed, &mut observe)?,
        Strategy::DiffusionBlending { tolerance } => {
            let mask = sparse_mask(blocking, T::lit(tolerance))?;
            blended_observed(models.r, models.u, blocking, &mask, seed, &mut observe)?
        }
        Strategy::SoftMask { tolerance, falloff } => {
            let mask = soft_mask(blocking, T::lit(tolerance), falloff)?;
            blended_observed(models.r, models.u, blocking, &mask, seed, &mut observe)?
        }
        Strategy::Guidance { weight } => guided_observed(models.u, blocking, T::lit(weight), seed, &mut observe)?,
        Strategy::HardImpute => impute_observed(models.u, blocking.poses(), shape, seed, &mut observe)?,
        Strategy::Unconditioned => impute_observed(models.u, &[], shape, seed, &mut observe)?,
    };
    Ok(StrategyOutput { motion, trace: None })
}
