//! Tolerance-weighted constraint refinement.
//!
//! Sampling runs the conditioned model R. Every `N` steps the unconditioned
//! model U is evaluated on the same noisy state, each key is blended toward
//! the best-matching U frame by its tolerance vector, and the condition is
//! rebuilt from the refined keys. Key frame indices never move; retiming is
//! left to R.

use ndarray::{Array2, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::diffusion::denoiser::{DenoiserR, DenoiserU};
use crate::diffusion::sampler::{check_schedule, sample, Model};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::motion::{
    build_condition, check_tolerance, pose_distance, BlockingPose, BlockingSet, Condition, Motion, Pose,
    DEFAULT_TOLERANCE, DIMS,
};
use crate::num::Real;
use crate::skeleton::{SkeletonSpec, ROOT};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    /// Refinement cadence in denoising steps.
    pub n: usize,
    pub search_radius: usize,
    pub apply_ground_fix: bool,
    pub default_tolerance: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            n: 100,
            search_radius: 10,
            apply_ground_fix: true,
            default_tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl RefinementConfig {
    /// `N` larger than the schedule length is accepted and simply never fires.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("refinement cadence N must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.default_tolerance) {
            return Err(Error::Config("default_tolerance must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn fires_at(&self, t: usize) -> bool {
        t.is_multiple_of(self.n)
    }

    /// Number of refinement events over a `steps`-step schedule.
    pub fn event_count(&self, steps: usize) -> usize {
        steps / self.n
    }
}

/// Best frame for `key` in `proposal` within `±radius` of the key frame,
/// compared on the key's specified joints. Ties go to the frame closest to
/// the key, then to the earlier frame.
pub fn match_pose<T: Real>(proposal: ArrayView3<'_, T>, key: &BlockingPose<T>, radius: usize) -> Result<usize> {
    let f = proposal.dim().0;
    if key.frame >= f {
        return Err(Error::Shape(format!(
            "key frame {} outside {f}-frame proposal",
            key.frame
        )));
    }
    let target = key.pose.features().view();
    let mut best = key.frame;
    let mut best_d = pose_distance(proposal.index_axis(ndarray::Axis(0), best), target, &key.specified)?;
    for step in 1..=radius {
        let candidates = [key.frame.checked_sub(step), Some(key.frame + step).filter(|&c| c < f)];
        for c in candidates.into_iter().flatten() {
            let d = pose_distance(proposal.index_axis(ndarray::Axis(0), c), target, &key.specified)?;
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        if key.frame < step && key.frame + step >= f {
            break;
        }
    }
    Ok(best)
}

/// `C ⊙ key + (1 − C) ⊙ proposal`, with each joint's tolerance applied to
/// all of its coordinates.
pub fn blend_key<T: Real>(key: &BlockingPose<T>, proposal: ArrayView2<'_, T>) -> Result<Pose<T>> {
    check_tolerance(&key.tolerance)?;
    let x = key.pose.features();
    if proposal.dim() != x.dim() || key.tolerance.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "blend of key {:?} with proposal {:?}",
            x.dim(),
            proposal.dim()
        )));
    }
    let out = Array2::from_shape_fn(x.dim(), |(j, d)| {
        let c = key.tolerance[j];
        c * x[[j, d]] + (T::one() - c) * proposal[[j, d]]
    });
    Pose::new(out)
}

/// Lifts penetrating feet to the ground. A single penetrating foot is
/// projected to height 0; if every foot penetrates, the root rises by the
/// deepest penetration first.
pub fn ground_fix<T: Real>(key: &BlockingPose<T>, skeleton: &SkeletonSpec<T>) -> Result<BlockingPose<T>> {
    let mut features = key.pose.features().clone();
    let feet = skeleton.foot_joints();
    let height = |f: &Array2<T>, j: usize| f[[ROOT, 1]] + f[[j, 1]];
    let depths: Vec<T> = feet.iter().map(|&j| -height(&features, j)).collect();
    if depths.iter().all(|&d| d <= T::zero()) {
        return Ok(key.clone());
    }
    if !feet.is_empty() && depths.iter().all(|&d| d > T::zero()) {
        let lift = depths.iter().fold(T::zero(), |m, &d| m.max(d));
        features[[ROOT, 1]] += lift;
    }
    for &j in feet {
        if height(&features, j) < T::zero() {
            features[[j, 1]] = -features[[ROOT, 1]];
        }
    }
    Ok(BlockingPose {
        pose: Pose::new(features)?,
        ..key.clone()
    })
}

fn rows<T: Real>(a: ArrayView2<'_, T>) -> Vec<[f64; 3]> {
    a.rows()
        .into_iter()
        .map(|r| [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRefinement {
    /// Index of the key within the blocking set.
    pub key: usize,
    pub frame: usize,
    pub matched_frame: usize,
    /// Key features before this event.
    pub before: Vec<[f64; 3]>,
    /// U's pose at the matched frame.
    pub proposal: Vec<[f64; 3]>,
    /// Key features after blending and the optional ground fix.
    pub after: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementEvent {
    pub t: usize,
    pub keys: Vec<KeyRefinement>,
    /// F×J×3 condition installed after this event.
    pub condition: Vec<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub format_version: u32,
    pub steps: usize,
    pub config: RefinementConfig,
    pub events: Vec<RefinementEvent>,
}

impl RefinementTrace {
    pub fn new(steps: usize, config: RefinementConfig) -> Self {
        Self {
            format_version: TRACE_FORMAT_VERSION,
            steps,
            config,
            events: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let trace: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: 0,
            message: e.to_string(),
        })?;
        if trace.format_version != TRACE_FORMAT_VERSION {
            return Err(Error::FormatVersion(trace.format_version.into()));
        }
        Ok(trace)
    }
}

/// One refinement event: match, blend, optionally fix ground contact, and
/// rebuild the condition. The ground fix is skipped for keys whose
/// tolerances are all 1, so full adherence leaves keys untouched.
/// The returned event has `t = 0`; the caller stamps it.
pub fn refine_condition<T: Real>(
    blocking: &BlockingSet<T>,
    proposal: ArrayView3<'_, T>,
    skeleton: &SkeletonSpec<T>,
    config: &RefinementConfig,
) -> Result<(BlockingSet<T>, Condition<T>, RefinementEvent)> {
    let (f, j, d) = proposal.dim();
    if f != blocking.timeline_length() || j != blocking.num_joints() || d != DIMS {
        return Err(Error::Shape(format!(
            "proposal {:?} for a {}-frame, {}-joint blocking set",
            proposal.dim(),
            blocking.timeline_length(),
            blocking.num_joints()
        )));
    }
    let mut poses = Vec::with_capacity(blocking.len());
    let mut keys = Vec::with_capacity(blocking.len());
    for (k, key) in blocking.poses().iter().enumerate() {
        let matched = match_pose(proposal, key, config.search_radius)?;
        let candidate = proposal.index_axis(ndarray::Axis(0), matched);
        let blended = BlockingPose {
            pose: blend_key(key, candidate)?,
            ..key.clone()
        };
        let refined = if config.apply_ground_fix && key.tolerance.iter().any(|&c| c < T::one()) {
            ground_fix(&blended, skeleton)?
        } else {
            blended
        };
        keys.push(KeyRefinement {
            key: k,
            frame: key.frame,
            matched_frame: matched,
            before: rows(key.pose.features().view()),
            proposal: rows(candidate),
            after: rows(refined.pose.features().view()),
        });
        poses.push(refined);
    }
    let refined = blocking.with_poses(poses)?;
    let condition = build_condition(&refined)?;
    let event = RefinementEvent {
        t: 0,
        keys,
        condition: condition.frames().outer_iter().map(|p| rows(p)).collect(),
    };
    Ok((refined, condition, event))
}

/// Progress notifications from [`detail_motion_with_progress`].
#[derive(Debug, Clone, Copy)]
pub enum DetailProgress<'a> {
    /// A denoising step at `t` finished predicting.
    Step {
        t: usize,
        steps: usize,
    },
    Refinement(&'a RefinementEvent),
}

pub fn detail_motion<T: Real>(
    blocking: &BlockingSet<T>,
    r: &dyn DenoiserR<T>,
    u: &dyn DenoiserU<T>,
    skeleton: &SkeletonSpec<T>,
    config: &RefinementConfig,
    seed: u64,
) -> Result<(Motion<T>, RefinementTrace)> {
    detail_motion_with_progress(blocking, r, u, skeleton, config, seed, &mut |_| Ok(()))
}

/// R sampling with refinement events at every `t ≡ 0 (mod N)`. The observer
/// may abort the run by returning an error.
pub fn detail_motion_with_progress<T: Real>(
    blocking: &BlockingSet<T>,
    r: &dyn DenoiserR<T>,
    u: &dyn DenoiserU<T>,
    skeleton: &SkeletonSpec<T>,
    config: &RefinementConfig,
    seed: u64,
    observer: &mut dyn FnMut(DetailProgress<'_>) -> Result<()>,
) -> Result<(Motion<T>, RefinementTrace)> {
    config.validate()?;
    let schedule: &NoiseSchedule<T> = r.schedule();
    check_schedule(u.schedule(), schedule)?;
    let steps = schedule.steps();
    let mut trace = RefinementTrace::new(steps, config.clone());
    let mut current = blocking.clone();
    let condition = build_condition(blocking)?;
    let mut hook = |t: usize, noisy: &ndarray::Array3<T>, _x0: &ndarray::Array3<T>| -> Result<Option<Condition<T>>> {
        observer(DetailProgress::Step { t, steps })?;
        if !config.fires_at(t) {
            return Ok(None);
        }
        let proposal = u.predict_x0(noisy, t)?;
        let (refined, condition, mut event) = refine_condition(&current, proposal.view(), skeleton, config)?;
        event.t = t;
        observer(DetailProgress::Refinement(&event))?;
        trace.events.push(event);
        current = refined;
        Ok(Some(condition))
    };
    let motion = sample(
        Model::Conditioned(r, condition),
        schedule,
        blocking.timeline_length(),
        blocking.num_joints(),
        seed,
        &mut hook,
    )?;
    Ok((motion, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::desk;
    use ndarray::Array3;

    fn key(frame: usize, values: Array2<f64>, c: f64) -> BlockingPose<f64> {
        let j = values.nrows();
        BlockingPose::with_uniform_tolerance(frame, Pose::new(values).unwrap(), vec![true; j], c).unwrap()
    }

    #[test]
    fn match_finds_exact_copy() {
        let mut proposal = Array3::<f64>::from_shape_fn((30, 2, 3), |(f, j, d)| (f * 7 + j * 3 + d) as f64 * 0.01);
        let target = Array2::from_shape_fn((2, 3), |(j, d)| 5.0 + (j + d) as f64);
        proposal.slice_mut(ndarray::s![13, .., ..]).assign(&target);
        let k = key(10, target, 1.0);
        assert_eq!(match_pose(proposal.view(), &k, 10).unwrap(), 13);
        assert_eq!(match_pose(proposal.view(), &k, 0).unwrap(), 10);
    }

    #[test]
    fn ties_prefer_nearest_then_earlier() {
        let proposal = Array3::<f64>::zeros((20, 2, 3));
        let k = key(5, Array2::ones((2, 3)), 1.0);
        assert_eq!(match_pose(proposal.view(), &k, 10).unwrap(), 5);
        let mut p = proposal.clone();
        p[[3, 1, 0]] = 1.0;
        p[[7, 1, 0]] = 1.0;
        assert_eq!(match_pose(p.view(), &k, 10).unwrap(), 3);
    }

    #[test]
    fn blend_arithmetic() {
        let k = key(0, Array2::ones((2, 3)), 0.85);
        let out = blend_key(&k, Array2::zeros((2, 3)).view()).unwrap();
        assert!(out.features().iter().all(|&v| v == 0.85));
        let bad = BlockingPose {
            tolerance: vec![1.2, 0.5],
            ..k
        };
        assert!(matches!(
            blend_key(&bad, Array2::zeros((2, 3)).view()),
            Err(Error::Tolerance { .. })
        ));
    }

    #[test]
    fn ground_fix_cases() {
        let skel = SkeletonSpec::<f64>::desk();
        let rest = skel.neutral_pose().into_features();
        let mut spec = vec![false; desk::JOINTS];
        spec[ROOT] = true;
        let standing =
            BlockingPose::with_uniform_tolerance(0, Pose::new(rest.clone()).unwrap(), spec.clone(), 0.5).unwrap();
        assert_eq!(ground_fix(&standing, &skel).unwrap(), standing);

        let mut one = rest.clone();
        one[[desk::L_ANKLE, 1]] -= 0.03;
        let k = BlockingPose::with_uniform_tolerance(0, Pose::new(one.clone()).unwrap(), spec.clone(), 0.5).unwrap();
        let fixed = ground_fix(&k, &skel).unwrap();
        let f = fixed.pose.features();
        assert!((f[[ROOT, 1]] + f[[desk::L_ANKLE, 1]]).abs() < 1e-12);
        assert_eq!(f[[ROOT, 1]], one[[ROOT, 1]]);
        assert_eq!(f.row(desk::R_ANKLE), one.row(desk::R_ANKLE));

        let mut both = rest.clone();
        both[[desk::L_ANKLE, 1]] -= 0.02;
        both[[desk::R_ANKLE, 1]] -= 0.05;
        let k = BlockingPose::with_uniform_tolerance(0, Pose::new(both.clone()).unwrap(), spec, 0.5).unwrap();
        let fixed = ground_fix(&k, &skel).unwrap();
        let f = fixed.pose.features();
        assert!((f[[ROOT, 1]] - both[[ROOT, 1]] - 0.05).abs() < 1e-12);
        for &foot in &desk::FEET {
            assert!(f[[ROOT, 1]] + f[[foot, 1]] >= -1e-9);
        }
        for j in 1..desk::JOINTS {
            if !desk::FEET.contains(&j) {
                assert_eq!(f.row(j), both.row(j));
            }
        }
    }

    #[test]
    fn cadence_counts() {
        let c = RefinementConfig::default();
        assert_eq!((1..=1000).filter(|&t| c.fires_at(t)).count(), 10);
        assert_eq!(c.event_count(1000), 10);
        let never = RefinementConfig {
            n: 1001,
            ..Default::default()
        };
        assert_eq!((1..=1000).filter(|&t| never.fires_at(t)).count(), 0);
        assert!(RefinementConfig {
            n: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
