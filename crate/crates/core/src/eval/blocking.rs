//! Synthetic blocking sets cut from ground-truth clips: a few keys, a random
//! subset of important joints, the rest neutral, and jittered key times.

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{BlockingPose, BlockingSet, Motion, Pose, DEFAULT_FRAMES, DEFAULT_TOLERANCE};
use crate::num::Real;
use crate::skeleton::{SkeletonSpec, ROOT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub max_keys: usize,
    /// Maximum key time offset, frames.
    pub time_jitter: usize,
    pub clip_length: usize,
    pub seed: u64,
    pub count: usize,
    /// Chance that each non-root important joint is kept in a key.
    pub keep_probability: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            max_keys: 10,
            time_jitter: 5,
            clip_length: DEFAULT_FRAMES,
            seed: 0,
            count: 50,
            keep_probability: 0.5,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_keys < 1 {
            return Err(Error::Config("max_keys must be at least 1".into()));
        }
        if self.clip_length < 2 {
            return Err(Error::TooFewFrames(self.clip_length));
        }
        if !(0.0..=1.0).contains(&self.keep_probability) {
            return Err(Error::Config("keep_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Inclusive key-count range, shrunk for short clips.
    pub fn key_range(&self) -> (usize, usize) {
        let hi = self.max_keys.min((self.clip_length / 2).max(1));
        (2.min(hi), hi)
    }
}

/// A drawn blocking set together with the ground-truth frame each key was
/// copied from.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnBlocking<T: Real> {
    pub blocking: BlockingSet<T>,
    pub source_frames: Vec<usize>,
}

/// Draws `(source, placed)` frame pairs sorted by placed frame. Placed frames
/// are `source + offset`, `|offset| ≤ jitter`, clamped to the timeline and
/// unique. A colliding key is redrawn among the free frames of its window
/// and dropped if there are none.
pub(crate) fn draw_key_frames(
    rng: &mut ChaCha8Rng,
    frames: usize,
    range: (usize, usize),
    jitter: usize,
) -> Vec<(usize, usize)> {
    let k = rng.random_range(range.0..=range.1).min(frames);
    let mut sources = index::sample(rng, frames, k).into_vec();
    sources.sort_unstable();
    let mut taken = vec![false; frames];
    let mut out = Vec::with_capacity(k);
    let j = jitter as isize;
    let last = frames as isize - 1;
    for src in sources {
        let lo = (src as isize - j).max(0);
        let hi = (src as isize + j).min(last);
        let offset = rng.random_range(-(j as i64)..=j as i64) as isize;
        let mut placed = (src as isize + offset).clamp(0, last) as usize;
        if taken[placed] {
            let free: Vec<usize> = (lo..=hi).map(|f| f as usize).filter(|&f| !taken[f]).collect();
            if free.is_empty() {
                continue;
            }
            placed = free[rng.random_range(0..free.len())];
        }
        taken[placed] = true;
        out.push((src, placed));
    }
    out.sort_unstable_by_key(|&(_, placed)| placed);
    out
}

pub(crate) fn draw_blocking_from_pool<T: Real>(
    gt: &Motion<T>,
    skeleton: &SkeletonSpec<T>,
    spec: &BenchmarkSpec,
    pool: &[usize],
    keep_probability: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DrawnBlocking<T>> {
    spec.validate()?;
    let frames = gt.num_frames();
    if frames != spec.clip_length {
        return Err(Error::Shape(format!(
            "clip has {frames} frames, benchmark expects {}",
            spec.clip_length
        )));
    }
    let j = gt.num_joints();
    if j != skeleton.num_joints() {
        return Err(Error::SkeletonMismatch {
            expected_joints: skeleton.num_joints(),
            expected_dims: crate::motion::DIMS,
            found_joints: j,
            found_dims: crate::motion::DIMS,
        });
    }
    let pairs = draw_key_frames(rng, frames, spec.key_range(), spec.time_jitter);
    let mut poses = Vec::with_capacity(pairs.len());
    let mut source_frames = Vec::with_capacity(pairs.len());
    for (src, placed) in pairs {
        let mut specified = vec![false; j];
        specified[ROOT] = true;
        for &joint in pool {
            if joint != ROOT && rng.random_bool(keep_probability) {
                specified[joint] = true;
            }
        }
        let source = gt.pose(src);
        let rest = skeleton.rest();
        let features = Array2::from_shape_fn(
            (j, 3),
            |(jj, d)| {
                if specified[jj] {
                    source[[jj, d]]
                } else {
                    rest[[jj, d]]
                }
            },
        );
        let key =
            BlockingPose::with_uniform_tolerance(placed, Pose::new(features)?, specified, T::lit(DEFAULT_TOLERANCE))?;
        poses.push(key);
        source_frames.push(src);
    }
    Ok(DrawnBlocking {
        blocking: BlockingSet::new(poses, frames)?,
        source_frames,
    })
}

/// Draws one benchmark blocking set from a ground-truth clip using `rng`.
pub fn draw_blocking<T: Real>(
    gt: &Motion<T>,
    skeleton: &SkeletonSpec<T>,
    spec: &BenchmarkSpec,
    rng: &mut ChaCha8Rng,
) -> Result<DrawnBlocking<T>> {
    draw_blocking_from_pool(
        gt,
        skeleton,
        spec,
        skeleton.important_joints(),
        spec.keep_probability,
        rng,
    )
}

/// Seeded single draw. Keys carry the default tolerance 0.85.
pub fn make_blocking<T: Real>(
    gt: &Motion<T>,
    skeleton: &SkeletonSpec<T>,
    spec: &BenchmarkSpec,
    seed: u64,
) -> Result<BlockingSet<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_blocking(gt, skeleton, spec, &mut rng)?.blocking)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_motion, MotionKind};

    #[test]
    fn no_perturbation_reproduces_ground_truth() {
        let skel = SkeletonSpec::<f64>::desk();
        let gt = synth_motion::<f64>(MotionKind::Walk, 60, 3).unwrap();
        let spec = BenchmarkSpec {
            time_jitter: 0,
            keep_probability: 1.0,
            ..Default::default()
        };
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let drawn = draw_blocking(&gt, &skel, &spec, &mut rng).unwrap();
            for (key, &src) in drawn.blocking.poses().iter().zip(&drawn.source_frames) {
                assert_eq!(key.frame, src);
                for &j in skel.important_joints() {
                    assert!(key.specified[j]);
                    assert_eq!(key.pose.features().row(j), gt.pose(src).row(j));
                }
            }
        }
    }

    #[test]
    fn short_clips_shrink_key_range() {
        let skel = SkeletonSpec::<f64>::desk();
        let gt = synth_motion::<f64>(MotionKind::Idle, 6, 1).unwrap();
        let spec = BenchmarkSpec {
            clip_length: 6,
            ..Default::default()
        };
        assert_eq!(spec.key_range(), (2, 3));
        for seed in 0..200 {
            let b = make_blocking(&gt, &skel, &spec, seed).unwrap();
            assert!((1..=3).contains(&b.len()));
            b.check_neutral(&skel).unwrap();
        }
    }
}
