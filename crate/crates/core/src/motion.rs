//! Motion data model: poses, dense motions, blocking poses and the dense
//! condition built from them.
//!
//! Every pose is a J×3 array. Row 0 holds the root's world position; every
//! other row holds the joint position relative to the root, in world-aligned
//! axes. World position of joint `j` is therefore `root + local[j]`.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::skeleton::{SkeletonSpec, ROOT};

/// Feature dimension per joint.
/// Tolerance assigned to keys that do not state one.
pub const DEFAULT_TOLERANCE: f64 = 0.85;
pub const DIMS: usize = 3;
pub const DEFAULT_FPS: f64 = 20.0;
pub const DEFAULT_FRAMES: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct Pose<T: Real> {
    features: Array2<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(features: Array2<T>) -> Result<Self> {
        if features.ncols() != DIMS {
            return Err(Error::Shape(format!(
                "pose has {} columns, expected {DIMS}",
                features.ncols()
            )));
        }
        if let Some((joint, coord)) = first_non_finite2(features.view()) {
            return Err(Error::NonFinite { frame: 0, joint, coord });
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn into_features(self) -> Array2<T> {
        self.features
    }

    pub fn num_joints(&self) -> usize {
        self.features.nrows()
    }

    /// World-space position of joint `j`.
    pub fn world(&self, j: usize) -> [T; 3] {
        world_position(self.features.view(), j)
    }
}

#[inline]
pub(crate) fn world_position<T: Real>(pose: ArrayView2<'_, T>, j: usize) -> [T; 3] {
    if j == ROOT {
        [pose[[ROOT, 0]], pose[[ROOT, 1]], pose[[ROOT, 2]]]
    } else {
        [
            pose[[ROOT, 0]] + pose[[j, 0]],
            pose[[ROOT, 1]] + pose[[j, 1]],
            pose[[ROOT, 2]] + pose[[j, 2]],
        ]
    }
}

fn first_non_finite2<T: Real>(a: ArrayView2<'_, T>) -> Option<(usize, usize)> {
    a.indexed_iter().find(|(_, v)| !v.is_finite()).map(|(ix, _)| ix)
}

fn first_non_finite3<T: Real>(a: ArrayView3<'_, T>) -> Option<(usize, usize, usize)> {
    a.indexed_iter().find(|(_, v)| !v.is_finite()).map(|(ix, _)| ix)
}

/// Dense F×J×3 motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion<T: Real> {
    frames: Array3<T>,
    fps: f64,
}

impl<T: Real> Motion<T> {
    pub fn new(frames: Array3<T>, fps: f64) -> Result<Self> {
        let (f, _, d) = frames.dim();
        if f < 2 {
            return Err(Error::TooFewFrames(f));
        }
        if d != DIMS {
            return Err(Error::Shape(format!("motion has D={d}, expected {DIMS}")));
        }
        if let Some((frame, joint, coord)) = first_non_finite3(frames.view()) {
            return Err(Error::NonFinite { frame, joint, coord });
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &Array3<T> {
        &self.frames
    }

    pub fn into_frames(self) -> Array3<T> {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn num_joints(&self) -> usize {
        self.frames.dim().1
    }

    pub fn pose(&self, f: usize) -> ArrayView2<'_, T> {
        self.frames.index_axis(Axis(0), f)
    }

    /// World positions of every joint, F×J×3.
    pub fn world_positions(&self) -> Array3<T> {
        to_world(self.frames.view())
    }

    pub fn cast<U: Real>(&self) -> Motion<U> {
        Motion {
            frames: self.frames.mapv(|x| U::lit(x.as_f64())),
            fps: self.fps,
        }
    }
}

pub(crate) fn to_world<T: Real>(frames: ArrayView3<'_, T>) -> Array3<T> {
    let mut out = frames.to_owned();
    let (f, j, _) = frames.dim();
    for fi in 0..f {
        for ji in 1..j {
            for d in 0..DIMS {
                out[[fi, ji, d]] = frames[[fi, ROOT, d]] + frames[[fi, ji, d]];
            }
        }
    }
    out
}

/// One animator-authored key.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockingPose<T: Real> {
    pub frame: usize,
    pub pose: Pose<T>,
    /// `true` for joints the animator posed.
    pub specified: Vec<bool>,
    /// Per-joint tolerance `C_k` in [0, 1]; 1 keeps the authored value.
    pub tolerance: Vec<T>,
}

impl<T: Real> BlockingPose<T> {
    pub fn new(frame: usize, pose: Pose<T>, specified: Vec<bool>, tolerance: Vec<T>) -> Result<Self> {
        let key = Self {
            frame,
            pose,
            specified,
            tolerance,
        };
        key.validate()?;
        Ok(key)
    }

    /// Key with every joint set to the same tolerance.
    pub fn with_uniform_tolerance(frame: usize, pose: Pose<T>, specified: Vec<bool>, c: T) -> Result<Self> {
        let j = pose.num_joints();
        Self::new(frame, pose, specified, vec![c; j])
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.pose.num_joints();
        if self.specified.len() != j || self.tolerance.len() != j {
            return Err(Error::Shape(format!(
                "key at frame {}: {} joints, {} mask entries, {} tolerances",
                self.frame,
                j,
                self.specified.len(),
                self.tolerance.len()
            )));
        }
        if !self.specified[ROOT] {
            return Err(Error::InvalidBlocking(format!(
                "key at frame {} leaves the root unspecified",
                self.frame
            )));
        }
        check_tolerance(&self.tolerance)
    }

    /// Checks that every unspecified joint holds its rest value.
    pub fn check_neutral(&self, skeleton: &SkeletonSpec<T>) -> Result<()> {
        if skeleton.num_joints() != self.pose.num_joints() {
            return Err(Error::SkeletonMismatch {
                expected_joints: skeleton.num_joints(),
                expected_dims: DIMS,
                found_joints: self.pose.num_joints(),
                found_dims: DIMS,
            });
        }
        for (j, &spec) in self.specified.iter().enumerate() {
            if !spec && self.pose.features().row(j) != skeleton.rest().row(j) {
                return Err(Error::InvalidBlocking(format!(
                    "key at frame {}: unspecified joint {} is not at its rest value",
                    self.frame, j
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_tolerance<T: Real>(tolerance: &[T]) -> Result<()> {
    for (joint, &c) in tolerance.iter().enumerate() {
        if !(c >= T::zero() && c <= T::one()) {
            return Err(Error::Tolerance {
                joint,
                value: c.as_f64(),
            });
        }
    }
    Ok(())
}

/// K timed keys on a timeline of F frames, sorted by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockingSet<T: Real> {
    poses: Vec<BlockingPose<T>>,
    timeline_length: usize,
}

impl<T: Real> BlockingSet<T> {
    pub fn new(poses: Vec<BlockingPose<T>>, timeline_length: usize) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::NoBlockingPoses);
        }
        if timeline_length < 2 {
            return Err(Error::TooFewFrames(timeline_length));
        }
        if poses.len() > timeline_length {
            return Err(Error::InvalidBlocking(format!(
                "{} keys on a {}-frame timeline",
                poses.len(),
                timeline_length
            )));
        }
        let joints = poses[0].pose.num_joints();
        for (i, key) in poses.iter().enumerate() {
            key.validate()?;
            if key.pose.num_joints() != joints {
                return Err(Error::Shape(format!(
                    "key {i} has {} joints, key 0 has {joints}",
                    key.pose.num_joints()
                )));
            }
            if key.frame >= timeline_length {
                return Err(Error::InvalidBlocking(format!(
                    "key {i} at frame {} is outside [0, {timeline_length})",
                    key.frame
                )));
            }
            if i > 0 && poses[i - 1].frame >= key.frame {
                return Err(Error::InvalidBlocking(format!(
                    "key frames must be strictly increasing ({} then {})",
                    poses[i - 1].frame,
                    key.frame
                )));
            }
        }
        Ok(Self { poses, timeline_length })
    }

    /// Sorts keys by frame before validating.
    pub fn from_unsorted(mut poses: Vec<BlockingPose<T>>, timeline_length: usize) -> Result<Self> {
        poses.sort_by_key(|p| p.frame);
        Self::new(poses, timeline_length)
    }

    pub fn poses(&self) -> &[BlockingPose<T>] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timeline_length(&self) -> usize {
        self.timeline_length
    }

    pub fn num_joints(&self) -> usize {
        self.poses[0].pose.num_joints()
    }

    pub fn frames(&self) -> Vec<usize> {
        self.poses.iter().map(|p| p.frame).collect()
    }

    pub fn check_neutral(&self, skeleton: &SkeletonSpec<T>) -> Result<()> {
        self.poses.iter().try_for_each(|p| p.check_neutral(skeleton))
    }

    /// Replaces every key's tolerance vector with `c` on all joints.
    pub fn with_uniform_tolerance(&self, c: T) -> Result<Self> {
        check_tolerance(&[c])?;
        let poses = self
            .poses
            .iter()
            .map(|p| BlockingPose {
                tolerance: vec![c; p.tolerance.len()],
                ..p.clone()
            })
            .collect();
        Ok(Self {
            poses,
            timeline_length: self.timeline_length,
        })
    }

    /// Same frames and masks, new key poses.
    pub(crate) fn with_poses(&self, poses: Vec<BlockingPose<T>>) -> Result<Self> {
        Self::new(poses, self.timeline_length)
    }

    pub fn cast<U: Real>(&self) -> BlockingSet<U> {
        BlockingSet {
            poses: self
                .poses
                .iter()
                .map(|p| BlockingPose {
                    frame: p.frame,
                    pose: Pose {
                        features: p.pose.features.mapv(|x| U::lit(x.as_f64())),
                    },
                    specified: p.specified.clone(),
                    tolerance: p.tolerance.iter().map(|&c| U::lit(c.as_f64())).collect(),
                })
                .collect(),
            timeline_length: self.timeline_length,
        }
    }
}

/// Dense F×J×3 timeline fed to the conditioned denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition<T: Real> {
    frames: Array3<T>,
}

impl<T: Real> Condition<T> {
    pub fn new(frames: Array3<T>) -> Result<Self> {
        if frames.dim().2 != DIMS {
            return Err(Error::Shape(format!(
                "condition has D={}, expected {DIMS}",
                frames.dim().2
            )));
        }
        if let Some((frame, joint, coord)) = first_non_finite3(frames.view()) {
            return Err(Error::NonFinite { frame, joint, coord });
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Array3<T> {
        &self.frames
    }

    pub fn into_frames(self) -> Array3<T> {
        self.frames
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.frames.dim()
    }
}

/// Linear interpolation of blocking poses over the timeline, holding the
/// first and last key constant outside their range.
pub fn build_condition<T: Real>(blocking: &BlockingSet<T>) -> Result<Condition<T>> {
    let keys: Vec<(usize, ArrayView2<'_, T>)> = blocking
        .poses()
        .iter()
        .map(|p| (p.frame, p.pose.features().view()))
        .collect();
    let frames = interpolate_keys(&keys, blocking.timeline_length())?;
    Ok(Condition { frames })
}

/// Piecewise-linear interpolation of `(frame, J×3 pose)` knots, sorted by
/// frame, onto `len` frames. Knot frames receive the knot values exactly.
pub fn interpolate_keys<T: Real>(keys: &[(usize, ArrayView2<'_, T>)], len: usize) -> Result<Array3<T>> {
    let Some(&(first_frame, first)) = keys.first() else {
        return Err(Error::NoBlockingPoses);
    };
    let (j, d) = first.dim();
    let mut out = Array3::<T>::zeros((len, j, d));

    for f in 0..len.min(first_frame + 1) {
        out.slice_mut(s![f, .., ..]).assign(&first);
    }
    for pair in keys.windows(2) {
        let (fa, a) = pair[0];
        let (fb, b) = pair[1];
        let span = T::lit((fb - fa) as f64);
        for f in (fa + 1)..fb.min(len) {
            let w = T::lit((f - fa) as f64) / span;
            let one_minus = T::one() - w;
            let mut row = out.slice_mut(s![f, .., ..]);
            ndarray::Zip::from(&mut row)
                .and(&a)
                .and(&b)
                .for_each(|o, &x, &y| *o = one_minus * x + w * y);
        }
        if fb < len {
            out.slice_mut(s![fb, .., ..]).assign(&b);
        }
    }
    let &(last_frame, last) = keys.last().expect("non-empty");
    for f in (last_frame + 1)..len {
        out.slice_mut(s![f, .., ..]).assign(&last);
    }
    Ok(out)
}

/// RMS of per-coordinate differences over the masked joints. The root is
/// compared root-relative, so it contributes zero difference but still counts
/// toward the denominator.
pub fn pose_distance<T: Real>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, mask: &[bool]) -> Result<T> {
    if a.dim() != b.dim() || a.nrows() != mask.len() {
        return Err(Error::Shape(format!(
            "pose_distance on {:?} vs {:?} with {} mask entries",
            a.dim(),
            b.dim(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((masked_sq_sum(a, b, mask) / T::lit((count * a.ncols()) as f64)).sqrt())
}

#[inline]
pub(crate) fn masked_sq_sum<T: Real>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, mask: &[bool]) -> T {
    let mut acc = T::zero();
    for (j, &m) in mask.iter().enumerate() {
        if !m || j == ROOT {
            continue;
        }
        for d in 0..a.ncols() {
            let diff = a[[j, d]] - b[[j, d]];
            acc += diff * diff;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn pose_with(value: f64, joints: usize) -> Pose<f64> {
        Pose::new(Array2::from_elem((joints, DIMS), value)).unwrap()
    }

    fn key(frame: usize, value: f64) -> BlockingPose<f64> {
        BlockingPose::with_uniform_tolerance(frame, pose_with(value, 2), vec![true, true], 0.85).unwrap()
    }

    #[test]
    fn single_key_is_constant() {
        let b = BlockingSet::new(vec![key(10, 0.7)], 60).unwrap();
        let c = build_condition(&b).unwrap();
        assert_eq!(c.dim(), (60, 2, 3));
        assert!(c.frames().iter().all(|&x| x == 0.7));
    }

    #[test]
    fn midpoint_of_two_keys() {
        let b = BlockingSet::new(vec![key(0, 0.0), key(10, 1.0)], 20).unwrap();
        let c = build_condition(&b).unwrap();
        assert_eq!(c.frames()[[5, 1, 2]], 0.5);
        assert_eq!(c.frames()[[15, 0, 0]], 1.0);
    }

    #[test]
    fn empty_key_list_errors() {
        let err = interpolate_keys::<f64>(&[], 10).unwrap_err();
        assert_eq!(err.to_string(), "no blocking poses");
        assert!(matches!(
            BlockingSet::<f64>::new(vec![], 10),
            Err(Error::NoBlockingPoses)
        ));
    }

    #[test]
    fn blocking_invariants_enforced() {
        assert!(BlockingSet::new(vec![key(5, 0.0), key(5, 1.0)], 20).is_err());
        assert!(BlockingSet::new(vec![key(7, 0.0), key(5, 1.0)], 20).is_err());
        assert!(BlockingSet::new(vec![key(25, 0.0)], 20).is_err());
        let bad_root = BlockingPose::new(0, pose_with(0.0, 2), vec![false, true], vec![0.5, 0.5]);
        assert!(bad_root.is_err());
        let bad_tol = BlockingPose::new(0, pose_with(0.0, 2), vec![true, true], vec![1.5, 0.5]);
        assert!(matches!(bad_tol, Err(Error::Tolerance { joint: 0, .. })));
    }

    #[test]
    fn distance_of_single_joint() {
        let a = Array2::<f64>::zeros((3, 3));
        let mut b = a.clone();
        b[[1, 0]] = 0.3;
        b[[1, 2]] = 0.4;
        let d = pose_distance(a.view(), b.view(), &[false, true, false]).unwrap();
        assert!((d - 0.5 / 3f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            pose_distance(a.view(), b.view(), &[false; 3]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn root_translation_ignored() {
        let a = Array2::<f64>::zeros((2, 3));
        let mut b = a.clone();
        b[[0, 0]] = 4.0;
        assert_eq!(pose_distance(a.view(), b.view(), &[true, true]).unwrap(), 0.0);
    }

    #[test]
    fn motion_rejects_short_and_nan() {
        assert!(matches!(
            Motion::new(Array3::<f64>::zeros((1, 2, 3)), 20.0),
            Err(Error::TooFewFrames(1))
        ));
        let mut frames = Array3::<f64>::zeros((4, 2, 3));
        frames[[2, 1, 0]] = f64::NAN;
        assert!(matches!(
            Motion::new(frames, 20.0),
            Err(Error::NonFinite {
                frame: 2,
                joint: 1,
                coord: 0
            })
        ));
    }
}
