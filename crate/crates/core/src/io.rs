//! JSON motion and blocking files, both carrying `"format_version": 1`.
//!
//! Motion: `{format_version, skeleton: {joint_names, parents, rest}, fps,
//! frames: F×J×3}`. Blocking: `{format_version, timeline_length, poses:
//! [{frame, features, specified, tolerance}]}`.
//!
//! Coordinates are written as shortest round-trip decimals, so saving and
//! loading reproduces every `f64` bit for bit. Non-finite coordinates cannot
//! be JSON numbers; `null` or the strings `"NaN"`/`"inf"` are read far enough
//! to report where the bad value sits.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::motion::{BlockingPose, BlockingSet, Motion, Pose, DEFAULT_TOLERANCE, DIMS};
use crate::num::Real;
use crate::skeleton::SkeletonSpec;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SkeletonDoc {
    pub joint_names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub rest: Vec<[f64; 3]>,
    #[serde(default)]
    pub important_joints: Vec<usize>,
    #[serde(default)]
    pub foot_joints: Vec<usize>,
}

impl SkeletonDoc {
    pub fn from_spec<T: Real>(s: &SkeletonSpec<T>) -> Self {
        Self {
            joint_names: s.joint_names().to_vec(),
            parents: s.parents().to_vec(),
            rest: s
                .rest()
                .rows()
                .into_iter()
                .map(|r| [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()])
                .collect(),
            important_joints: s.important_joints().to_vec(),
            foot_joints: s.foot_joints().to_vec(),
        }
    }

    pub fn to_spec<T: Real>(&self) -> Result<SkeletonSpec<T>> {
        let rest = Array2::from_shape_fn((self.rest.len(), DIMS), |(j, d)| T::lit(self.rest[j][d]));
        SkeletonSpec::new(
            self.joint_names.clone(),
            self.parents.clone(),
            rest,
            self.important_joints.clone(),
            self.foot_joints.clone(),
        )
    }
}

#[derive(Serialize)]
struct MotionOut<'a> {
    format_version: u64,
    skeleton: &'a SkeletonDoc,
    fps: f64,
    frames: Vec<Vec<[f64; 3]>>,
}

#[derive(Deserialize)]
struct MotionIn {
    format_version: u64,
    skeleton: SkeletonDoc,
    fps: f64,
    frames: Value,
}

#[derive(Serialize)]
struct BlockingOut {
    format_version: u64,
    timeline_length: usize,
    poses: Vec<KeyOut>,
}

#[derive(Serialize)]
struct KeyOut {
    frame: usize,
    features: Vec<[f64; 3]>,
    specified: Vec<bool>,
    tolerance: Vec<f64>,
}

#[derive(Deserialize)]
struct BlockingIn {
    format_version: u64,
    timeline_length: usize,
    poses: Vec<KeyIn>,
}

#[derive(Deserialize)]
struct KeyIn {
    frame: usize,
    features: Value,
    specified: Vec<bool>,
    /// Defaults to 0.85 on every joint when absent.
    #[serde(default)]
    tolerance: Option<Vec<f64>>,
}

fn rows_of<T: Real>(a: ndarray::ArrayView2<'_, T>) -> Vec<[f64; 3]> {
    a.rows()
        .into_iter()
        .map(|r| [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()])
        .collect()
}

/// Serializes a motion with its skeleton.
pub fn motion_to_json<T: Real>(motion: &Motion<T>, skeleton: &SkeletonSpec<T>) -> Result<String> {
    if motion.num_joints() != skeleton.num_joints() {
        return Err(Error::SkeletonMismatch {
            expected_joints: skeleton.num_joints(),
            expected_dims: DIMS,
            found_joints: motion.num_joints(),
            found_dims: DIMS,
        });
    }
    let doc = SkeletonDoc::from_spec(skeleton);
    let out = MotionOut {
        format_version: FORMAT_VERSION,
        skeleton: &doc,
        fps: motion.fps(),
        frames: motion.frames().outer_iter().map(|p| rows_of(p)).collect(),
    };
    Ok(serde_json::to_string(&out).expect("motion serializes"))
}

/// Parses a motion file, checking it against the expected skeleton.
pub fn motion_from_json<T: Real>(text: &str, expected: &SkeletonSpec<T>) -> Result<Motion<T>> {
    let doc: MotionIn = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion(doc.format_version));
    }
    let file_joints = doc.skeleton.joint_names.len();
    if doc.skeleton.joint_names != expected.joint_names() || doc.skeleton.parents != expected.parents() {
        return Err(Error::SkeletonMismatch {
            expected_joints: expected.num_joints(),
            expected_dims: DIMS,
            found_joints: file_joints,
            found_dims: doc.skeleton.rest.first().map_or(DIMS, |r| r.len()),
        });
    }
    let frames = parse_frames(&doc.frames, expected.num_joints())?;
    Motion::new(frames, doc.fps)
}

pub fn save_motion<T: Real>(motion: &Motion<T>, skeleton: &SkeletonSpec<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, motion_to_json(motion, skeleton)?)?;
    Ok(())
}

pub fn load_motion<T: Real>(path: impl AsRef<Path>, expected: &SkeletonSpec<T>) -> Result<Motion<T>> {
    motion_from_json(&fs::read_to_string(path)?, expected)
}

pub fn blocking_to_json<T: Real>(blocking: &BlockingSet<T>) -> String {
    let out = BlockingOut {
        format_version: FORMAT_VERSION,
        timeline_length: blocking.timeline_length(),
        poses: blocking
            .poses()
            .iter()
            .map(|k| KeyOut {
                frame: k.frame,
                features: rows_of(k.pose.features().view()),
                specified: k.specified.clone(),
                tolerance: k.tolerance.iter().map(|c| c.as_f64()).collect(),
            })
            .collect(),
    };
    serde_json::to_string(&out).expect("blocking serializes")
}

/// Parses a blocking file. The joint count must match `expected`; keys are
/// validated against the `BlockingSet` invariants.
pub fn blocking_from_json<T: Real>(text: &str, expected: &SkeletonSpec<T>) -> Result<BlockingSet<T>> {
    let doc: BlockingIn = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
    blocking_from_doc(doc, expected)
}

pub fn blocking_from_value<T: Real>(value: Value, expected: &SkeletonSpec<T>) -> Result<BlockingSet<T>> {
    let doc: BlockingIn = serde_json::from_value(value).map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    blocking_from_doc(doc, expected)
}

fn blocking_from_doc<T: Real>(doc: BlockingIn, expected: &SkeletonSpec<T>) -> Result<BlockingSet<T>> {
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion(doc.format_version));
    }
    let mut poses = Vec::with_capacity(doc.poses.len());
    for key in doc.poses {
        let features = parse_pose(&key.features, expected.num_joints()).map_err(|e| match e {
            Error::NonFinite { joint, coord, .. } => Error::NonFinite {
                frame: key.frame,
                joint,
                coord,
            },
            other => other,
        })?;
        let tolerance = match key.tolerance {
            Some(c) => c.into_iter().map(T::lit).collect(),
            None => vec![T::lit(DEFAULT_TOLERANCE); expected.num_joints()],
        };
        poses.push(BlockingPose::new(
            key.frame,
            Pose::new(features)?,
            key.specified,
            tolerance,
        )?);
    }
    BlockingSet::new(poses, doc.timeline_length)
}

pub fn save_blocking<T: Real>(blocking: &BlockingSet<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, blocking_to_json(blocking))?;
    Ok(())
}

pub fn load_blocking<T: Real>(path: impl AsRef<Path>, expected: &SkeletonSpec<T>) -> Result<BlockingSet<T>> {
    blocking_from_json(&fs::read_to_string(path)?, expected)
}

fn coordinate(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::Null => Some(f64::NAN),
        Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "nan" => Some(f64::NAN),
            "inf" | "infinity" => Some(f64::INFINITY),
            "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

fn mismatch(expected_joints: usize, found_joints: usize, found_dims: usize) -> Error {
    Error::SkeletonMismatch {
        expected_joints,
        expected_dims: DIMS,
        found_joints,
        found_dims,
    }
}

fn parse_pose<T: Real>(v: &Value, joints: usize) -> Result<Array2<T>> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Shape("pose features must be a J×3 array".into()))?;
    if rows.len() != joints {
        return Err(mismatch(joints, rows.len(), DIMS));
    }
    let mut out = Array2::<T>::zeros((joints, DIMS));
    for (j, row) in rows.iter().enumerate() {
        let coords = row
            .as_array()
            .ok_or_else(|| Error::Shape(format!("joint {j} is not a coordinate array")))?;
        if coords.len() != DIMS {
            return Err(mismatch(joints, joints, coords.len()));
        }
        for (d, c) in coords.iter().enumerate() {
            let x = coordinate(c).ok_or_else(|| Error::Shape(format!("joint {j} coordinate {d} is not a number")))?;
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    frame: 0,
                    joint: j,
                    coord: d,
                });
            }
            out[[j, d]] = T::lit(x);
        }
    }
    Ok(out)
}

fn parse_frames<T: Real>(v: &Value, joints: usize) -> Result<Array3<T>> {
    let frames = v
        .as_array()
        .ok_or_else(|| Error::Shape("frames must be an F×J×3 array".into()))?;
    if frames.len() < 2 {
        return Err(Error::TooFewFrames(frames.len()));
    }
    let mut out = Array3::<T>::zeros((frames.len(), joints, DIMS));
    for (f, pose) in frames.iter().enumerate() {
        let p = parse_pose::<T>(pose, joints).map_err(|e| match e {
            Error::NonFinite { joint, coord, .. } => Error::NonFinite { frame: f, joint, coord },
            other => other,
        })?;
        out.index_axis_mut(ndarray::Axis(0), f).assign(&p);
    }
    Ok(out)
}

/// Converts serde_json's line/column into a byte offset into `text`.
fn parse_error(text: &str, e: &serde_json::Error) -> Error {
    let line = e.line().max(1);
    let column = e.column();
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    Error::Parse {
        offset: (line_start + column.saturating_sub(1)).min(text.len()),
        message: e.to_string(),
    }
}
