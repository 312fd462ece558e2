//! Joint hierarchy and rest geometry.
//!
//! Axes: `y` up, the character faces `+z`, its left side is `+x`. The ground
//! is the plane `y = 0`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion::{Pose, DIMS};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec<T: Real> {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    /// J×3. Root row is the standing world position of the root; every other
    /// row is the root-relative offset of the joint in its rest pose.
    rest: Array2<T>,
    important: Vec<usize>,
    feet: Vec<usize>,
}

pub const ROOT: usize = 0;

const DESK_JOINTS: [(&str, Option<usize>, [f64; 3]); 16] = [
    ("root", None, [0.0, 0.92, 0.0]),
    ("spine", Some(0), [0.0, 0.22, 0.0]),
    ("neck", Some(1), [0.0, 0.52, 0.0]),
    ("head", Some(2), [0.0, 0.68, 0.0]),
    ("l_shoulder", Some(2), [0.17, 0.48, 0.0]),
    ("l_elbow", Some(4), [0.17, 0.20, 0.0]),
    ("l_wrist", Some(5), [0.17, -0.05, 0.0]),
    ("r_shoulder", Some(2), [-0.17, 0.48, 0.0]),
    ("r_elbow", Some(7), [-0.17, 0.20, 0.0]),
    ("r_wrist", Some(8), [-0.17, -0.05, 0.0]),
    ("l_hip", Some(0), [0.09, -0.04, 0.0]),
    ("l_knee", Some(10), [0.09, -0.48, 0.0]),
    ("l_ankle", Some(11), [0.09, -0.92, 0.0]),
    ("r_hip", Some(0), [-0.09, -0.04, 0.0]),
    ("r_knee", Some(13), [-0.09, -0.48, 0.0]),
    ("r_ankle", Some(14), [-0.09, -0.92, 0.0]),
];

/// Joint indices of the default desk skeleton.
pub mod desk {
    pub const ROOT: usize = 0;
    pub const SPINE: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const L_SHOULDER: usize = 4;
    pub const L_ELBOW: usize = 5;
    pub const L_WRIST: usize = 6;
    pub const R_SHOULDER: usize = 7;
    pub const R_ELBOW: usize = 8;
    pub const R_WRIST: usize = 9;
    pub const L_HIP: usize = 10;
    pub const L_KNEE: usize = 11;
    pub const L_ANKLE: usize = 12;
    pub const R_HIP: usize = 13;
    pub const R_KNEE: usize = 14;
    pub const R_ANKLE: usize = 15;

    pub const JOINTS: usize = 16;
    pub const IMPORTANT: [usize; 9] = [
        ROOT, L_SHOULDER, L_ELBOW, R_SHOULDER, R_ELBOW, L_HIP, L_KNEE, R_HIP, R_KNEE,
    ];
    pub const FEET: [usize; 2] = [L_ANKLE, R_ANKLE];
}

impl<T: Real> SkeletonSpec<T> {
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<Option<usize>>,
        rest: Array2<T>,
        important: Vec<usize>,
        feet: Vec<usize>,
    ) -> Result<Self> {
        let j = joint_names.len();
        let bad = |msg: String| Err(Error::Config(format!("skeleton: {msg}")));
        if j == 0 {
            return bad("no joints".into());
        }
        if parents.len() != j || rest.dim() != (j, DIMS) {
            return bad(format!(
                "{} names, {} parents, rest shape {:?}",
                j,
                parents.len(),
                rest.dim()
            ));
        }
        if parents[ROOT].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for (i, p) in parents.iter().enumerate().skip(1) {
            match p {
                // Parents precede children, which rules out cycles.
                Some(p) if *p < i => {}
                _ => return bad(format!("joint {i} has invalid parent {p:?}")),
            }
        }
        if !important.contains(&ROOT) {
            return bad("important joints must include the root".into());
        }
        if important.iter().chain(feet.iter()).any(|&i| i >= j) {
            return bad("joint subset index out of range".into());
        }
        if rest.iter().any(|x| !x.is_finite()) {
            return bad("non-finite rest position".into());
        }
        Ok(Self {
            joint_names,
            parents,
            rest,
            important,
            feet,
        })
    }

    /// The 16-joint desk skeleton.
    pub fn desk() -> Self {
        let names = DESK_JOINTS.iter().map(|(n, _, _)| n.to_string()).collect();
        let parents = DESK_JOINTS.iter().map(|(_, p, _)| *p).collect();
        let rest = Array2::from_shape_fn((desk::JOINTS, DIMS), |(j, d)| T::lit(DESK_JOINTS[j].2[d]));
        Self::new(names, parents, rest, desk::IMPORTANT.to_vec(), desk::FEET.to_vec()).expect("desk skeleton is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest(&self) -> &Array2<T> {
        &self.rest
    }

    pub fn important_joints(&self) -> &[usize] {
        &self.important
    }

    pub fn foot_joints(&self) -> &[usize] {
        &self.feet
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Rest pose: root at its standing position, every other joint unposed.
    pub fn neutral_pose(&self) -> Pose<T> {
        Pose::new(self.rest.clone()).expect("rest pose is finite")
    }

    pub fn cast<U: Real>(&self) -> SkeletonSpec<U> {
        SkeletonSpec {
            joint_names: self.joint_names.clone(),
            parents: self.parents.clone(),
            rest: self.rest.mapv(|x| U::lit(x.as_f64())),
            important: self.important.clone(),
            feet: self.feet.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_layout() {
        let s = SkeletonSpec::<f64>::desk();
        assert_eq!(s.num_joints(), 16);
        assert_eq!(s.important_joints().len(), 9);
        assert!(s.important_joints().contains(&ROOT));
        assert_eq!(s.joint_index("r_ankle"), Some(desk::R_ANKLE));
        // Standing rest pose puts the ankles on the ground.
        for &f in s.foot_joints() {
            let h = s.rest()[[ROOT, 1]] + s.rest()[[f, 1]];
            assert!(h.abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_cycles_and_missing_root() {
        let rest = Array2::<f64>::zeros((2, 3));
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(SkeletonSpec::new(names.clone(), vec![None, Some(1)], rest.clone(), vec![0], vec![]).is_err());
        assert!(SkeletonSpec::new(names.clone(), vec![Some(1), Some(0)], rest.clone(), vec![0], vec![]).is_err());
        assert!(SkeletonSpec::new(names, vec![None, Some(0)], rest, vec![1], vec![]).is_err());
    }
}
