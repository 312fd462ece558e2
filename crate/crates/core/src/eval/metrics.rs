//! Motion quality metrics. All results are in `f64` whatever the motion's
//! scalar type.

use ndarray::{Array1, Array2, Axis};

use crate::detailing::match_pose;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::motion::{pose_distance, BlockingSet, Motion};
use crate::num::Real;
use crate::skeleton::{SkeletonSpec, ROOT};

pub const METRIC_LABEL: &str = "blockdetail-metric-v1";
pub const CONTACT_HEIGHT: f64 = 0.05;
pub const FEATURE_DIM: usize = 34;
const COVARIANCE_JITTER: f64 = 1e-6;
const HEIGHT_BINS: [f64; 3] = [0.02, 0.05, 0.15];

fn world_f64<T: Real>(motion: &Motion<T>) -> ndarray::Array3<f64> {
    motion.world_positions().mapv(|x| x.as_f64())
}

/// Mean horizontal foot displacement per frame pair, counting a pair only
/// when the foot is below `height_thresh` in both frames. The mean runs over
/// all `(F − 1) × feet` pairs, m/frame.
pub fn footskate<T: Real>(motion: &Motion<T>, skeleton: &SkeletonSpec<T>, height_thresh: f64) -> f64 {
    let w = world_f64(motion);
    let feet = skeleton.foot_joints();
    let f = motion.num_frames();
    if feet.is_empty() || f < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..f - 1 {
        for &j in feet {
            if w[[i, j, 1]] < height_thresh && w[[i + 1, j, 1]] < height_thresh {
                let dx = w[[i + 1, j, 0]] - w[[i, j, 0]];
                let dz = w[[i + 1, j, 2]] - w[[i, j, 2]];
                total += dx.hypot(dz);
            }
        }
    }
    total / ((f - 1) * feet.len()) as f64
}

/// Mean norm of the third finite difference of world joint positions over
/// all joints and frames, m/frame³.
pub fn jitter<T: Real>(motion: &Motion<T>) -> Result<f64> {
    let f = motion.num_frames();
    if f < 4 {
        return Err(Error::JitterTooShort(f));
    }
    let w = world_f64(motion);
    let j = motion.num_joints();
    let mut total = 0.0;
    for i in 0..f - 3 {
        for jj in 0..j {
            let mut sq = 0.0;
            for d in 0..3 {
                let v = w[[i + 3, jj, d]] - 3.0 * w[[i + 2, jj, d]] + 3.0 * w[[i + 1, jj, d]] - w[[i, jj, d]];
                sq += v * v;
            }
            total += sq.sqrt();
        }
    }
    Ok(total / ((f - 3) * j) as f64)
}

/// Mean over keys of the RMS error between each key and its best-matching
/// generated frame within `±radius`, on the key's specified joints.
pub fn keyframe_error<T: Real>(blocking: &BlockingSet<T>, generated: &Motion<T>, radius: usize) -> Result<f64> {
    if generated.num_frames() != blocking.timeline_length() || generated.num_joints() != blocking.num_joints() {
        return Err(Error::Shape(format!(
            "motion {}×{} vs blocking {}×{}",
            generated.num_frames(),
            generated.num_joints(),
            blocking.timeline_length(),
            blocking.num_joints()
        )));
    }
    let frames = generated.frames().view();
    let mut total = 0.0;
    for key in blocking.poses() {
        let f = match_pose(frames, key, radius)?;
        total += pose_distance(generated.pose(f), key.pose.features().view(), &key.specified)?.as_f64();
    }
    Ok(total / blocking.len() as f64)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Fixed-length clip statistics used for FID.
///
/// Layout: for each of five joint groups (root, feet, other important
/// joints, remaining joints, all joints) speed mean/std and acceleration
/// mean/std (20); root horizontal speed mean/std (2); foot-height histogram
/// with edges 0.02/0.05/0.15 m (4); per-axis pose extent mean/std (6); root
/// height mean/std (2).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatures(pub Array1<f64>);

impl MotionFeatures {
    pub fn extract<T: Real>(motion: &Motion<T>, skeleton: &SkeletonSpec<T>) -> Self {
        let w = world_f64(motion);
        let fps = motion.fps();
        let (f, j, _) = w.dim();
        let feet = skeleton.foot_joints();
        let important: Vec<usize> = skeleton
            .important_joints()
            .iter()
            .copied()
            .filter(|&x| x != ROOT)
            .collect();
        let rest: Vec<usize> = (1..j).filter(|x| !feet.contains(x) && !important.contains(x)).collect();
        let all: Vec<usize> = (0..j).collect();
        let groups: [&[usize]; 5] = [&[ROOT], feet, &important, &rest, &all];

        let speed = |i: usize, jj: usize| {
            let mut s = 0.0;
            for d in 0..3 {
                s += (w[[i + 1, jj, d]] - w[[i, jj, d]]).powi(2);
            }
            s.sqrt() * fps
        };
        let accel = |i: usize, jj: usize| {
            let mut s = 0.0;
            for d in 0..3 {
                s += (w[[i + 2, jj, d]] - 2.0 * w[[i + 1, jj, d]] + w[[i, jj, d]]).powi(2);
            }
            s.sqrt() * fps * fps
        };
        let mut out = Vec::with_capacity(FEATURE_DIM);
        for group in groups {
            let speeds: Vec<f64> = (0..f.saturating_sub(1))
                .flat_map(|i| group.iter().map(move |&jj| (i, jj)))
                .map(|(i, jj)| speed(i, jj))
                .collect();
            let accels: Vec<f64> = (0..f.saturating_sub(2))
                .flat_map(|i| group.iter().map(move |&jj| (i, jj)))
                .map(|(i, jj)| accel(i, jj))
                .collect();
            let (sm, ss) = mean_std(&speeds);
            let (am, as_) = mean_std(&accels);
            out.extend([sm, ss, am, as_]);
        }
        let root_h: Vec<f64> = (0..f.saturating_sub(1))
            .map(|i| (w[[i + 1, ROOT, 0]] - w[[i, ROOT, 0]]).hypot(w[[i + 1, ROOT, 2]] - w[[i, ROOT, 2]]) * fps)
            .collect();
        let (m, s) = mean_std(&root_h);
        out.extend([m, s]);

        let mut hist = [0.0; 4];
        let mut n = 0.0;
        for i in 0..f {
            for &jj in feet {
                let h = w[[i, jj, 1]];
                let bin = HEIGHT_BINS.iter().position(|&e| h < e).unwrap_or(3);
                hist[bin] += 1.0;
                n += 1.0;
            }
        }
        out.extend(hist.iter().map(|c| if n > 0.0 { c / n } else { 0.0 }));

        for d in 0..3 {
            let extents: Vec<f64> = (0..f)
                .map(|i| {
                    let col = w.slice(ndarray::s![i, .., d]);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    hi - lo
                })
                .collect();
            let (m, s) = mean_std(&extents);
            out.extend([m, s]);
        }
        let heights: Vec<f64> = (0..f).map(|i| w[[i, ROOT, 1]]).collect();
        let (m, s) = mean_std(&heights);
        out.extend([m, s]);
        debug_assert_eq!(out.len(), FEATURE_DIM);
        MotionFeatures(Array1::from_vec(out))
    }
}

pub fn feature_matrix<T: Real>(motions: &[Motion<T>], skeleton: &SkeletonSpec<T>) -> Array2<f64> {
    let rows: Vec<Array1<f64>> = motions.iter().map(|m| MotionFeatures::extract(m, skeleton).0).collect();
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    if views.is_empty() {
        return Array2::zeros((0, FEATURE_DIM));
    }
    ndarray::concatenate(Axis(0), &views).expect("equal feature lengths")
}

/// Mean and covariance of feature rows. With fewer than `d + 1` rows the
/// covariance is shrunk toward its diagonal by `(d + 1 − n)/(d + 1)`. The
/// diagonal always receives `+1e-6`.
pub fn gaussian_fit(features: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (n, d) = features.dim();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let centered = features - &mean;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = centered.t().dot(&centered) / denom;
    if n < d + 1 {
        let lambda = (d + 1 - n) as f64 / (d + 1) as f64;
        for i in 0..d {
            for k in 0..d {
                if i != k {
                    cov[[i, k]] *= 1.0 - lambda;
                }
            }
        }
    }
    for i in 0..d {
        cov[[i, i]] += COVARIANCE_JITTER;
    }
    Ok((mean, cov))
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("{} vs {} features", a.ncols(), b.ncols())));
    }
    let (ma, ca) = gaussian_fit(a)?;
    let (mb, cb) = gaussian_fit(b)?;
    frechet_from_moments(&ma, &ca, &mb, &cb)
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2})`. The trace of the square
/// root is the sum of singular values of `Laᵀ Lb`, with `L` the Cholesky
/// factors, which keeps small eigen-directions accurate.
pub fn frechet_from_moments(ma: &Array1<f64>, ca: &Array2<f64>, mb: &Array1<f64>, cb: &Array2<f64>) -> Result<f64> {
    let d = ma.len();
    let diff = ma - mb;
    let la = Cholesky::factor(ca.view())?;
    let lb = Cholesky::factor(cb.view())?;
    let k = la.lower().t().dot(lb.lower());
    let k = nalgebra::DMatrix::from_fn(d, d, |i, j| k[[i, j]]);
    let tr_sqrt: f64 = k.singular_values().iter().sum();
    let tr = ca.diag().sum() + cb.diag().sum() - 2.0 * tr_sqrt;
    Ok((diff.dot(&diff) + tr).max(0.0))
}

/// FID between two motion sets.
pub fn fid<T: Real>(set_a: &[Motion<T>], set_b: &[Motion<T>], skeleton: &SkeletonSpec<T>) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::EmptySet);
    }
    frechet_distance(&feature_matrix(set_a, skeleton), &feature_matrix(set_b, skeleton))
}
