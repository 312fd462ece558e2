#![allow(dead_code)]

use blockdetail::diffusion::{
    GaussianConditionalDenoiser, GaussianDenoiser, GaussianMotionPrior, KernelParams, NoiseSchedule,
};
use blockdetail::motion::{BlockingPose, BlockingSet, Pose};
use blockdetail::skeleton::SkeletonSpec;
use ndarray::{Array2, Array3};

pub const OBS_VAR: f64 = 0.01;

/// Rest pose tiled over `frames` as the prior mean.
pub fn rest_mean(skeleton: &SkeletonSpec<f64>, frames: usize) -> Array3<f64> {
    let rest = skeleton.rest();
    Array3::from_shape_fn((frames, skeleton.num_joints(), 3), |(_, j, d)| rest[[j, d]])
}

pub fn gaussian_pair(
    skeleton: &SkeletonSpec<f64>,
    frames: usize,
    schedule: &NoiseSchedule<f64>,
) -> (GaussianConditionalDenoiser<f64>, GaussianDenoiser<f64>) {
    let prior = GaussianMotionPrior::new(rest_mean(skeleton, frames), KernelParams::default()).unwrap();
    (
        GaussianConditionalDenoiser::new(prior.clone(), schedule.clone(), OBS_VAR).unwrap(),
        GaussianDenoiser::new(prior, schedule.clone()).unwrap(),
    )
}

pub fn key(frame: usize, values: Array2<f64>, specified: Vec<bool>, c: f64) -> BlockingPose<f64> {
    BlockingPose::with_uniform_tolerance(frame, Pose::new(values).unwrap(), specified, c).unwrap()
}

/// Keys copied from a few frames of `source` with every joint specified.
pub fn full_keys(source: &Array3<f64>, frames: &[usize], c: f64) -> BlockingSet<f64> {
    let j = source.dim().1;
    let poses = frames
        .iter()
        .map(|&f| key(f, source.index_axis(ndarray::Axis(0), f).to_owned(), vec![true; j], c))
        .collect();
    BlockingSet::new(poses, source.dim().0).unwrap()
}

/// Records every U prediction so tests can compare against refinement traces.
pub struct Recording<'a> {
    pub inner: &'a dyn blockdetail::diffusion::DenoiserU<f64>,
    pub calls: std::sync::Mutex<Vec<(usize, Array3<f64>)>>,
}

impl<'a> Recording<'a> {
    pub fn new(inner: &'a dyn blockdetail::diffusion::DenoiserU<f64>) -> Self {
        Self {
            inner,
            calls: std::sync::Mutex::new(Vec::new()),
        }
    }
}

impl blockdetail::diffusion::DenoiserU<f64> for Recording<'_> {
    fn schedule(&self) -> &NoiseSchedule<f64> {
        self.inner.schedule()
    }

    fn predict_x0(&self, noisy: &Array3<f64>, t: usize) -> blockdetail::Result<Array3<f64>> {
        let out = self.inner.predict_x0(noisy, t)?;
        self.calls.lock().unwrap().push((t, out.clone()));
        Ok(out)
    }
}
