//! Resolving model identifiers to denoisers.
//!
//! An identifier is either `gaussian` (the analytic backend built around the
//! skeleton's rest pose) or a checkpoint. The CLI takes checkpoint paths; the
//! service takes names looked up under `<data dir>/models/<name>.bdnet`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use blockdetail::baselines::Models;
use blockdetail::diffusion::checkpoint::load_checkpoint;
use blockdetail::diffusion::gaussian::DEFAULT_OBSERVATION_VARIANCE;
use blockdetail::diffusion::net::{ModelMode, TinyDenoiserNet};
use blockdetail::diffusion::{
    DenoiserR, DenoiserU, GaussianConditionalDenoiser, GaussianDenoiser, GaussianMotionPrior, KernelParams,
    NoiseSchedule,
};
use blockdetail::skeleton::SkeletonSpec;
use ndarray::Array3;

use crate::error::CliError;

pub const GAUSSIAN: &str = "gaussian";

pub struct LoadedModels {
    pub r: Arc<dyn DenoiserR<f64>>,
    pub u: Arc<dyn DenoiserU<f64>>,
}

impl LoadedModels {
    pub fn models(&self) -> Models<'_, f64> {
        Models {
            r: self.r.as_ref(),
            u: self.u.as_ref(),
        }
    }

    /// Analytic pair for `frames`-long clips on `skeleton`.
    pub fn gaussian(
        skeleton: &SkeletonSpec<f64>,
        frames: usize,
        schedule: &NoiseSchedule<f64>,
    ) -> Result<Self, CliError> {
        let rest = skeleton.rest();
        let mean = Array3::from_shape_fn((frames, skeleton.num_joints(), 3), |(_, j, d)| rest[[j, d]]);
        let prior = GaussianMotionPrior::new(mean, KernelParams::default())?;
        Ok(Self {
            r: Arc::new(GaussianConditionalDenoiser::new(
                prior.clone(),
                schedule.clone(),
                DEFAULT_OBSERVATION_VARIANCE,
            )?),
            u: Arc::new(GaussianDenoiser::new(prior, schedule.clone())?),
        })
    }
}

/// Checkpoints loaded so far, keyed by path.
#[derive(Default)]
pub struct CheckpointCache {
    nets: Mutex<HashMap<PathBuf, Arc<TinyDenoiserNet>>>,
}

impl CheckpointCache {
    pub fn load(&self, path: &Path) -> Result<Arc<TinyDenoiserNet>, CliError> {
        if let Some(net) = self.nets.lock().expect("cache lock").get(path) {
            return Ok(net.clone());
        }
        if !path.exists() {
            return Err(CliError::not_found(format!("model {} does not exist", path.display())));
        }
        let net = Arc::new(load_checkpoint(path)?);
        self.nets
            .lock()
            .expect("cache lock")
            .insert(path.to_path_buf(), net.clone());
        Ok(net)
    }
}

/// Resolves identifiers to an R/U pair. No identifiers, or `gaussian`,
/// selects the analytic backend; otherwise exactly one R and one U
/// checkpoint are required.
pub fn resolve(
    ids: &[String],
    locate: impl Fn(&str) -> Result<PathBuf, CliError>,
    cache: &CheckpointCache,
    skeleton: &SkeletonSpec<f64>,
    frames: usize,
    schedule: &NoiseSchedule<f64>,
) -> Result<LoadedModels, CliError> {
    if ids.is_empty() || ids.iter().all(|id| id == GAUSSIAN) {
        return LoadedModels::gaussian(skeleton, frames, schedule);
    }
    if ids.iter().any(|id| id == GAUSSIAN) {
        return Err(CliError::field(
            "models",
            "gaussian cannot be combined with checkpoints",
        ));
    }
    let mut r = None;
    let mut u = None;
    for id in ids {
        let net = cache.load(&locate(id)?)?;
        if net.joints() != skeleton.num_joints() {
            return Err(CliError::field(
                "models",
                format!(
                    "{id} was trained for {} joints, skeleton has {}",
                    net.joints(),
                    skeleton.num_joints()
                ),
            ));
        }
        let slot = match net.mode() {
            ModelMode::R => &mut r,
            ModelMode::U => &mut u,
        };
        if slot.replace(net).is_some() {
            return Err(CliError::field(
                "models",
                format!("more than one {} model given", slot.as_ref().unwrap().mode()),
            ));
        }
    }
    match (r, u) {
        (Some(r), Some(u)) => Ok(LoadedModels { r, u }),
        (None, _) => Err(CliError::field("models", "an R-mode model is required")),
        (_, None) => Err(CliError::field("models", "a U-mode model is required")),
    }
}

/// Service model names: letters, digits, `-` and `_` only.
pub fn model_path(data_dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(CliError::field("models", format!("invalid model name `{name}`")));
    }
    Ok(data_dir.join("models").join(format!("{name}.bdnet")))
}
