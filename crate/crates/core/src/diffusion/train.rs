use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::net::{flatten, Dense, ModelMode, NetConfig, NormStats, TinyDenoiserNet};
use crate::diffusion::sampler::standard_normal;
use crate::diffusion::schedule::{forward_noise, NoiseSchedule};
use crate::error::{Error, Result};
use crate::eval::blocking::{draw_blocking_from_pool, BenchmarkSpec};
use crate::motion::{build_condition, Motion};
use crate::skeleton::SkeletonSpec;

pub const MIN_TRAINING_CLIPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub steps: usize,
    /// Clips per minibatch; every frame of a clip is one training row.
    pub batch_clips: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub seed: u64,
    /// Key count upper bound for R-mode training conditions.
    pub max_keys: usize,
    /// Key time perturbation for R-mode training conditions, frames.
    pub time_jitter: usize,
    /// Fraction of R-mode conditions whose keys keep only a random subset of
    /// important joints (the rest get full poses).
    pub masked_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            steps: 3000,
            batch_clips: 8,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            seed: 0,
            max_keys: 10,
            time_jitter: 5,
            masked_fraction: 0.5,
        }
    }
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Dense]) -> Self {
        let zeros = || {
            layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.dim()),
                    b: ndarray::Array1::zeros(l.b.len()),
                })
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, layers: &mut [Dense], grads: &[Dense], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for (((layer, grad), m), v) in layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.w)
                .and(&grad.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            ndarray::Zip::from(&mut layer.b)
                .and(&grad.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}

fn check_dataset(clips: &[Motion<f64>], skeleton: &SkeletonSpec<f64>) -> Result<()> {
    let first = clips.first().ok_or(Error::EmptySet)?;
    if clips.len() < MIN_TRAINING_CLIPS {
        return Err(Error::DatasetTooSmall(format!(
            "{} clips, need at least {MIN_TRAINING_CLIPS}",
            clips.len()
        )));
    }
    let f = first.num_frames();
    for clip in clips {
        if clip.num_frames() != f {
            return Err(Error::InconsistentDataset {
                expected: f,
                found: clip.num_frames(),
            });
        }
        if clip.num_joints() != skeleton.num_joints() {
            return Err(Error::SkeletonMismatch {
                expected_joints: skeleton.num_joints(),
                expected_dims: crate::motion::DIMS,
                found_joints: clip.num_joints(),
                found_dims: crate::motion::DIMS,
            });
        }
    }
    Ok(())
}

/// Training condition for R: keys copied from the clean clip at jittered
/// times, linearly interpolated.
fn training_condition(
    clip: &Motion<f64>,
    skeleton: &SkeletonSpec<f64>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let spec = BenchmarkSpec {
        max_keys: config.max_keys,
        time_jitter: config.time_jitter,
        clip_length: clip.num_frames(),
        ..Default::default()
    };
    let all: Vec<usize> = (0..skeleton.num_joints()).collect();
    let drawn = if rng.random_bool(config.masked_fraction) {
        draw_blocking_from_pool(
            clip,
            skeleton,
            &spec,
            skeleton.important_joints(),
            spec.keep_probability,
            rng,
        )?
    } else {
        draw_blocking_from_pool(clip, skeleton, &spec, &all, 1.0, rng)?
    };
    Ok(flatten(build_condition(&drawn.blocking)?.frames()))
}

/// Trains a U- or R-mode network by minibatch Adam on the residual target.
/// Deterministic for a given config and dataset.
pub fn train_denoiser(
    clips: &[Motion<f64>],
    skeleton: &SkeletonSpec<f64>,
    schedule: &NoiseSchedule<f64>,
    mode: ModelMode,
    config: &TrainConfig,
) -> Result<TinyDenoiserNet> {
    check_dataset(clips, skeleton)?;
    if config.steps == 0 || config.batch_clips == 0 {
        return Err(Error::Config("steps and batch_clips must be positive".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.masked_fraction) {
        return Err(Error::Config("masked_fraction must lie in [0, 1]".into()));
    }
    let stats = NormStats::from_motions(clips)?;
    let mut net = TinyDenoiserNet::new(
        mode,
        config.net.clone(),
        schedule.clone(),
        skeleton.num_joints(),
        stats,
        config.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
    let mut adam = Adam::new(&net.layers);
    let t_max = schedule.steps();
    let tail = (config.steps / 10).max(1);
    let mut tail_loss = 0.0;

    for step in 0..config.steps {
        let mut inputs = Vec::with_capacity(config.batch_clips);
        let mut targets = Vec::with_capacity(config.batch_clips);
        for _ in 0..config.batch_clips {
            let clip = &clips[rng.random_range(0..clips.len())];
            let t = rng.random_range(1..=t_max);
            let noise = standard_normal::<f64>(clip.frames().dim(), &mut rng);
            let noisy = flatten(&forward_noise(schedule, clip.frames(), t, &noise)?);
            let clean = flatten(clip.frames());
            let cond = match mode {
                ModelMode::U => None,
                ModelMode::R => Some(training_condition(clip, skeleton, config, &mut rng)?),
            };
            inputs.push(net.inputs(noisy.view(), cond.as_ref().map(|c| c.view()), t));
            targets.push(net.residual_target(clean.view(), noisy.view(), t));
        }
        let input = stack(&inputs);
        let target = stack(&targets);
        let (out, cache) = net.forward(input);
        let diff = &out - &target;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let d_out = diff.mapv(|d| 2.0 * d / n);
        let mut grads = net.backward(&cache, &d_out);
        let norm = grads
            .iter()
            .map(|g| g.w.iter().chain(g.b.iter()).map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if norm > config.clip_norm {
            let scale = config.clip_norm / norm;
            for g in grads.iter_mut() {
                g.w.mapv_inplace(|x| x * scale);
                g.b.mapv_inplace(|x| x * scale);
            }
        }
        let progress = step as f64 / config.steps as f64;
        let lr = config.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        adam.update(&mut net.layers, &grads, lr);
        if step + tail >= config.steps {
            tail_loss += loss;
        }
    }
    net.set_training_loss(tail_loss / tail as f64);
    Ok(net)
}

fn stack(parts: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("rows share a width")
}

/// Mean squared x0 error, in m², over every clip at each of the given
/// timesteps. R-mode networks get conditions built from every frame of the
/// clean clip, i.e. an exact and unperturbed condition.
pub fn validation_mse(net: &TinyDenoiserNet, clips: &[Motion<f64>], timesteps: &[usize], seed: u64) -> Result<f64> {
    use crate::diffusion::denoiser::{DenoiserR, DenoiserU};
    use crate::motion::Condition;

    if clips.is_empty() || timesteps.is_empty() {
        return Err(Error::EmptySet);
    }
    let schedule = DenoiserU::schedule(net);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for clip in clips {
        for &t in timesteps {
            let noise = standard_normal::<f64>(clip.frames().dim(), &mut rng);
            let noisy = forward_noise(schedule, clip.frames(), t, &noise)?;
            let pred = match net.mode() {
                ModelMode::U => DenoiserU::predict_x0(net, &noisy, t)?,
                ModelMode::R => {
                    let cond = Condition::new(clip.frames().clone())?;
                    DenoiserR::predict_x0(net, &cond, &noisy, t)?
                }
            };
            total += (&pred - clip.frames()).mapv(|d| d * d).sum();
            count += pred.len();
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_dataset;

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            net: NetConfig {
                hidden: 16,
                depth: 2,
                window: 1,
                time_features: 4,
            },
            steps: 20,
            batch_clips: 2,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let skel = SkeletonSpec::desk();
        let clips = synth_dataset::<f64>(100, 12, 1).unwrap();
        let schedule = NoiseSchedule::cosine(50).unwrap();
        for mode in [ModelMode::U, ModelMode::R] {
            let a = train_denoiser(&clips, &skel, &schedule, mode, &tiny_config(4)).unwrap();
            let b = train_denoiser(&clips, &skel, &schedule, mode, &tiny_config(4)).unwrap();
            assert_eq!(a.parameters(), b.parameters());
            assert!(a.training_loss().unwrap().is_finite());
            let c = train_denoiser(&clips, &skel, &schedule, mode, &tiny_config(5)).unwrap();
            assert_ne!(a.parameters(), c.parameters());
        }
    }

    #[test]
    fn rejects_ragged_and_small_datasets() {
        let skel = SkeletonSpec::desk();
        let schedule = NoiseSchedule::cosine(50).unwrap();
        let mut clips = synth_dataset::<f64>(100, 12, 1).unwrap();
        clips.push(synth_dataset::<f64>(1, 13, 1).unwrap().remove(0));
        assert!(matches!(
            train_denoiser(&clips, &skel, &schedule, ModelMode::U, &tiny_config(0)),
            Err(Error::InconsistentDataset {
                expected: 12,
                found: 13
            })
        ));
        assert!(matches!(
            train_denoiser(&clips[..10], &skel, &schedule, ModelMode::U, &tiny_config(0)),
            Err(Error::DatasetTooSmall(_))
        ));
    }
}
