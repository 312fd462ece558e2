//! Small per-frame residual MLP denoiser.
//!
//! Each output frame sees a ±`window` slice of the normalized noisy state
//! (and of the condition in R mode) plus a timestep embedding. The network
//! predicts a residual `r` on top of the per-channel Wiener estimate:
//!
//! ```text
//! x̂0 = m + √ᾱ s²/(ᾱ s² + 1−ᾱ) · (Y_t − √ᾱ m) + s √((1−ᾱ)/(ᾱ s² + 1−ᾱ)) · r
//! ```
//!
//! so an all-zero output layer already gives a sensible denoiser and the
//! regression target has unit scale at every t.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffusion::denoiser::{DenoiserR, DenoiserU};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::motion::{Condition, Motion, DIMS};

pub const MAX_PARAMETERS: usize = 5_000_000;
const STD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    /// Unconditioned.
    U,
    /// Condition-taking.
    R,
}

impl std::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelMode::U => "u",
            ModelMode::R => "r",
        })
    }
}

impl std::str::FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u" => Ok(ModelMode::U),
            "r" => Ok(ModelMode::R),
            other => Err(Error::Config(format!("unknown model mode `{other}` (expected u or r)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
    pub depth: usize,
    /// Half-width of the temporal input window, frames.
    pub window: usize,
    /// Length of the timestep embedding (even, ≥ 2).
    pub time_features: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            depth: 4,
            window: 4,
            time_features: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.depth == 0 {
            return Err(Error::Config("hidden width and depth must be positive".into()));
        }
        if self.time_features < 2 || !self.time_features.is_multiple_of(2) {
            return Err(Error::Config("time_features must be even and at least 2".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self, mode: ModelMode, channels: usize) -> usize {
        let per_frame = match mode {
            ModelMode::U => channels,
            ModelMode::R => 2 * channels,
        };
        (2 * self.window + 1) * per_frame + self.time_features
    }

    /// `(rows, cols)` of every dense layer's weight matrix.
    pub fn layer_shapes(&self, mode: ModelMode, channels: usize) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.input_dim(mode, channels), self.hidden)];
        shapes.extend(std::iter::repeat_n((self.hidden, self.hidden), self.depth - 1));
        shapes.push((self.hidden, channels));
        shapes
    }

    pub fn parameter_count(&self, mode: ModelMode, channels: usize) -> usize {
        self.layer_shapes(mode, channels).iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// Per-channel data statistics used for normalization and the Wiener skip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn from_motions(clips: &[Motion<f64>]) -> Result<Self> {
        let first = clips.first().ok_or(Error::EmptySet)?;
        let c = first.num_joints() * DIMS;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for clip in clips {
            if clip.num_joints() * DIMS != c {
                return Err(Error::Shape("clips have different joint counts".into()));
            }
            let flat = flatten(clip.frames());
            for row in flat.rows() {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v;
                }
            }
            n += flat.nrows();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for clip in clips {
            for row in flatten(clip.frames()).rows() {
                for (k, &v) in row.iter().enumerate() {
                    sq[k] += (v - mean[k]).powi(2);
                }
            }
        }
        let std = sq.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Intermediate values of one forward pass, kept for backprop.
pub(crate) struct Cache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    hidden: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiserNet {
    mode: ModelMode,
    config: NetConfig,
    schedule: NoiseSchedule<f64>,
    joints: usize,
    stats: NormStats,
    pub(crate) layers: Vec<Dense>,
    training_loss: Option<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub(crate) fn flatten(a: &Array3<f64>) -> Array2<f64> {
    let (f, j, d) = a.dim();
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((f, j * d))
        .expect("standard layout reshapes")
}

impl TinyDenoiserNet {
    /// Randomly initialized network; the output layer starts at zero.
    pub fn new(
        mode: ModelMode,
        config: NetConfig,
        schedule: NoiseSchedule<f64>,
        joints: usize,
        stats: NormStats,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let channels = joints * DIMS;
        if stats.channels() != channels || stats.std.len() != channels {
            return Err(Error::Shape(format!(
                "normalization stats cover {} channels, skeleton has {channels}",
                stats.channels()
            )));
        }
        let count = config.parameter_count(mode, channels);
        if count >= MAX_PARAMETERS {
            return Err(Error::Config(format!(
                "{count} parameters exceeds the {MAX_PARAMETERS} limit"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.layer_shapes(mode, channels);
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &(fan_in, fan_out))| {
                let w = if i == last {
                    Array2::zeros((fan_in, fan_out))
                } else {
                    let gain = if i == 0 { 1.0 } else { 0.5 };
                    let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng))
                };
                Dense {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            mode,
            config,
            schedule,
            joints,
            stats,
            layers,
            training_loss: None,
        })
    }

    pub(crate) fn from_parts(
        mode: ModelMode,
        config: NetConfig,
        schedule: NoiseSchedule<f64>,
        joints: usize,
        stats: NormStats,
        layers: Vec<Dense>,
        training_loss: Option<f64>,
    ) -> Result<Self> {
        let shapes = config.layer_shapes(mode, joints * DIMS);
        if shapes.len() != layers.len()
            || shapes
                .iter()
                .zip(&layers)
                .any(|(&(i, o), l)| l.w.dim() != (i, o) || l.b.len() != o)
        {
            return Err(Error::Checkpoint("layer shapes do not match the configuration".into()));
        }
        let mut net = Self::new(mode, config, schedule, joints, stats, 0)?;
        net.layers = layers;
        net.training_loss = training_loss;
        Ok(net)
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn training_loss(&self) -> Option<f64> {
        self.training_loss
    }

    pub(crate) fn set_training_loss(&mut self, loss: f64) {
        self.training_loss = Some(loss);
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    fn channels(&self) -> usize {
        self.joints * DIMS
    }

    /// Per-channel `(skip gain, residual scale)` at timestep `t`.
    fn coefficients(&self, t: usize) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let ab = self.schedule.alpha_bar(t);
        let a = ab.sqrt();
        let v = 1.0 - ab;
        let mut skip = Vec::with_capacity(self.channels());
        let mut post = Vec::with_capacity(self.channels());
        let mut in_scale = Vec::with_capacity(self.channels());
        for &s in &self.stats.std {
            let denom = ab * s * s + v;
            skip.push(a * s * s / denom);
            post.push(s * (v / denom).sqrt());
            in_scale.push(1.0 / denom.sqrt());
        }
        (a, skip, post, in_scale)
    }

    fn time_embedding(&self, t: usize) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(t);
        let tau = t as f64 / self.schedule.steps() as f64;
        let mut e = vec![ab.sqrt(), (1.0 - ab).sqrt()];
        for i in 0..(self.config.time_features - 2) / 2 {
            let w = std::f64::consts::FRAC_PI_2 * f64::from(1u32 << i.min(30));
            e.push((w * tau).sin());
            e.push((w * tau).cos());
        }
        e
    }

    /// Builds the F × input_dim design matrix for one clip.
    pub(crate) fn inputs(
        &self,
        noisy: ArrayView2<'_, f64>,
        condition: Option<ArrayView2<'_, f64>>,
        t: usize,
    ) -> Array2<f64> {
        let (f, c) = noisy.dim();
        let (a, _, _, in_scale) = self.coefficients(t);
        let m = &self.stats.mean;
        let s = &self.stats.std;
        let per_frame = if condition.is_some() { 2 * c } else { c };
        let mut y_norm = Array2::<f64>::zeros((f, per_frame));
        for fr in 0..f {
            for k in 0..c {
                y_norm[[fr, k]] = (noisy[[fr, k]] - a * m[k]) * in_scale[k];
            }
            if let Some(x) = condition {
                for k in 0..c {
                    y_norm[[fr, c + k]] = (x[[fr, k]] - m[k]) / s[k];
                }
            }
        }
        let w = self.config.window as isize;
        let dim = self.config.input_dim(self.mode, c);
        let time = self.time_embedding(t);
        let mut out = Array2::<f64>::zeros((f, dim));
        for fr in 0..f {
            let mut row = out.row_mut(fr);
            let mut col = 0;
            for off in -w..=w {
                let src = (fr as isize + off).clamp(0, f as isize - 1) as usize;
                row.slice_mut(s![col..col + per_frame]).assign(&y_norm.row(src));
                col += per_frame;
            }
            for (k, &e) in time.iter().enumerate() {
                row[col + k] = e;
            }
        }
        out
    }

    pub(crate) fn forward(&self, input: Array2<f64>) -> (Array2<f64>, Cache) {
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() - 1);
        let first = &self.layers[0];
        let z = input.dot(&first.w) + &first.b;
        hidden.push(z.mapv(silu));
        pre.push(z);
        for layer in &self.layers[1..self.layers.len() - 1] {
            let h = hidden.last().expect("first layer pushed");
            let z = h.dot(&layer.w) + &layer.b;
            let next = h + &z.mapv(silu);
            pre.push(z);
            hidden.push(next);
        }
        let last = self.layers.last().expect("at least two layers");
        let out = hidden.last().expect("non-empty").dot(&last.w) + &last.b;
        (out, Cache { input, pre, hidden })
    }

    /// Gradients of a loss given `d loss / d output`, layer by layer.
    pub(crate) fn backward(&self, cache: &Cache, d_out: &Array2<f64>) -> Vec<Dense> {
        let n = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n);
        let last_h = cache.hidden.last().expect("non-empty");
        grads.push(Dense {
            w: last_h.t().dot(d_out),
            b: d_out.sum_axis(Axis(0)),
        });
        let mut dh = d_out.dot(&self.layers[n - 1].w.t());
        for l in (1..n - 1).rev() {
            let dz = &dh * &cache.pre[l].mapv(silu_grad);
            grads.push(Dense {
                w: cache.hidden[l - 1].t().dot(&dz),
                b: dz.sum_axis(Axis(0)),
            });
            dh += &dz.dot(&self.layers[l].w.t());
        }
        let dz = &dh * &cache.pre[0].mapv(silu_grad);
        grads.push(Dense {
            w: cache.input.t().dot(&dz),
            b: dz.sum_axis(Axis(0)),
        });
        grads.reverse();
        grads
    }

    /// Regression target `r*` for a clean clip and its noisy version.
    pub(crate) fn residual_target(
        &self,
        clean: ArrayView2<'_, f64>,
        noisy: ArrayView2<'_, f64>,
        t: usize,
    ) -> Array2<f64> {
        let (a, skip, post, _) = self.coefficients(t);
        let m = &self.stats.mean;
        Array2::from_shape_fn(clean.dim(), |(f, k)| {
            let lin = m[k] + skip[k] * (noisy[[f, k]] - a * m[k]);
            (clean[[f, k]] - lin) / post[k]
        })
    }

    fn compose(&self, noisy: ArrayView2<'_, f64>, r: &Array2<f64>, t: usize) -> Array2<f64> {
        let (a, skip, post, _) = self.coefficients(t);
        let m = &self.stats.mean;
        Array2::from_shape_fn(noisy.dim(), |(f, k)| {
            m[k] + skip[k] * (noisy[[f, k]] - a * m[k]) + post[k] * r[[f, k]]
        })
    }

    fn predict(&self, condition: Option<&Array3<f64>>, noisy: &Array3<f64>, t: usize) -> Result<Array3<f64>> {
        self.schedule.check_timestep(t, 1)?;
        let shape = noisy.dim();
        if shape.1 != self.joints || shape.2 != DIMS {
            return Err(Error::SkeletonMismatch {
                expected_joints: self.joints,
                expected_dims: DIMS,
                found_joints: shape.1,
                found_dims: shape.2,
            });
        }
        let y = flatten(noisy);
        let x = match condition {
            Some(c) => {
                if c.dim() != shape {
                    return Err(Error::Shape(format!("condition {:?} vs state {:?}", c.dim(), shape)));
                }
                Some(flatten(c))
            }
            None => None,
        };
        let input = self.inputs(y.view(), x.as_ref().map(|x| x.view()), t);
        let (r, _) = self.forward(input);
        let out = self.compose(y.view(), &r, t);
        Ok(out.into_shape_with_order(shape).expect("same element count"))
    }
}

impl DenoiserU<f64> for TinyDenoiserNet {
    fn schedule(&self) -> &NoiseSchedule<f64> {
        &self.schedule
    }

    fn predict_x0(&self, noisy: &Array3<f64>, t: usize) -> Result<Array3<f64>> {
        if self.mode != ModelMode::U {
            return Err(Error::ModelMode("an R-mode network needs a condition".into()));
        }
        self.predict(None, noisy, t)
    }
}

impl DenoiserR<f64> for TinyDenoiserNet {
    fn schedule(&self) -> &NoiseSchedule<f64> {
        &self.schedule
    }

    fn predict_x0(&self, condition: &Condition<f64>, noisy: &Array3<f64>, t: usize) -> Result<Array3<f64>> {
        if self.mode != ModelMode::R {
            return Err(Error::ModelMode("a U-mode network takes no condition".into()));
        }
        self.predict(Some(condition.frames()), noisy, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(mode: ModelMode) -> TinyDenoiserNet {
        let schedule = NoiseSchedule::cosine(100).unwrap();
        let stats = NormStats {
            mean: vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.1],
            std: vec![0.2, 0.3, 0.1, 0.4, 0.25, 0.15],
        };
        let config = NetConfig {
            hidden: 7,
            depth: 3,
            window: 1,
            time_features: 4,
        };
        let mut net = TinyDenoiserNet::new(mode, config, schedule, 2, stats, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let last = net.layers.len() - 1;
        for b in net.layers[last].w.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        for l in net.layers.iter_mut() {
            for b in l.b.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        net
    }

    fn loss(net: &TinyDenoiserNet, input: &Array2<f64>, target: &Array2<f64>) -> f64 {
        let (out, _) = net.forward(input.clone());
        (&out - target).mapv(|x| x * x).sum() / out.len() as f64
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for mode in [ModelMode::U, ModelMode::R] {
            let net = toy(mode);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let y = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
            let x = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
            let cond = (mode == ModelMode::R).then(|| x.view());
            let input = net.inputs(y.view(), cond, 37);
            let target = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
            let (out, cache) = net.forward(input.clone());
            let d_out = (&out - &target).mapv(|d| 2.0 * d / out.len() as f64);
            let grads = net.backward(&cache, &d_out);
            let h = 1e-6;
            for (li, g) in grads.iter().enumerate() {
                for idx in [(0usize, 0usize), (g.w.nrows() - 1, g.w.ncols() - 1), (1, 2)] {
                    let mut plus = net.clone();
                    plus.layers[li].w[idx] += h;
                    let mut minus = net.clone();
                    minus.layers[li].w[idx] -= h;
                    let fd = (loss(&plus, &input, &target) - loss(&minus, &input, &target)) / (2.0 * h);
                    assert!(
                        (fd - g.w[idx]).abs() < 1e-7,
                        "{mode} layer {li} w{idx:?}: {fd} vs {}",
                        g.w[idx]
                    );
                }
                let mut plus = net.clone();
                plus.layers[li].b[0] += h;
                let mut minus = net.clone();
                minus.layers[li].b[0] -= h;
                let fd = (loss(&plus, &input, &target) - loss(&minus, &input, &target)) / (2.0 * h);
                assert!((fd - g.b[0]).abs() < 1e-7, "{mode} layer {li} b0");
            }
        }
    }

    #[test]
    fn residual_target_inverts_composition() {
        let net = toy(ModelMode::U);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = Array2::from_shape_simple_fn((4, 6), || rng.random_range(-1.0..1.0));
        let noisy = Array2::from_shape_simple_fn((4, 6), || rng.random_range(-1.0..1.0));
        let r = net.residual_target(clean.view(), noisy.view(), 20);
        let back = net.compose(noisy.view(), &r, 20);
        for (a, b) in back.iter().zip(clean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_is_enforced_and_defaults_fit_budget() {
        let u = toy(ModelMode::U);
        let cond = Condition::new(Array3::zeros((4, 2, 3))).unwrap();
        assert!(matches!(
            DenoiserR::predict_x0(&u, &cond, &Array3::zeros((4, 2, 3)), 3),
            Err(Error::ModelMode(_))
        ));
        assert!(DenoiserU::predict_x0(&u, &Array3::zeros((4, 2, 3)), 3).is_ok());
        let n = NetConfig::default().parameter_count(ModelMode::R, 48);
        assert!(n < MAX_PARAMETERS);
    }
}
