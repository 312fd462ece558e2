//! Benchmark runner, reports, and the refinement-cadence ablation.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{run_strategy, Models, Strategy};
use crate::detailing::RefinementConfig;
use crate::error::{Error, Result};
use crate::eval::blocking::{draw_blocking, BenchmarkSpec};
use crate::eval::metrics::{
    feature_matrix, footskate, frechet_distance, jitter, keyframe_error, CONTACT_HEIGHT, METRIC_LABEL,
};
use crate::motion::{BlockingSet, Motion};
use crate::num::Real;
use crate::skeleton::SkeletonSpec;

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const KE_RADIUS: usize = 10;

/// Seed for clip `i` of a benchmark. Blocking and sampling use separate
/// streams.
fn clip_seeds(master: u64, i: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(i as u64);
    use rand::RngCore;
    (rng.next_u64(), rng.next_u64())
}

/// Blocking sets and sampling seeds for every clip, in order.
pub fn benchmark_inputs<T: Real>(
    dataset: &[Motion<T>],
    skeleton: &SkeletonSpec<T>,
    spec: &BenchmarkSpec,
) -> Result<Vec<(BlockingSet<T>, u64)>> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, gt)| {
            let (blocking_seed, sample_seed) = clip_seeds(spec.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(blocking_seed);
            Ok((draw_blocking(gt, skeleton, spec, &mut rng)?.blocking, sample_seed))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: Strategy,
    pub label: String,
    /// m/frame.
    pub footskate: f64,
    /// m/frame³.
    pub jitter: f64,
    pub fid: f64,
    /// m.
    pub ke: f64,
    pub clips: usize,
    pub failures: Vec<ClipFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFailure {
    pub clip: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub metric_label: String,
    pub spec: BenchmarkSpec,
    pub refinement: RefinementConfig,
    pub clip_count: usize,
    pub sample_seeds: Vec<u64>,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, strategy: &Strategy) -> Option<&ReportRow> {
        self.rows.iter().find(|r| &r.strategy == strategy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: 0,
            message: e.to_string(),
        })?;
        if r.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::FormatVersion(r.format_version.into()));
        }
        Ok(r)
    }

    /// Aligned table with FootSkate in 10⁻³ and Jitter in 10⁻² units.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(8).max(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{METRIC_LABEL}  clips={}  hash={}",
            self.clip_count,
            &self.config_hash[..12]
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:>14}  {:>12}  {:>9}  {:>9}",
            "Method", "FootSkate(e-3)", "Jitter(e-2)", "FID", "KE"
        );
        for r in &self.rows {
            let _ = write!(
                out,
                "{:<width$}  {:>14.3}  {:>12.3}  {:>9.3}  {:>9.4}",
                r.label,
                r.footskate * 1e3,
                r.jitter * 1e2,
                r.fid,
                r.ke
            );
            if !r.failures.is_empty() {
                let _ = write!(out, "  ({} failed)", r.failures.len());
            }
            out.push('\n');
        }
        out
    }
}

fn config_hash(strategies: &[Strategy], spec: &BenchmarkSpec, refinement: &RefinementConfig, clips: usize) -> String {
    let doc = serde_json::json!({
        "strategies": strategies,
        "spec": spec,
        "refinement": refinement,
        "clips": clips,
        "metric": METRIC_LABEL,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

struct ClipResult<T: Real> {
    motion: Motion<T>,
    footskate: f64,
    jitter: f64,
    ke: f64,
}

fn evaluate_clip<T: Real>(
    strategy: &Strategy,
    models: Models<'_, T>,
    blocking: &BlockingSet<T>,
    skeleton: &SkeletonSpec<T>,
    refinement: &RefinementConfig,
    seed: u64,
) -> Result<ClipResult<T>> {
    let out = run_strategy(strategy, models, blocking, skeleton, refinement, seed)?;
    let motion = out.motion;
    Ok(ClipResult {
        footskate: footskate(&motion, skeleton, CONTACT_HEIGHT),
        jitter: jitter(&motion)?,
        ke: keyframe_error(blocking, &motion, KE_RADIUS)?,
        motion,
    })
}

/// Runs every strategy on a blocking set drawn from every clip and scores
/// the outputs. Per-clip failures are recorded in the row and excluded from
/// its averages.
pub fn run_benchmark<T: Real>(
    strategies: &[Strategy],
    models: Models<'_, T>,
    dataset: &[Motion<T>],
    skeleton: &SkeletonSpec<T>,
    spec: &BenchmarkSpec,
    refinement: &RefinementConfig,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptySet);
    }
    if strategies.is_empty() {
        return Err(Error::Strategy("no strategies given".into()));
    }
    for s in strategies {
        s.validate()?;
    }
    refinement.validate()?;
    let inputs = benchmark_inputs(dataset, skeleton, spec)?;
    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let results: Vec<Result<ClipResult<T>>> = inputs
            .par_iter()
            .map(|(blocking, seed)| evaluate_clip(strategy, models, blocking, skeleton, refinement, *seed))
            .collect();
        rows.push(summarize(strategy, results, dataset, skeleton)?);
    }
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        metric_label: METRIC_LABEL.into(),
        spec: spec.clone(),
        refinement: refinement.clone(),
        clip_count: dataset.len(),
        sample_seeds: inputs.iter().map(|(_, s)| *s).collect(),
        config_hash: config_hash(strategies, spec, refinement, dataset.len()),
        rows,
    })
}

fn summarize<T: Real>(
    strategy: &Strategy,
    results: Vec<Result<ClipResult<T>>>,
    dataset: &[Motion<T>],
    skeleton: &SkeletonSpec<T>,
) -> Result<ReportRow> {
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (clip, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(ClipFailure {
                clip,
                error: e.to_string(),
            }),
        }
    }
    let n = ok.len() as f64;
    let mean = |f: &dyn Fn(&ClipResult<T>) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(f).sum::<f64>() / n
        }
    };
    let fid = if ok.is_empty() {
        f64::NAN
    } else {
        let motions: Vec<Motion<T>> = ok.iter().map(|r| r.motion.clone()).collect();
        frechet_distance(&feature_matrix(dataset, skeleton), &feature_matrix(&motions, skeleton))?
    };
    Ok(ReportRow {
        strategy: strategy.clone(),
        label: strategy.label(),
        footskate: mean(&|r| r.footskate),
        jitter: mean(&|r| r.jitter),
        fid,
        ke: mean(&|r| r.ke),
        clips: ok.len(),
        failures,
    })
}

/// FID of detailing as a function of the refinement cadence, one curve per
/// tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub tolerance: f64,
    /// `(N, FID)` pairs in grid order.
    pub points: Vec<(usize, f64)>,
}

impl AblationCurve {
    pub fn fid_at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == n).map(|p| p.1)
    }

    /// Two whitespace-separated columns, `N FID`, one row per grid point.
    pub fn to_text(&self) -> String {
        let mut out = format!("# tolerance {}\n# N FID\n", self.tolerance);
        for (n, fid) in &self.points {
            let _ = writeln!(out, "{n} {fid:.9}");
        }
        out
    }

    pub fn file_name(&self) -> String {
        format!("fid_vs_n_c{}.txt", self.tolerance)
    }
}

/// Runs detailing over the `(N, c)` grid with the ground fix disabled.
pub fn ablate_n<T: Real>(
    models: Models<'_, T>,
    dataset: &[Motion<T>],
    skeleton: &SkeletonSpec<T>,
    spec: &BenchmarkSpec,
    refinement: &RefinementConfig,
    n_values: &[usize],
    c_values: &[f64],
) -> Result<Vec<AblationCurve>> {
    if dataset.is_empty() {
        return Err(Error::EmptySet);
    }
    let inputs = benchmark_inputs(dataset, skeleton, spec)?;
    let gt = feature_matrix(dataset, skeleton);
    let mut base = refinement.clone();
    base.apply_ground_fix = false;
    let mut curves = Vec::with_capacity(c_values.len());
    for &c in c_values {
        let mut points = Vec::with_capacity(n_values.len());
        for &n in n_values {
            let strategy = Strategy::Detailing {
                tolerance: Some(c),
                n: Some(n),
                search_radius: None,
                ground_fix: Some(false),
            };
            strategy.validate()?;
            let motions: Vec<Motion<T>> = inputs
                .par_iter()
                .map(|(blocking, seed)| Ok(run_strategy(&strategy, models, blocking, skeleton, &base, *seed)?.motion))
                .collect::<Result<_>>()?;
            points.push((n, frechet_distance(&gt, &feature_matrix(&motions, skeleton))?));
        }
        curves.push(AblationCurve { tolerance: c, points });
    }
    Ok(curves)
}

/// Writes one curve file per tolerance plus `curves.json` into `dir`.
pub fn write_curves(curves: &[AblationCurve], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for c in curves {
        std::fs::write(dir.join(c.file_name()), c.to_text())?;
    }
    std::fs::write(
        dir.join("curves.json"),
        serde_json::to_string_pretty(curves).expect("curves serialize"),
    )?;
    Ok(())
}
