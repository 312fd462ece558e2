//! Generation requests shared by `blockdetail generate` and the service.

use blockdetail::baselines::{run_strategy_with_progress, Strategy};
use blockdetail::detailing::{DetailProgress, RefinementConfig, RefinementTrace};
use blockdetail::io::{blocking_from_value, motion_to_json};
use blockdetail::motion::BlockingSet;
use blockdetail::skeleton::SkeletonSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;
use crate::models::LoadedModels;

/// Request body of `POST /api/jobs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRequest {
    /// Blocking file payload.
    pub blocking: Value,
    /// Strategy object (`{"name": "detailing", "tolerance": 0.85}`) or the
    /// CLI form (`"detailing=0.85"`). Defaults to detailing.
    #[serde(default)]
    pub strategy: Option<Value>,
    /// Fields overriding the server's refinement config.
    #[serde(default)]
    pub refinement: Option<Value>,
    #[serde(default)]
    pub seed: u64,
    /// Model names; empty selects the analytic backend.
    #[serde(default)]
    pub models: Vec<String>,
}

/// A request after validation.
#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub blocking: BlockingSet<f64>,
    pub strategy: Strategy,
    pub refinement: RefinementConfig,
    pub seed: u64,
}

pub struct GenerationOutput {
    pub motion_json: String,
    pub trace: Option<RefinementTrace>,
}

pub fn parse_request(body: &[u8]) -> Result<GenerationRequest, CliError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::field("body", inner.to_string())
        } else {
            CliError::field(path, inner.to_string())
        }
    })
}

pub fn parse_strategy(value: Option<&Value>) -> Result<Strategy, CliError> {
    let strategy = match value {
        None | Some(Value::Null) => Strategy::detailing(None),
        Some(Value::String(s)) => s
            .parse()
            .map_err(|e: blockdetail::Error| CliError::field("strategy", e.to_string()))?,
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::field("strategy", e.to_string()))?,
    };
    strategy
        .validate()
        .map_err(|e| CliError::field("strategy", e.to_string()))?;
    Ok(strategy)
}

/// Overlays the fields of `overrides` on `base`.
pub fn apply_overrides(base: &RefinementConfig, overrides: Option<&Value>) -> Result<RefinementConfig, CliError> {
    let Some(overrides) = overrides.filter(|v| !v.is_null()) else {
        return Ok(base.clone());
    };
    let Value::Object(fields) = overrides else {
        return Err(CliError::field("refinement", "expected an object"));
    };
    let mut merged = serde_json::to_value(base).expect("config serializes");
    for (k, v) in fields {
        merged[k] = v.clone();
    }
    let config: RefinementConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let path = format!("refinement.{}", e.path());
        CliError::field(path, e.into_inner().to_string())
    })?;
    config
        .validate()
        .map_err(|e| CliError::field("refinement", e.to_string()))?;
    Ok(config)
}

/// Field-level checks on the blocking payload before the set invariants, so
/// errors name the offending pose.
fn precheck_blocking(value: &Value, joints: usize) -> Result<(), CliError> {
    let Some(poses) = value.get("poses").and_then(Value::as_array) else {
        return Err(CliError::field("blocking.poses", "missing or not an array"));
    };
    for (i, pose) in poses.iter().enumerate() {
        let at = |field: &str| format!("blocking.poses[{i}].{field}");
        if !pose.get("frame").is_some_and(Value::is_u64) {
            return Err(CliError::field(at("frame"), "expected a non-negative integer"));
        }
        match pose.get("specified").and_then(Value::as_array) {
            Some(s) if s.len() == joints && s.iter().all(Value::is_boolean) => {}
            _ => return Err(CliError::field(at("specified"), format!("expected {joints} booleans"))),
        }
        if let Some(c) = pose.get("tolerance") {
            let Some(c) = c.as_array().filter(|c| c.len() == joints) else {
                return Err(CliError::field(at("tolerance"), format!("expected {joints} values")));
            };
            for (j, v) in c.iter().enumerate() {
                if !v.as_f64().is_some_and(|x| (0.0..=1.0).contains(&x)) {
                    return Err(CliError::field(
                        format!("{}[{j}]", at("tolerance")),
                        "must lie in [0, 1]",
                    ));
                }
            }
        }
        match pose.get("features").and_then(Value::as_array) {
            Some(rows) if rows.len() == joints => {}
            _ => {
                return Err(CliError::field(
                    at("features"),
                    format!("expected {joints} rows of 3 coordinates"),
                ))
            }
        }
    }
    Ok(())
}

pub fn parse_blocking(value: Value, skeleton: &SkeletonSpec<f64>) -> Result<BlockingSet<f64>, CliError> {
    precheck_blocking(&value, skeleton.num_joints())?;
    blocking_from_value(value, skeleton).map_err(|e| CliError::field("blocking", e.to_string()))
}

impl GenerationRequest {
    pub fn validate(&self, skeleton: &SkeletonSpec<f64>, base: &RefinementConfig) -> Result<GenerationJob, CliError> {
        Ok(GenerationJob {
            blocking: parse_blocking(self.blocking.clone(), skeleton)?,
            strategy: parse_strategy(self.strategy.as_ref())?,
            refinement: apply_overrides(base, self.refinement.as_ref())?,
            seed: self.seed,
        })
    }
}

/// Runs one job. The serialized motion is what both the CLI and the service
/// write out, so equal inputs give byte-identical files.
pub fn run_generation(
    job: &GenerationJob,
    models: &LoadedModels,
    skeleton: &SkeletonSpec<f64>,
    observer: &mut dyn FnMut(DetailProgress<'_>) -> blockdetail::Result<()>,
) -> Result<GenerationOutput, CliError> {
    let out = run_strategy_with_progress(
        &job.strategy,
        models.models(),
        &job.blocking,
        skeleton,
        &job.refinement,
        job.seed,
        observer,
    )?;
    Ok(GenerationOutput {
        motion_json: motion_to_json(&out.motion, skeleton)?,
        trace: out.trace,
    })
}
