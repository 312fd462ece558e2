//! Subcommand dispatch.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use blockdetail::baselines::Strategy;
use blockdetail::diffusion::checkpoint::save_checkpoint;
use blockdetail::diffusion::net::ModelMode;
use blockdetail::diffusion::train::train_denoiser;
use blockdetail::eval::metrics::fid;
use blockdetail::eval::{ablate_n, footskate, jitter, keyframe_error, run_benchmark, write_curves, CONTACT_HEIGHT};
use blockdetail::io::{load_blocking, load_motion, save_motion};
use blockdetail::motion::Motion;
use blockdetail::skeleton::SkeletonSpec;
use blockdetail::synth::{synth_dataset, synth_motion, MotionKind};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::generate::{parse_strategy, run_generation, GenerationJob};
use crate::models::{resolve, CheckpointCache, LoadedModels};
use crate::service::{serve, ServeOptions};

#[derive(Debug, Parser)]
#[command(name = "blockdetail", version, about = "Detail blocking poses into full motions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic motion clips as one file per clip.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = blockdetail::motion::DEFAULT_FRAMES)]
        frames: usize,
        /// Restrict to one motion kind (walk, run, idle, ...).
        #[arg(long)]
        kind: Option<MotionKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a U- or R-mode denoiser on a clip directory.
    Train {
        #[arg(long)]
        mode: ModelMode,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a motion from a blocking file.
    Generate {
        blocking: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trace path; defaults to the output path with `.trace.json`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// `gaussian` or a checkpoint path; pass one R and one U checkpoint.
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long, default_value = "detailing")]
        strategy: String,
        #[command(flatten)]
        common: Common,
    },
    /// Score strategies on a benchmark and write an EvalReport.
    Bench {
        /// Test clips; synthesized from the benchmark config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "model")]
        models: Vec<String>,
        /// Comma-separated, e.g. `detailing=0.85,hard-impute`.
        #[arg(long, default_value = "detailing=0.85,hard-impute")]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// FID against N for detailing with the ground fix off.
    AblateN {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "10,25,50,100,250,500")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.85")]
        c: Vec<f64>,
        /// Output directory for the curve files.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Metrics of motion files, as JSON on stdout.
    Metrics {
        #[arg(required = true)]
        motions: Vec<PathBuf>,
        /// Blocking file for keyframe error.
        #[arg(long)]
        blocking: Option<PathBuf>,
        /// Clip directory; adds the FID of the given motions against it.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Start the job service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = crate::service::DEFAULT_WORKERS)]
        workers: usize,
        /// Persistence root; overrides BLOCKDETAIL_DATA_DIR.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `argv` and runs it. Returns the process exit code: 0 on success,
/// 2 on usage errors and 1 otherwise, with the error as one JSON line on
/// stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            1
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    let skeleton = SkeletonSpec::<f64>::desk();
    match command {
        Command::SynthData {
            out,
            count,
            frames,
            kind,
            common,
        } => {
            let seed = common.seed.unwrap_or(0);
            let clips = match kind {
                Some(kind) => (0..count)
                    .map(|i| synth_motion(kind, frames, seed.wrapping_add(i as u64)))
                    .collect::<blockdetail::Result<Vec<_>>>()?,
                None => synth_dataset(count, frames, seed)?,
            };
            write_dataset(&clips, &skeleton, &out)?;
            println!("{}", json!({ "clips": clips.len(), "out": out }));
        }
        Command::Train {
            mode,
            data,
            out,
            steps,
            common,
        } => {
            let config = RunConfig::load_or_default(common.config.as_deref())?;
            let mut training = config.training.clone();
            if let Some(seed) = common.seed {
                training.seed = seed;
            }
            if let Some(steps) = steps {
                training.steps = steps;
            }
            let clips = load_dataset(&data, &skeleton)?;
            let net = train_denoiser(&clips, &skeleton, &config.noise_schedule()?, mode, &training)?;
            let meta = serde_json::to_value(&training).expect("config serializes");
            save_checkpoint(&net, Some(meta), &out)?;
            println!(
                "{}",
                json!({ "mode": mode.to_string(), "out": out, "loss": net.training_loss(), "parameters": net.parameter_count() })
            );
        }
        Command::Generate {
            blocking,
            out,
            trace,
            models,
            strategy,
            common,
        } => {
            let config = RunConfig::load_or_default(common.config.as_deref())?;
            let keys = load_blocking(&blocking, &skeleton)?;
            let job = GenerationJob {
                strategy: parse_strategy(Some(&serde_json::Value::String(strategy)))?,
                refinement: config.refinement.clone(),
                seed: common.seed.unwrap_or(0),
                blocking: keys,
            };
            let loaded = cli_models(&models, &skeleton, job.blocking.timeline_length(), &config)?;
            let output = run_generation(&job, &loaded, &skeleton, &mut |_| Ok(()))?;
            write_file(&out, output.motion_json.as_bytes())?;
            if let Some(t) = output.trace {
                let path = trace.unwrap_or_else(|| out.with_extension("trace.json"));
                write_file(&path, t.to_json().as_bytes())?;
            }
        }
        Command::Bench {
            data,
            models,
            strategy,
            out,
            common,
        } => {
            let config = RunConfig::load_or_default(common.config.as_deref())?;
            let mut spec = config.benchmark.clone();
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let strategies = Strategy::parse_list(&strategy)?;
            let clips = test_clips(data.as_deref(), &skeleton, &config)?;
            let loaded = cli_models(&models, &skeleton, spec.clip_length, &config)?;
            let report = run_benchmark(
                &strategies,
                loaded.models(),
                &clips,
                &skeleton,
                &spec,
                &config.refinement,
            )?;
            write_file(&out, report.to_json().as_bytes())?;
            print!("{}", report.to_table());
        }
        Command::AblateN {
            data,
            models,
            n,
            c,
            out,
            common,
        } => {
            let config = RunConfig::load_or_default(common.config.as_deref())?;
            let mut spec = config.benchmark.clone();
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let clips = test_clips(data.as_deref(), &skeleton, &config)?;
            let loaded = cli_models(&models, &skeleton, spec.clip_length, &config)?;
            let curves = ablate_n(loaded.models(), &clips, &skeleton, &spec, &config.refinement, &n, &c)?;
            write_curves(&curves, &out)?;
            for curve in &curves {
                print!("{}", curve.to_text());
            }
        }
        Command::Metrics {
            motions,
            blocking,
            reference,
            common: _,
        } => {
            let keys = blocking.map(|p| load_blocking(&p, &skeleton)).transpose()?;
            let mut loaded = Vec::with_capacity(motions.len());
            let mut rows = Vec::with_capacity(motions.len());
            for path in &motions {
                let m: Motion<f64> = load_motion(path, &skeleton)?;
                let ke = keys
                    .as_ref()
                    .map(|k| keyframe_error(k, &m, blockdetail::eval::benchmark::KE_RADIUS))
                    .transpose()?;
                rows.push(json!({
                    "file": path,
                    "footskate": footskate(&m, &skeleton, CONTACT_HEIGHT),
                    "jitter": jitter(&m)?,
                    "ke": ke,
                }));
                loaded.push(m);
            }
            let fid = reference
                .map(|dir| -> Result<f64, CliError> { Ok(fid(&load_dataset(&dir, &skeleton)?, &loaded, &skeleton)?) })
                .transpose()?;
            println!(
                "{}",
                json!({ "metric": blockdetail::eval::METRIC_LABEL, "motions": rows, "fid": fid })
            );
        }
        Command::Serve {
            addr,
            workers,
            data_dir,
            common,
        } => {
            let config = RunConfig::load_or_default(common.config.as_deref())?;
            let data_dir = data_dir
                .or_else(|| std::env::var_os("BLOCKDETAIL_DATA_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("blockdetail-data"));
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::new(crate::error::ErrorKind::Internal, e.to_string()))?;
            runtime.block_on(serve(ServeOptions {
                addr,
                workers,
                data_dir,
                config,
            }))?;
        }
    }
    Ok(())
}

fn cli_models(
    ids: &[String],
    skeleton: &SkeletonSpec<f64>,
    frames: usize,
    config: &RunConfig,
) -> Result<LoadedModels, CliError> {
    let cache = CheckpointCache::default();
    resolve(
        ids,
        |id| Ok(PathBuf::from(id)),
        &cache,
        skeleton,
        frames,
        &config.noise_schedule()?,
    )
}

fn test_clips(
    data: Option<&Path>,
    skeleton: &SkeletonSpec<f64>,
    config: &RunConfig,
) -> Result<Vec<Motion<f64>>, CliError> {
    match data {
        Some(dir) => load_dataset(dir, skeleton),
        None => {
            let spec = &config.benchmark;
            Ok(synth_dataset(spec.count, spec.clip_length, spec.seed)?)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes `clip_0000.json`, `clip_0001.json`, ... into `dir`.
pub fn write_dataset(clips: &[Motion<f64>], skeleton: &SkeletonSpec<f64>, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (i, clip) in clips.iter().enumerate() {
        save_motion(clip, skeleton, dir.join(format!("clip_{i:04}.json")))?;
    }
    Ok(())
}

/// Loads every `*.json` motion in `dir`, in file name order.
pub fn load_dataset(dir: &Path, skeleton: &SkeletonSpec<f64>) -> Result<Vec<Motion<f64>>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".trace.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::validation(format!("{} holds no motion files", dir.display())));
    }
    paths.iter().map(|p| Ok(load_motion(p, skeleton)?)).collect()
}
