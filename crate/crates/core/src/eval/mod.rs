//! Benchmark synthesis, metrics, and reports.

pub mod benchmark;
pub mod blocking;
pub mod metrics;

pub use benchmark::{
    ablate_n, benchmark_inputs, run_benchmark, write_curves, AblationCurve, ClipFailure, EvalReport, ReportRow,
};
pub use blocking::{draw_blocking, make_blocking, BenchmarkSpec, DrawnBlocking};
pub use metrics::{
    fid, footskate, frechet_distance, jitter, keyframe_error, MotionFeatures, CONTACT_HEIGHT, METRIC_LABEL,
};
