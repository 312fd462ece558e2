#![allow(dead_code)]

use std::path::Path;

use blockdetail::eval::{make_blocking, BenchmarkSpec};
use blockdetail::io::blocking_to_json;
use blockdetail::motion::BlockingSet;
use blockdetail::skeleton::SkeletonSpec;
use blockdetail::synth::{synth_motion, MotionKind};

pub fn blocking(seed: u64) -> BlockingSet<f64> {
    let skel = SkeletonSpec::desk();
    let gt = synth_motion(MotionKind::Walk, 60, seed).unwrap();
    make_blocking(&gt, &skel, &BenchmarkSpec::default(), seed).unwrap()
}

pub fn write_blocking(path: &Path, b: &BlockingSet<f64>) {
    std::fs::write(path, blocking_to_json(b)).unwrap();
}

pub fn write_config(path: &Path, steps: usize, n: usize) {
    std::fs::write(
        path,
        format!("format_version = 1\n[schedule]\nsteps = {steps}\n[refinement]\nn = {n}\n"),
    )
    .unwrap();
}
