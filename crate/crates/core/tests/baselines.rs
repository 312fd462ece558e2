mod common;

use blockdetail::baselines::{apply_guidance, hard_impute_sample, soft_mask, sparse_mask, DEFAULT_FALLOFF};
use blockdetail::diffusion::NoiseSchedule;
use blockdetail::motion::BlockingSet;
use blockdetail::skeleton::SkeletonSpec;
use blockdetail::synth::{synth_motion, MotionKind};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

use common::{full_keys, gaussian_pair, key};

#[test]
fn guidance_quarter_weight_halves_the_residual() {
    let mut x0 = Array3::<f64>::zeros((4, 1, 3));
    x0[[2, 0, 0]] = 3.0;
    let k = key(2, Array2::from_elem((1, 3), 1.0), vec![true], 0.85);
    apply_guidance(&mut x0, &[k], 0.25);
    assert_eq!(x0[[2, 0, 0]], 3.0 - 0.5 * (3.0 - 1.0));
    assert_eq!(x0[[2, 0, 1]], 0.5);
    assert_eq!(x0[[1, 0, 0]], 0.0);
}

#[test]
fn guidance_leaves_unspecified_joints() {
    let mut x0 = Array3::<f64>::from_elem((3, 2, 3), 4.0);
    let k = key(1, Array2::zeros((2, 3)), vec![true, false], 0.85);
    apply_guidance(&mut x0, &[k], 0.1);
    assert_eq!(x0[[1, 1, 0]], 4.0);
    assert!((x0[[1, 0, 0]] - 3.2).abs() < 1e-15);
}

proptest! {
    #[test]
    fn guidance_is_linear_in_weight(e in -5.0..5.0f64, g in -5.0..5.0f64, w in 0.0..3.0f64) {
        let apply = |w: f64| {
            let mut x0 = Array3::<f64>::from_elem((2, 1, 3), e);
            apply_guidance(&mut x0, &[key(0, Array2::from_elem((1, 3), g), vec![true], 0.5)], w);
            x0[[0, 0, 0]]
        };
        let (a0, a1, aw) = (apply(0.0), apply(1.0), apply(w));
        prop_assert!((aw - (a0 + w * (a1 - a0))).abs() < 1e-12);
    }

    #[test]
    fn soft_mask_dominates_sparse_mask(c in 0.0..1.0f64, seed in 0u64..50) {
        let gt = synth_motion::<f64>(MotionKind::Kick, 40, seed).unwrap();
        let frames = [(seed as usize) % 40, 17, 39];
        let mut frames = frames.to_vec();
        frames.sort_unstable();
        frames.dedup();
        let blocking = full_keys(gt.frames(), &frames, 0.85);
        let sparse = sparse_mask(&blocking, c).unwrap();
        let soft = soft_mask(&blocking, c, DEFAULT_FALLOFF).unwrap();
        for (s, h) in sparse.values().iter().zip(soft.values()) {
            prop_assert!(h >= s);
            prop_assert!((0.0..=1.0).contains(h));
        }
    }
}

#[test]
fn hard_impute_hits_keys_exactly() {
    let schedule = NoiseSchedule::<f64>::cosine(50).unwrap();
    let skel = SkeletonSpec::<f64>::desk();
    let (_, u) = gaussian_pair(&skel, 40, &schedule);
    let gt = synth_motion::<f64>(MotionKind::Jump, 40, 3).unwrap();
    let mut specified = vec![false; 16];
    for &j in skel.important_joints() {
        specified[j] = true;
    }
    let rest = skel.rest();
    let neutral = |f: usize| {
        Array2::from_shape_fn((16, 3), |(j, d)| {
            if specified[j] {
                gt.frames()[[f, j, d]]
            } else {
                rest[[j, d]]
            }
        })
    };
    let blocking = BlockingSet::new(
        [5, 22, 35]
            .iter()
            .map(|&f| key(f, neutral(f), specified.clone(), 0.85))
            .collect(),
        40,
    )
    .unwrap();
    let out = hard_impute_sample(&u, &blocking, 4).unwrap();
    for k in blocking.poses() {
        for (j, &s) in k.specified.iter().enumerate() {
            if s {
                for d in 0..3 {
                    assert_eq!(out.frames()[[k.frame, j, d]], k.pose.features()[[j, d]]);
                }
            }
        }
    }
}
