//! Procedural motion clips used as training data and benchmark ground truth.
//!
//! Every trajectory is built from C¹ pieces (smoothstep ramps and `sin²`
//! windows). Feet are placed in world space first: a planted foot sits at
//! height 0 and does not move horizontally, and a swinging foot only moves
//! horizontally once it is more than 5 cm above the ground. Knees come from
//! two-bone IK against the hips, arms from a small forward-kinematic chain.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motion::{Motion, DEFAULT_FPS, DIMS};
use crate::num::Real;
use crate::skeleton::desk::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionKind {
    Walk,
    Kick,
    Jump,
    Idle,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [MotionKind::Walk, MotionKind::Kick, MotionKind::Jump, MotionKind::Idle];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Walk => "walk",
            MotionKind::Kick => "kick",
            MotionKind::Jump => "jump",
            MotionKind::Idle => "idle",
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk" => Ok(MotionKind::Walk),
            "kick" => Ok(MotionKind::Kick),
            "jump" => Ok(MotionKind::Jump),
            "idle" => Ok(MotionKind::Idle),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

const THIGH: f64 = 0.44;
const SHIN: f64 = 0.44;
const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.25;
const HIP_OFFSET: [f64; 3] = [0.09, -0.04, 0.0];
const SHOULDER_OFFSET: [f64; 3] = [0.17, 0.48, 0.0];

/// Generates one clip on the desk skeleton at 20 fps.
pub fn synth_motion<T: Real>(kind: MotionKind, frames: usize, seed: u64) -> Result<Motion<T>> {
    if frames < 2 {
        return Err(Error::TooFewFrames(frames));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind_salt(kind));
    let gen: Box<dyn Fn(f64) -> Body> = match kind {
        MotionKind::Walk => Box::new(walk(&mut rng)),
        MotionKind::Kick => Box::new(kick(&mut rng)),
        MotionKind::Jump => Box::new(jump(&mut rng)),
        MotionKind::Idle => Box::new(idle(&mut rng)),
    };
    let mut out = Array3::<T>::zeros((frames, JOINTS, DIMS));
    for f in 0..frames {
        let body = gen(f as f64 / DEFAULT_FPS);
        let world = body.solve();
        for d in 0..DIMS {
            out[[f, ROOT, d]] = T::lit(world[ROOT][d]);
        }
        for j in 1..JOINTS {
            for d in 0..DIMS {
                out[[f, j, d]] = T::lit(world[j][d] - world[ROOT][d]);
            }
        }
    }
    Motion::new(out, DEFAULT_FPS)
}

/// Draws a mixed dataset, cycling through kinds in order.
pub fn synth_dataset<T: Real>(count: usize, frames: usize, seed: u64) -> Result<Vec<Motion<T>>> {
    (0..count)
        .map(|i| {
            let kind = MotionKind::ALL[i % MotionKind::ALL.len()];
            synth_motion(kind, frames, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
        })
        .collect()
}

fn kind_salt(kind: MotionKind) -> u64 {
    match kind {
        MotionKind::Walk => 0x5741_4c4b,
        MotionKind::Kick => 0x4b49_434b,
        MotionKind::Jump => 0x4a55_4d50,
        MotionKind::Idle => 0x4944_4c45,
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// `sin²` bump over `[start, start + dur]`, zero outside.
fn window(tau: f64, start: f64, dur: f64) -> f64 {
    let u = (tau - start) / dur;
    if (0.0..=1.0).contains(&u) {
        (PI * u).sin().powi(2)
    } else {
        0.0
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Arm pose: forward swing `swing` (0 hangs down), abduction `raise`, elbow
/// flexion `flex`, all in radians.
#[derive(Clone, Copy, Default)]
struct Arm {
    swing: f64,
    raise: f64,
    flex: f64,
}

/// Kinematic description of one frame, resolved to joint positions by
/// [`Body::solve`].
struct Body {
    root: [f64; 3],
    /// Forward torso lean as a horizontal offset per metre of height.
    lean: f64,
    feet: [[f64; 3]; 2],
    arms: [Arm; 2],
}

impl Body {
    fn solve(&self) -> [[f64; 3]; JOINTS] {
        let mut w = [[0.0; 3]; JOINTS];
        let root = self.root;
        let torso = |h: f64| add(root, [0.0, h, self.lean * h]);
        w[ROOT] = root;
        w[SPINE] = torso(0.22);
        w[NECK] = torso(0.52);
        w[HEAD] = add(w[NECK], [0.0, 0.16, self.lean * 0.16 + 0.01]);

        for (side, (sh, el, wr)) in [
            (1.0, (L_SHOULDER, L_ELBOW, L_WRIST)),
            (-1.0, (R_SHOULDER, R_ELBOW, R_WRIST)),
        ] {
            let arm = if side > 0.0 { self.arms[0] } else { self.arms[1] };
            let shoulder = add(
                root,
                [
                    side * SHOULDER_OFFSET[0],
                    SHOULDER_OFFSET[1],
                    self.lean * SHOULDER_OFFSET[1],
                ],
            );
            let dir = |swing: f64| {
                [
                    side * arm.raise.sin(),
                    -arm.raise.cos() * swing.cos(),
                    arm.raise.cos() * swing.sin(),
                ]
            };
            let elbow = add(shoulder, scale(dir(arm.swing), UPPER_ARM));
            let wrist = add(elbow, scale(dir(arm.swing + arm.flex), FOREARM));
            w[sh] = shoulder;
            w[el] = elbow;
            w[wr] = wrist;
        }

        for (side, (hip_j, knee_j, ankle_j), foot) in [
            (1.0, (L_HIP, L_KNEE, L_ANKLE), self.feet[0]),
            (-1.0, (R_HIP, R_KNEE, R_ANKLE), self.feet[1]),
        ] {
            let hip = add(root, [side * HIP_OFFSET[0], HIP_OFFSET[1], HIP_OFFSET[2]]);
            w[hip_j] = hip;
            w[knee_j] = knee_ik(hip, foot);
            w[ankle_j] = foot;
        }
        w
    }
}

/// Two-bone IK with the knee bending toward `+z`. Out-of-reach targets leave
/// the knee on the straight line toward the ankle.
fn knee_ik(hip: [f64; 3], ankle: [f64; 3]) -> [f64; 3] {
    let d = sub(ankle, hip);
    let dist = norm(d).max(1e-9);
    let axis = scale(d, 1.0 / dist);
    let reach = (THIGH + SHIN) - 1e-9;
    let clamped = dist.clamp((THIGH - SHIN).abs() + 1e-9, reach);
    let along = (THIGH * THIGH - SHIN * SHIN + clamped * clamped) / (2.0 * clamped);
    let height = (THIGH * THIGH - along * along).max(0.0).sqrt();
    let forward = [0.0, 0.0, 1.0];
    let ortho = sub(forward, scale(axis, dot(forward, axis)));
    let on = norm(ortho);
    let bend = if on > 1e-9 { scale(ortho, 1.0 / on) } else { forward };
    add(hip, add(scale(axis, along), scale(bend, height)))
}

fn walk(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> Body {
    let speed = rng.random_range(0.65..0.95);
    let period = rng.random_range(0.95..1.1);
    let phase0: f64 = rng.random_range(0.0..1.0);
    let duty = 0.6;
    let lift = rng.random_range(0.11..0.15);
    let arm_amp = rng.random_range(0.25..0.5);
    let bob = rng.random_range(0.015..0.025);
    let sway = rng.random_range(0.015..0.03);
    let base = rng.random_range(0.855..0.875);
    let lean = rng.random_range(0.03..0.08);
    let width = rng.random_range(0.08..0.11);

    move |tau: f64| {
        let phase = tau / period + phase0;
        let stride = speed * period;
        let foot = |offset: f64, side: f64| {
            let pf = phase + offset;
            let n = pf.floor();
            let psi = pf - n;
            let plant = |k: f64| stride * (k + duty / 2.0 - offset - phase0);
            let (z, y) = if psi < duty {
                (plant(n), 0.0)
            } else {
                let u = (psi - duty) / (1.0 - duty);
                let z = plant(n) + (plant(n + 1.0) - plant(n)) * smoothstep((u - 0.25) / 0.5);
                (z, lift * (PI * u).sin().powi(2))
            };
            [side * width, y, z]
        };
        let arm = |offset: f64| {
            let s = (2.0 * PI * (phase + offset)).sin();
            Arm {
                swing: arm_amp * s,
                raise: 0.06,
                flex: 0.3 + 0.15 * (1.0 + s),
            }
        };
        Body {
            root: [
                sway * (2.0 * PI * phase).sin(),
                base + bob * (4.0 * PI * phase).cos(),
                speed * tau,
            ],
            lean,
            feet: [foot(0.0, 1.0), foot(0.5, -1.0)],
            arms: [arm(0.5), arm(0.0)],
        }
    }
}

fn idle(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> Body {
    let breath_amp = rng.random_range(0.004..0.006);
    let breath_freq = rng.random_range(0.2..0.3);
    let sway_amp = rng.random_range(0.002..0.004);
    let p0: f64 = rng.random_range(0.0..2.0 * PI);
    let p1: f64 = rng.random_range(0.0..2.0 * PI);
    let width = rng.random_range(0.09..0.12);
    let base = rng.random_range(0.895..0.905);
    let arm_amp = rng.random_range(0.01..0.02);
    let lean = rng.random_range(0.0..0.04);

    move |tau: f64| {
        let breath = (2.0 * PI * breath_freq * tau + p0).sin();
        let sway = (2.0 * PI * 0.15 * tau + p1).sin();
        let arm = |s: f64| Arm {
            swing: arm_amp * s,
            raise: 0.06,
            flex: 0.2,
        };
        Body {
            root: [sway_amp * sway, base + breath_amp * breath, 0.0],
            lean,
            feet: [[width, 0.0, 0.0], [-width, 0.0, 0.0]],
            arms: [arm(breath), arm(-breath)],
        }
    }
}

fn jump(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> Body {
    let takeoff = rng.random_range(0.9..1.3);
    let flight = rng.random_range(0.55..0.75);
    let height = rng.random_range(0.22..0.40);
    let advance = rng.random_range(0.0..0.4);
    let crouch = rng.random_range(0.10..0.18);
    let width = rng.random_range(0.09..0.12);
    let base = rng.random_range(0.895..0.905);

    move |tau: f64| {
        let dip = crouch * window(tau, takeoff - 0.45, 0.55) + 0.8 * crouch * window(tau, takeoff + flight - 0.1, 0.55);
        let air = height * window(tau, takeoff, flight);
        let u = ((tau - takeoff) / flight).clamp(0.0, 1.0);
        let foot_z = advance * smoothstep((u - 0.25) / 0.5);
        let arm = Arm {
            swing: -0.5 * dip / crouch + 2.2 * air / height,
            raise: 0.1,
            flex: 0.35,
        };
        Body {
            root: [0.0, base - dip + 1.15 * air, advance * smoothstep(u)],
            lean: 0.05 + 0.6 * dip,
            feet: [[width, air, foot_z], [-width, air, foot_z]],
            arms: [arm, arm],
        }
    }
}

fn kick(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> Body {
    let start = rng.random_range(0.8..1.6);
    let dur = rng.random_range(0.6..0.9);
    let height = rng.random_range(0.30..0.55);
    let reach = rng.random_range(0.25..0.45);
    let left: bool = rng.random_bool(0.5);
    let width = rng.random_range(0.09..0.12);
    let base = rng.random_range(0.895..0.905);

    move |tau: f64| {
        let u = ((tau - start) / dur).clamp(0.0, 1.0);
        let burst = window(tau, start, dur);
        let brace = window(tau, start - 0.2, dur + 0.4);
        let kick_foot = [
            0.0,
            height * burst,
            reach * (PI * ((u - 0.25) / 0.5).clamp(0.0, 1.0)).sin().powi(2),
        ];
        let (side, kick_idx) = if left { (1.0, 0) } else { (-1.0, 1) };
        let mut feet = [[width, 0.0, 0.0], [-width, 0.0, 0.0]];
        feet[kick_idx] = add(feet[kick_idx], kick_foot);
        let arm = Arm {
            swing: 0.3 * brace,
            raise: 0.06 + 0.6 * brace,
            flex: 0.3,
        };
        Body {
            root: [-side * 0.03 * brace, base - 0.03 * brace, -0.04 * brace],
            lean: 0.05 - 0.12 * brace,
            feet,
            arms: [arm, arm],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        for kind in MotionKind::ALL {
            let a = synth_motion::<f64>(kind, 60, 7).unwrap();
            let b = synth_motion::<f64>(kind, 60, 7).unwrap();
            assert_eq!(a, b);
            let c = synth_motion::<f64>(kind, 60, 8).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn idle_is_near_static() {
        for seed in 0..20 {
            let m = synth_motion::<f64>(MotionKind::Idle, 60, seed).unwrap();
            let fr = m.frames();
            for f in 1..60 {
                for j in 0..JOINTS {
                    let mut d2 = 0.0;
                    for d in 0..3 {
                        d2 += (fr[[f, j, d]] - fr[[f - 1, j, d]]).powi(2);
                    }
                    assert!(d2.sqrt() * DEFAULT_FPS < 0.05, "joint {j} frame {f}");
                }
            }
        }
    }

    #[test]
    fn ankles_stay_above_ground() {
        for kind in MotionKind::ALL {
            for seed in 0..25 {
                let w = synth_motion::<f64>(kind, 60, seed).unwrap().world_positions();
                for f in 0..60 {
                    for j in [L_ANKLE, R_ANKLE] {
                        assert!(w[[f, j, 1]] >= -1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_kind_and_short_clip() {
        assert!(matches!("dance".parse::<MotionKind>(), Err(Error::UnknownKind(_))));
        assert!(matches!(
            synth_motion::<f64>(MotionKind::Walk, 1, 0),
            Err(Error::TooFewFrames(1))
        ));
    }

    #[test]
    fn walk_travels_forward() {
        let w = synth_motion::<f64>(MotionKind::Walk, 60, 3).unwrap();
        let z0 = w.frames()[[0, ROOT, 2]];
        let z1 = w.frames()[[59, ROOT, 2]];
        assert!(z1 - z0 > 1.5);
    }
}
