//! Synthetic dyadic corpus with a planted Markov chain of interaction states.
//!
//! Each state fixes how the two animals move: the resident wanders at a
//! state-specific speed, the intruder tracks a point at a state-specific
//! distance from the resident with bounded approach speed, and its heading is
//! pulled toward the resident by the coupling weight.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnnotationTrack, Arena, Keypoint, PoseFrame, PoseSequence, DEFAULT_BACKGROUND};
use crate::{seeded_rng, Error, Result};

const BODY_LENGTH: f64 = 0.06;
const MARGIN: f64 = 0.08;
/// Heading diffusion, rad / sqrt(s).
const TURN_SD: f64 = 1.5;
const BEARING_SD: f64 = 1.0;
/// Resident walking speed shared by the planted states, so that playback
/// speed is readable without first inferring the state.
const RESIDENT_SPEED: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateKinematics {
    /// Maximum intruder speed toward its target point (arena units / s).
    pub approach_speed: f64,
    /// Weight in [0, 1] pulling the intruder's heading toward the resident.
    pub heading_coupling: f64,
    /// Per-keypoint Gaussian noise (arena units).
    pub jitter: f64,
    /// Resident locomotion speed (arena units / s).
    pub resident_speed: f64,
    /// Preferred resident-intruder distance (arena units).
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub id: String,
    pub n_states: usize,
    pub transition: Vec<Vec<f64>>,
    pub kinematics: Vec<StateKinematics>,
    pub duration_frames: usize,
    pub fps: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Three well-separated states: close investigation, fast following and
    /// keeping apart. Mean bout length is about 1.7 s at 30 fps.
    pub fn planted_three_state(id: impl Into<String>, duration_frames: usize, seed: u64) -> Self {
        let stay = 0.98;
        let leave = (1.0 - stay) / 2.0;
        SyntheticSpec {
            id: id.into(),
            n_states: 3,
            transition: vec![
                vec![stay, leave, leave],
                vec![leave, stay, leave],
                vec![leave, leave, stay],
            ],
            kinematics: vec![
                StateKinematics {
                    approach_speed: 0.3,
                    heading_coupling: 0.95,
                    jitter: 0.002,
                    resident_speed: RESIDENT_SPEED,
                    distance: 0.07,
                },
                StateKinematics {
                    approach_speed: 0.6,
                    heading_coupling: 0.9,
                    jitter: 0.002,
                    resident_speed: RESIDENT_SPEED,
                    distance: 0.14,
                },
                StateKinematics {
                    approach_speed: 0.15,
                    heading_coupling: 0.1,
                    jitter: 0.002,
                    resident_speed: RESIDENT_SPEED,
                    distance: 0.35,
                },
            ],
            duration_frames,
            fps: 30.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_states;
        if m == 0 {
            return Err(Error::Spec("n_states must be >= 1".into()));
        }
        if self.transition.len() != m || self.transition.iter().any(|r| r.len() != m) {
            return Err(Error::Spec(format!("transition matrix must be {m} x {m}")));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Spec(format!(
                    "transition row {i} has invalid entries"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Spec(format!(
                    "transition row {i} sums to {s}, not 1"
                )));
            }
        }
        if self.kinematics.len() != m {
            return Err(Error::Spec(format!(
                "expected {m} kinematics entries, got {}",
                self.kinematics.len()
            )));
        }
        for (i, k) in self.kinematics.iter().enumerate() {
            let vals = [
                k.approach_speed,
                k.heading_coupling,
                k.jitter,
                k.resident_speed,
                k.distance,
            ];
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) || k.heading_coupling > 1.0 {
                return Err(Error::Spec(format!("kinematics of state {i} invalid")));
            }
        }
        if self.duration_frames == 0 {
            return Err(Error::Spec("duration_frames must be >= 1".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Spec("fps must be positive".into()));
        }
        Ok(())
    }
}

fn unit(theta: f64) -> (f64, f64) {
    (theta.cos(), theta.sin())
}

fn body(cx: f64, cy: f64, heading: f64) -> [Keypoint; 7] {
    let (ux, uy) = unit(heading);
    let (nx, ny) = (-uy, ux);
    let at = |along: f64, across: f64| {
        Keypoint::new(
            cx + BODY_LENGTH * (along * ux + across * nx),
            cy + BODY_LENGTH * (along * uy + across * ny),
        )
    };
    [
        at(0.5, 0.0),
        at(0.35, 0.12),
        at(0.35, -0.12),
        at(0.25, 0.0),
        at(-0.2, 0.12),
        at(-0.2, -0.12),
        at(-0.5, 0.0),
    ]
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.len() - 1
}

/// Generates a pose sequence and its planted per-frame state labels. The
/// annotation's name table is `state0..state{M-1}` followed by the background
/// name, which is never used by planted frames.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<(PoseSequence, AnnotationTrack)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, 0);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let dt = 1.0 / spec.fps;
    let lo = MARGIN;
    let hi = 1.0 - MARGIN;

    let mut state = rng.random_range(0..spec.n_states);
    let mut c1 = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
    let mut heading1: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut bearing: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut own_heading2: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let d0 = spec.kinematics[state].distance;
    let mut c2 = (
        (c1.0 + d0 * bearing.cos()).clamp(lo, hi),
        (c1.1 + d0 * bearing.sin()).clamp(lo, hi),
    );

    let mut frames = Vec::with_capacity(spec.duration_frames);
    let mut labels = Vec::with_capacity(spec.duration_frames);
    for t in 0..spec.duration_frames {
        if t > 0 {
            state = sample_row(&spec.transition[state], rng.random::<f64>());
        }
        let k = &spec.kinematics[state];

        heading1 += TURN_SD * dt.sqrt() * std.sample(&mut rng);
        let step = k.resident_speed * dt;
        let (ux, uy) = unit(heading1);
        let mut nx = c1.0 + step * ux;
        let mut ny = c1.1 + step * uy;
        if !(lo..=hi).contains(&nx) {
            heading1 = std::f64::consts::PI - heading1;
            nx = nx.clamp(lo, hi);
        }
        if !(lo..=hi).contains(&ny) {
            heading1 = -heading1;
            ny = ny.clamp(lo, hi);
        }
        c1 = (nx, ny);

        bearing += BEARING_SD * dt.sqrt() * std.sample(&mut rng);
        let target = (
            (c1.0 + k.distance * bearing.cos()).clamp(lo, hi),
            (c1.1 + k.distance * bearing.sin()).clamp(lo, hi),
        );
        let (dx, dy) = (target.0 - c2.0, target.1 - c2.1);
        let dist = dx.hypot(dy);
        let max_step = k.approach_speed * dt;
        if dist > 0.0 {
            let s = dist.min(max_step) / dist;
            c2 = (c2.0 + s * dx, c2.1 + s * dy);
        }

        own_heading2 += TURN_SD * dt.sqrt() * std.sample(&mut rng);
        let (tx, ty) = (c1.0 - c2.0, c1.1 - c2.1);
        let tn = tx.hypot(ty).max(1e-12);
        let (ox, oy) = unit(own_heading2);
        let w = k.heading_coupling;
        let heading2 = (w * ty / tn + (1.0 - w) * oy).atan2(w * tx / tn + (1.0 - w) * ox);

        let mut frame = PoseFrame {
            animals: [body(c1.0, c1.1, heading1), body(c2.0, c2.1, heading2)],
        };
        for kp in frame.animals.iter_mut().flatten() {
            kp.x = (kp.x + k.jitter * std.sample(&mut rng)).clamp(0.0, 1.0);
            kp.y = (kp.y + k.jitter * std.sample(&mut rng)).clamp(0.0, 1.0);
        }
        frames.push(frame);
        labels.push(state);
    }

    let mut seq = PoseSequence::new(spec.id.clone(), spec.fps, frames);
    seq.arena = Some(Arena::UNIT);
    // Unit arena read as a 50 cm box.
    seq.px_per_cm = Some(1.0 / 50.0);

    let mut names: Vec<String> = (0..spec.n_states).map(|i| format!("state{i}")).collect();
    names.push(DEFAULT_BACKGROUND.to_string());
    let background = spec.n_states;
    let track = AnnotationTrack::new(labels, names, background)?;
    Ok((seq, track))
}
