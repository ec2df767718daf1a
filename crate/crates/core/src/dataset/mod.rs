//! Pose data: keypoint layout, sequences, annotations, windowing and a
//! synthetic dyadic generator with planted behavioral states.

mod io;
mod synth;
mod window;

pub use io::{
    load_annotation_csv, load_pose_csv, load_sequence, meta_path, read_annotation_labels,
    read_meta, write_annotation_csv, write_meta, write_pose_csv, ColumnSchema, SequenceMeta,
};
pub use synth::{synth_generate, StateKinematics, SyntheticSpec};
pub use window::{make_windows, window_at, Window, WindowingConfig};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const N_ANIMALS: usize = 2;
pub const N_KEYPOINTS: usize = 7;
/// Flattened per-frame feature width: animals x keypoints x (x, y).
pub const INPUT_DIM: usize = N_ANIMALS * N_KEYPOINTS * 2;

pub const ANIMALS: [&str; N_ANIMALS] = ["resident", "intruder"];
pub const BODY_PARTS: [&str; N_KEYPOINTS] = [
    "nose",
    "left_ear",
    "right_ear",
    "neck",
    "left_hip",
    "right_hip",
    "tail_base",
];

pub const NOSE: usize = 0;
pub const NECK: usize = 3;
pub const LEFT_HIP: usize = 4;
pub const RIGHT_HIP: usize = 5;

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_BACKGROUND: &str = "other";

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: Option<f64>,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Keypoint {
            x,
            y,
            confidence: None,
        }
    }
}

/// One video frame: animal 0 is the resident/experimental animal, animal 1
/// the intruder/stimulus. Keypoints follow [`BODY_PARTS`].
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PoseFrame {
    pub animals: [[Keypoint; N_KEYPOINTS]; N_ANIMALS],
}

impl PoseFrame {
    /// Writes the frame as `INPUT_DIM` values ordered animal, keypoint, (x, y).
    pub fn write_features(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), INPUT_DIM);
        let mut i = 0;
        for animal in &self.animals {
            for kp in animal {
                out[i] = kp.x;
                out[i + 1] = kp.y;
                i += 2;
            }
        }
    }

    pub fn features(&self) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        self.write_features(&mut out);
        out
    }

    /// Mean of neck and both hips; the 7-part layout has no body-center point.
    pub fn body_center(&self, animal: usize) -> (f64, f64) {
        let a = &self.animals[animal];
        let x = (a[NECK].x + a[LEFT_HIP].x + a[RIGHT_HIP].x) / 3.0;
        let y = (a[NECK].y + a[LEFT_HIP].y + a[RIGHT_HIP].y) / 3.0;
        (x, y)
    }

    pub fn is_finite(&self) -> bool {
        self.animals
            .iter()
            .flatten()
            .all(|k| k.x.is_finite() && k.y.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Arena {
    pub const UNIT: Arena = Arena {
        min_x: 0.0,
        min_y: 0.0,
        max_x: 1.0,
        max_y: 1.0,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub id: String,
    pub fps: f64,
    pub frames: Vec<PoseFrame>,
    pub arena: Option<Arena>,
    pub px_per_cm: Option<f64>,
    /// Optional experimental group (e.g. intruder sex) used by group comparisons.
    pub group: Option<String>,
    /// Number of coordinate values filled by carry-forward at load time.
    pub filled_values: usize,
}

impl PoseSequence {
    pub fn new(id: impl Into<String>, fps: f64, frames: Vec<PoseFrame>) -> Self {
        PoseSequence {
            id: id.into(),
            fps,
            frames,
            arena: None,
            px_per_cm: None,
            group: None,
            filled_values: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Data(format!(
                "sequence {}: fps must be positive, got {}",
                self.id, self.fps
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::Data(format!("sequence {} is empty", self.id)));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if !frame.is_finite() {
                return Err(Error::Data(format!(
                    "sequence {}: non-finite coordinate at frame {t}",
                    self.id
                )));
            }
            for kp in frame.animals.iter().flatten() {
                if let Some(c) = kp.confidence {
                    if !(0.0..=1.0).contains(&c) {
                        return Err(Error::Data(format!(
                            "sequence {}: confidence {c} outside [0,1] at frame {t}",
                            self.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Bounding box over every keypoint of every frame.
    pub fn extent(&self) -> Arena {
        let mut a = Arena {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for kp in self.frames.iter().flat_map(|f| f.animals.iter().flatten()) {
            a.min_x = a.min_x.min(kp.x);
            a.min_y = a.min_y.min(kp.y);
            a.max_x = a.max_x.max(kp.x);
            a.max_y = a.max_y.max(kp.y);
        }
        a
    }
}

/// Maps every coordinate affinely into the unit square using the sequence's
/// arena box (or its keypoint extent when no arena is recorded).
pub fn normalize_coords(seq: &PoseSequence) -> Result<PoseSequence> {
    let arena = seq.arena.unwrap_or_else(|| seq.extent());
    let w = arena.max_x - arena.min_x;
    let h = arena.max_y - arena.min_y;
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(Error::Normalization(format!(
            "sequence {}: degenerate arena {w} x {h}",
            seq.id
        )));
    }
    let mut out = seq.clone();
    for kp in out
        .frames
        .iter_mut()
        .flat_map(|f| f.animals.iter_mut().flatten())
    {
        kp.x = (kp.x - arena.min_x) / w;
        kp.y = (kp.y - arena.min_y) / h;
    }
    out.arena = Some(Arena::UNIT);
    // Metric scale no longer applies once axes are rescaled independently.
    out.px_per_cm = None;
    Ok(out)
}

/// Per-frame categorical labels with a name table. `background` is the id of
/// the catch-all class (e.g. "other") that macro scores exclude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTrack {
    pub labels: Vec<usize>,
    pub names: Vec<String>,
    pub background: usize,
}

impl AnnotationTrack {
    pub fn new(labels: Vec<usize>, names: Vec<String>, background: usize) -> Result<Self> {
        let track = AnnotationTrack {
            labels,
            names,
            background,
        };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<()> {
        if self.background >= self.names.len() {
            return Err(Error::Data(format!(
                "background id {} has no name",
                self.background
            )));
        }
        if let Some((t, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.names.len())
        {
            return Err(Error::Data(format!(
                "label id {l} at frame {t} has no name"
            )));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_with(points: &[(f64, f64)]) -> PoseSequence {
        let frames = points
            .iter()
            .map(|&(x, y)| {
                let mut f = PoseFrame::default();
                for kp in f.animals.iter_mut().flatten() {
                    *kp = Keypoint::new(x, y);
                }
                f
            })
            .collect();
        PoseSequence::new("s", 30.0, frames)
    }

    #[test]
    fn normalize_maps_arena_corners_and_midpoint() {
        let mut seq = seq_with(&[(10.0, 20.0), (110.0, 220.0), (60.0, 120.0)]);
        seq.arena = Some(Arena {
            min_x: 10.0,
            min_y: 20.0,
            max_x: 110.0,
            max_y: 220.0,
        });
        let n = normalize_coords(&seq).unwrap();
        let kp = |t: usize| n.frames[t].animals[0][0];
        assert_eq!((kp(0).x, kp(0).y), (0.0, 0.0));
        assert_eq!((kp(1).x, kp(1).y), (1.0, 1.0));
        assert_eq!((kp(2).x, kp(2).y), (0.5, 0.5));
    }

    #[test]
    fn normalize_derives_extent_and_is_idempotent() {
        let seq = seq_with(&[(3.0, -1.0), (7.0, 5.0), (4.2, 0.3)]);
        let once = normalize_coords(&seq).unwrap();
        let twice = normalize_coords(&once).unwrap();
        for (a, b) in once.frames.iter().zip(&twice.frames) {
            for (p, q) in a.animals.iter().flatten().zip(b.animals.iter().flatten()) {
                assert!((p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_arena_is_rejected() {
        let seq = seq_with(&[(1.0, 1.0), (1.0, 2.0)]);
        assert!(matches!(
            normalize_coords(&seq),
            Err(Error::Normalization(_))
        ));
    }

    #[test]
    fn body_center_is_mean_of_neck_and_hips() {
        let mut f = PoseFrame::default();
        f.animals[1][NECK] = Keypoint::new(0.0, 3.0);
        f.animals[1][LEFT_HIP] = Keypoint::new(-1.0, 0.0);
        f.animals[1][RIGHT_HIP] = Keypoint::new(1.0, 0.0);
        assert_eq!(f.body_center(1), (0.0, 1.0));
    }
}
