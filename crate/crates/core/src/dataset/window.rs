use serde::{Deserialize, Serialize};

use super::{PoseFrame, PoseSequence, INPUT_DIM};
use crate::{Error, Result};

/// Window geometry. `offset` is the number of future frames after the target:
/// 0 makes the window causal (target is the last frame), `N/2 - 1` roughly
/// centres it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowingConfig {
    pub window_size: usize,
    pub offset: usize,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        WindowingConfig {
            window_size: 200,
            offset: 0,
        }
    }
}

impl WindowingConfig {
    pub fn new(window_size: usize, offset: usize) -> Result<Self> {
        let cfg = WindowingConfig {
            window_size,
            offset,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::Config("window_size must be >= 1".into()));
        }
        if self.offset >= self.window_size {
            return Err(Error::Config(format!(
                "offset {} must be < window_size {}",
                self.offset, self.window_size
            )));
        }
        Ok(())
    }

    pub fn target_index(&self) -> usize {
        self.window_size - 1 - self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub frames: Vec<PoseFrame>,
    pub target_index: usize,
    pub source_id: String,
    /// Source frame represented by the target row.
    pub source_frame: usize,
    /// Source index of row 0 before edge clamping (may be negative).
    pub start: i64,
}

impl Window {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Builds a window from `len` frames starting at `start`, which must lie
    /// fully inside the sequence.
    pub fn from_span(seq: &PoseSequence, start: usize, len: usize, target_index: usize) -> Window {
        debug_assert!(start + len <= seq.len() && target_index < len);
        Window {
            frames: seq.frames[start..start + len].to_vec(),
            target_index,
            source_id: seq.id.clone(),
            source_frame: start + target_index,
            start: start as i64,
        }
    }

    /// Row-major `len x INPUT_DIM` feature matrix.
    pub fn features(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.frames.len() * INPUT_DIM];
        for (frame, row) in self.frames.iter().zip(out.chunks_exact_mut(INPUT_DIM)) {
            frame.write_features(row);
        }
        out
    }
}

/// Window whose target is source frame `t`, padding at either edge by
/// repeating the first or last frame.
pub fn window_at(seq: &PoseSequence, cfg: &WindowingConfig, t: usize) -> Window {
    let n = cfg.window_size;
    let target_index = cfg.target_index();
    let start = t as i64 - target_index as i64;
    let last = seq.len() as i64 - 1;
    let frames = (0..n as i64)
        .map(|i| seq.frames[(start + i).clamp(0, last) as usize])
        .collect();
    Window {
        frames,
        target_index,
        source_id: seq.id.clone(),
        source_frame: t,
        start,
    }
}

/// One window per frame of `seq`, each frame being the target exactly once.
pub fn make_windows(seq: &PoseSequence, cfg: &WindowingConfig) -> Result<Vec<Window>> {
    cfg.validate()?;
    Ok((0..seq.len()).map(|t| window_at(seq, cfg, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Keypoint;

    fn numbered(len: usize) -> PoseSequence {
        let frames = (0..len)
            .map(|t| {
                let mut f = PoseFrame::default();
                f.animals[0][0] = Keypoint::new(t as f64, 0.0);
                f
            })
            .collect();
        PoseSequence::new("n", 30.0, frames)
    }

    fn ids(w: &Window) -> Vec<f64> {
        w.frames.iter().map(|f| f.animals[0][0].x).collect()
    }

    #[test]
    fn causal_window_pads_with_first_frame() {
        let seq = numbered(5);
        let ws = make_windows(&seq, &WindowingConfig::new(3, 0).unwrap()).unwrap();
        assert_eq!(ws.len(), 5);
        assert_eq!(ids(&ws[0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(ids(&ws[4]), vec![2.0, 3.0, 4.0]);
        assert!(ws.iter().all(|w| w.target_index == 2));
    }

    #[test]
    fn offset_window_pads_with_last_frame() {
        let seq = numbered(5);
        let ws = make_windows(&seq, &WindowingConfig::new(3, 1).unwrap()).unwrap();
        assert_eq!(ids(&ws[4]), vec![3.0, 4.0, 4.0]);
        assert_eq!(ws[4].target_index, 1);
    }

    #[test]
    fn single_frame_sequence_repeats() {
        let seq = numbered(1);
        let ws = make_windows(&seq, &WindowingConfig::new(200, 0).unwrap()).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].len(), 200);
        assert!(ids(&ws[0]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(WindowingConfig::new(0, 0).is_err());
        assert!(WindowingConfig::new(4, 4).is_err());
        assert_eq!(WindowingConfig::new(200, 99).unwrap().target_index(), 100);
    }
}
