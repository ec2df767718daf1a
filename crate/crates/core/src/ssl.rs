//! Pretext-task example generators. Every task is a binary problem: label 0
//! is the genuine window (returned bit-identical), label 1 the altered one.
//!
//! * SMP: the intruder track comes from a different recording.
//! * NWP: a pair of windows; the second either continues the first or is drawn
//!   at random from the pool.
//! * VSP: the window is linearly resampled at a different playback speed.
//! * DMP: the intruder track is shifted in time against the resident.

use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{PoseFrame, PoseSequence, Window, WindowingConfig};
use crate::{Error, Result, Rng};

const MAX_REDRAWS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    Smp,
    Nwp,
    Vsp,
    Dmp,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Smp, Task::Nwp, Task::Vsp, Task::Dmp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Smp => "smp",
            Task::Nwp => "nwp",
            Task::Vsp => "vsp",
            Task::Dmp => "dmp",
        }
    }

    /// Number of windows the task feeds through the backbone.
    pub fn arity(self) -> usize {
        if self == Task::Nwp {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SslExample {
    pub task: Task,
    pub windows: Vec<Window>,
    pub label: u8,
}

impl SslExample {
    pub fn soft_target(&self, smoothing: f64) -> f64 {
        soft_target(self.label, smoothing)
    }
}

/// Smoothed binary target: `eps` for the genuine class, `1 - eps` for altered.
pub fn soft_target(label: u8, smoothing: f64) -> f64 {
    if label == 1 {
        1.0 - smoothing
    } else {
        smoothing
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    pub alter_prob: f64,
    pub speed_factors: Vec<f64>,
    /// Inclusive DMP delay range in frames; `None` means `[fps, 3 fps]`.
    pub delay_range_frames: Option<(usize, usize)>,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            alter_prob: 0.5,
            speed_factors: vec![0.5, 0.75, 1.5, 2.0],
            delay_range_frames: None,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alter_prob > 0.0 && self.alter_prob < 1.0) {
            return Err(Error::Config("alter_prob must be in (0, 1)".into()));
        }
        if self.speed_factors.is_empty()
            || self
                .speed_factors
                .iter()
                .any(|&f| !(f > 0.0 && f.is_finite()) || f == 1.0)
        {
            return Err(Error::Config(
                "speed_factors must be non-empty, positive and != 1".into(),
            ));
        }
        if let Some((lo, hi)) = self.delay_range_frames {
            if lo < 1 || hi < lo {
                return Err(Error::Config(
                    "delay_range_frames must satisfy 1 <= min <= max".into(),
                ));
            }
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must be in [0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn delay_range(&self, fps: f64) -> (usize, usize) {
        self.delay_range_frames.unwrap_or_else(|| {
            let one = fps.round().max(1.0) as usize;
            (one, 3 * one)
        })
    }
}

fn original(task: Task, windows: Vec<Window>) -> SslExample {
    SslExample {
        task,
        windows,
        label: 0,
    }
}

fn window_start(window: &Window) -> Result<usize> {
    usize::try_from(window.start).map_err(|_| {
        Error::Generation("window is edge-padded; pretext tasks need unpadded windows".into())
    })
}

/// Replaces the intruder track of `window` with frames `donor_start..` of `donor`.
pub fn smp_swap(window: &Window, donor: &PoseSequence, donor_start: usize) -> Result<SslExample> {
    let n = window.len();
    if donor_start + n > donor.len() {
        return Err(Error::Generation(format!(
            "donor {} too short for a {n}-frame segment at {donor_start}",
            donor.id
        )));
    }
    let mut w = window.clone();
    for (frame, d) in w
        .frames
        .iter_mut()
        .zip(&donor.frames[donor_start..donor_start + n])
    {
        frame.animals[1] = d.animals[1];
    }
    Ok(SslExample {
        task: Task::Smp,
        windows: vec![w],
        label: 1,
    })
}

/// Swap-mouse example. Donors sharing the window's source id are ignored.
pub fn gen_smp(
    window: &Window,
    donor_pool: &[&PoseSequence],
    cfg: &SslConfig,
    rng: &mut Rng,
) -> Result<SslExample> {
    let n = window.len();
    let donors: Vec<&PoseSequence> = donor_pool
        .iter()
        .copied()
        .filter(|d| d.id != window.source_id && d.len() >= n)
        .collect();
    if donors.is_empty() {
        return Err(Error::Generation(format!(
            "no donor sequence with >= {n} frames besides {}",
            window.source_id
        )));
    }
    if rng.random::<f64>() >= cfg.alter_prob {
        return Ok(original(Task::Smp, vec![window.clone()]));
    }
    let donor = donors.choose(rng).expect("non-empty");
    let start = rng.random_range(0..=donor.len() - n);
    smp_swap(window, donor, start)
}

/// Next-window example starting at `start` in `seq`.
pub fn gen_nwp(
    seq: &PoseSequence,
    start: usize,
    pool: &[&PoseSequence],
    windowing: &WindowingConfig,
    cfg: &SslConfig,
    rng: &mut Rng,
) -> Result<SslExample> {
    let n = windowing.window_size;
    let ti = windowing.target_index();
    if start + 2 * n > seq.len() {
        return Err(Error::Generation(format!(
            "sequence {} has {} frames; a window pair at {start} needs {}",
            seq.id,
            seq.len(),
            start + 2 * n
        )));
    }
    let first = Window::from_span(seq, start, n, ti);
    if rng.random::<f64>() >= cfg.alter_prob {
        let second = Window::from_span(seq, start + n, n, ti);
        return Ok(original(Task::Nwp, vec![first, second]));
    }
    let candidates: Vec<&PoseSequence> = pool.iter().copied().filter(|s| s.len() >= n).collect();
    if candidates.is_empty() {
        return Err(Error::Generation(format!(
            "no pool sequence with >= {n} frames"
        )));
    }
    for _ in 0..MAX_REDRAWS {
        let other = candidates.choose(rng).expect("non-empty");
        let s = rng.random_range(0..=other.len() - n);
        if other.id == seq.id && s == start + n {
            continue;
        }
        let second = Window::from_span(other, s, n, ti);
        return Ok(SslExample {
            task: Task::Nwp,
            windows: vec![first, second],
            label: 1,
        });
    }
    Err(Error::Generation(
        "could not draw a non-successor window".into(),
    ))
}

/// Resamples `n` frames of `source` from `start` at times `t * factor`, with
/// linear interpolation between neighbouring frames.
pub fn vsp_resample(
    source: &PoseSequence,
    start: usize,
    n: usize,
    target_index: usize,
    factor: f64,
) -> Result<Window> {
    let last = start + (n.saturating_sub(1) as f64 * factor).ceil() as usize;
    if n == 0 || last >= source.len() {
        return Err(Error::Resample(format!(
            "factor {factor} reads up to frame {last} from {start}, sequence {} has {}",
            source.id,
            source.len()
        )));
    }
    let frames = (0..n)
        .map(|t| {
            let tau = t as f64 * factor;
            let i = tau.floor() as usize;
            let frac = tau - i as f64;
            let a = &source.frames[start + i];
            if frac == 0.0 {
                return *a;
            }
            let b = &source.frames[start + i + 1];
            let mut f: PoseFrame = *a;
            for (p, q) in f
                .animals
                .iter_mut()
                .flatten()
                .zip(b.animals.iter().flatten())
            {
                p.x = (1.0 - frac) * p.x + frac * q.x;
                p.y = (1.0 - frac) * p.y + frac * q.y;
            }
            f
        })
        .collect();
    Ok(Window {
        frames,
        target_index,
        source_id: source.id.clone(),
        source_frame: start + (target_index as f64 * factor) as usize,
        start: start as i64,
    })
}

/// Video-speed example. The altered factor is drawn among those that fit in
/// the source from the window's start.
pub fn gen_vsp(
    window: &Window,
    source: &PoseSequence,
    cfg: &SslConfig,
    rng: &mut Rng,
) -> Result<SslExample> {
    if rng.random::<f64>() >= cfg.alter_prob {
        return Ok(original(Task::Vsp, vec![window.clone()]));
    }
    let start = window_start(window)?;
    let n = window.len();
    let fitting: Vec<f64> = cfg
        .speed_factors
        .iter()
        .copied()
        .filter(|&f| start + (f * n as f64).ceil() as usize <= source.len())
        .collect();
    let factor = *fitting.choose(rng).ok_or_else(|| {
        Error::Resample(format!(
            "no speed factor fits {} frames from {start} in {}",
            n, source.id
        ))
    })?;
    let w = vsp_resample(source, start, n, window.target_index, factor)?;
    Ok(SslExample {
        task: Task::Vsp,
        windows: vec![w],
        label: 1,
    })
}

/// Delays the intruder by `delay` frames: altered intruder frame `t` is source
/// frame `start + t - delay`. Negative delays lead instead of lag.
pub fn dmp_shift(window: &Window, source: &PoseSequence, delay: i64) -> Result<SslExample> {
    let start = window_start(window)? as i64;
    let n = window.len() as i64;
    let first = start - delay;
    if first < 0 || first + n > source.len() as i64 {
        return Err(Error::Resample(format!(
            "delay {delay} leaves sequence {} bounds",
            source.id
        )));
    }
    let mut w = window.clone();
    for (t, frame) in w.frames.iter_mut().enumerate() {
        frame.animals[1] = source.frames[(first + t as i64) as usize].animals[1];
    }
    Ok(SslExample {
        task: Task::Dmp,
        windows: vec![w],
        label: 1,
    })
}

pub fn gen_dmp(
    window: &Window,
    source: &PoseSequence,
    cfg: &SslConfig,
    rng: &mut Rng,
) -> Result<SslExample> {
    if rng.random::<f64>() >= cfg.alter_prob {
        return Ok(original(Task::Dmp, vec![window.clone()]));
    }
    let (lo, hi) = cfg.delay_range(source.fps);
    for _ in 0..MAX_REDRAWS {
        let d = rng.random_range(lo..=hi) as i64;
        let d = if rng.random::<bool>() { d } else { -d };
        match dmp_shift(window, source, d) {
            Ok(ex) => return Ok(ex),
            Err(Error::Resample(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Resample(format!(
        "no delay in [{lo}, {hi}] fits window at {} of {}",
        window.start, source.id
    )))
}

/// `batch_size` examples for each of the four tasks, in task order. Windows
/// are drawn uniformly over sequences and fully inside them.
pub fn build_batch(
    sources: &[PoseSequence],
    windowing: &WindowingConfig,
    cfg: &SslConfig,
    rng: &mut Rng,
    batch_size: usize,
) -> Result<Vec<SslExample>> {
    if sources.is_empty() {
        return Err(Error::Generation("no source sequences".into()));
    }
    let n = windowing.window_size;
    let ti = windowing.target_index();
    let pool: Vec<&PoseSequence> = sources.iter().collect();
    let single: Vec<&PoseSequence> = sources.iter().filter(|s| s.len() >= n).collect();
    let paired: Vec<&PoseSequence> = sources.iter().filter(|s| s.len() >= 2 * n).collect();
    if single.is_empty() {
        return Err(Error::Generation(format!("no sequence with >= {n} frames")));
    }

    let random_window = |rng: &mut Rng| {
        let seq = *single.choose(rng).expect("non-empty");
        let start = rng.random_range(0..=seq.len() - n);
        (seq, Window::from_span(seq, start, n, ti))
    };

    let mut out = Vec::with_capacity(4 * batch_size);
    for task in Task::ALL {
        for _ in 0..batch_size {
            let ex = match task {
                Task::Smp => {
                    let (_, w) = random_window(rng);
                    gen_smp(&w, &pool, cfg, rng)?
                }
                Task::Nwp => {
                    let seq = *paired.choose(rng).ok_or_else(|| {
                        Error::Generation(format!("no sequence with >= {} frames", 2 * n))
                    })?;
                    let start = rng.random_range(0..=seq.len() - 2 * n);
                    gen_nwp(seq, start, &pool, windowing, cfg, rng)?
                }
                Task::Vsp | Task::Dmp => {
                    let mut drawn = None;
                    for _ in 0..MAX_REDRAWS {
                        let (seq, w) = random_window(rng);
                        let r = if task == Task::Vsp {
                            gen_vsp(&w, seq, cfg, rng)
                        } else {
                            gen_dmp(&w, seq, cfg, rng)
                        };
                        match r {
                            Ok(ex) => {
                                drawn = Some(ex);
                                break;
                            }
                            Err(Error::Resample(_)) => continue,
                            Err(e) => return Err(e),
                        }
                    }
                    drawn.ok_or_else(|| {
                        Error::Generation(format!(
                            "{} windows kept failing to resample",
                            task.name()
                        ))
                    })?
                }
            };
            out.push(ex);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ExampleRecord<'a> {
    task: &'a str,
    label: u8,
    sources: Vec<&'a str>,
    source_frames: Vec<usize>,
}

/// Audit dump: one JSON object per example.
pub fn write_examples_ndjson(path: &Path, examples: &[SslExample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for ex in examples {
        let rec = ExampleRecord {
            task: ex.task.name(),
            label: ex.label,
            sources: ex.windows.iter().map(|w| w.source_id.as_str()).collect(),
            source_frames: ex.windows.iter().map(|w| w.source_frame).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Keypoint;
    use crate::seeded_rng;

    /// Every keypoint of animal `a` at frame t sits at (base_a + t, 0).
    fn ramp(id: &str, len: usize, base: f64) -> PoseSequence {
        let frames = (0..len)
            .map(|t| {
                let mut f = PoseFrame::default();
                for (a, animal) in f.animals.iter_mut().enumerate() {
                    for kp in animal.iter_mut() {
                        *kp = Keypoint::new(base + 1000.0 * a as f64 + t as f64, 0.0);
                    }
                }
                f
            })
            .collect();
        PoseSequence::new(id, 30.0, frames)
    }

    fn forced(alter: bool) -> SslConfig {
        SslConfig {
            alter_prob: if alter { 1.0 - 1e-12 } else { 1e-12 },
            ..SslConfig::default()
        }
    }

    #[test]
    fn smp_forced_swap_replaces_only_intruder() {
        let a = ramp("a", 50, 0.0);
        let b = ramp("b", 50, 5000.0);
        let w = Window::from_span(&a, 10, 8, 7);
        let mut rng = seeded_rng(1, 0);
        let ex = gen_smp(&w, &[&a, &b], &forced(true), &mut rng).unwrap();
        assert_eq!(ex.label, 1);
        let out = &ex.windows[0];
        let shift = out.frames[0].animals[1][0].x - 6000.0;
        for (t, (o, i)) in out.frames.iter().zip(&w.frames).enumerate() {
            assert_eq!(o.animals[0], i.animals[0]);
            assert_eq!(o.animals[1], b.frames[shift as usize + t].animals[1]);
        }
    }

    #[test]
    fn smp_original_is_identity() {
        let a = ramp("a", 50, 0.0);
        let b = ramp("b", 50, 5000.0);
        let w = Window::from_span(&a, 3, 8, 7);
        let mut rng = seeded_rng(2, 0);
        let ex = gen_smp(&w, &[&a, &b], &forced(false), &mut rng).unwrap();
        assert_eq!(ex.label, 0);
        assert_eq!(ex.windows, vec![w]);
    }

    #[test]
    fn smp_without_donor_fails() {
        let a = ramp("a", 50, 0.0);
        let w = Window::from_span(&a, 3, 8, 7);
        let mut rng = seeded_rng(2, 0);
        assert!(matches!(
            gen_smp(&w, &[&a], &SslConfig::default(), &mut rng),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn nwp_positive_and_altered_pairs() {
        let a = ramp("a", 100, 0.0);
        let b = ramp("b", 100, 5000.0);
        let wc = WindowingConfig::new(10, 0).unwrap();
        let mut rng = seeded_rng(3, 0);
        let pos = gen_nwp(&a, 20, &[&a, &b], &wc, &forced(false), &mut rng).unwrap();
        assert_eq!(pos.label, 0);
        assert_eq!(
            pos.windows[1].source_frame,
            pos.windows[0].source_frame + 10
        );
        for _ in 0..50 {
            let neg = gen_nwp(&a, 20, &[&a, &b], &wc, &forced(true), &mut rng).unwrap();
            assert_eq!(neg.label, 1);
            let w2 = &neg.windows[1];
            assert!(!(w2.source_id == "a" && w2.start == 30));
        }
        assert!(gen_nwp(&a, 85, &[&a], &wc, &forced(false), &mut rng).is_err());
    }

    #[test]
    fn vsp_linear_trajectory_is_resampled_exactly() {
        let a = ramp("a", 100, 0.0);
        for (factor, expect) in [(2.0, 2.0), (0.5, 0.5)] {
            let w = vsp_resample(&a, 0, 20, 19, factor).unwrap();
            for (t, f) in w.frames.iter().enumerate() {
                assert_eq!(f.animals[0][0].x, expect * t as f64);
                assert_eq!(f.animals[1][3].x, 1000.0 + expect * t as f64);
            }
        }
        assert!(matches!(
            vsp_resample(&a, 90, 20, 19, 2.0),
            Err(Error::Resample(_))
        ));
    }

    #[test]
    fn vsp_original_is_identity() {
        let a = ramp("a", 100, 0.0);
        let w = Window::from_span(&a, 5, 20, 19);
        let mut rng = seeded_rng(4, 0);
        let ex = gen_vsp(&w, &a, &forced(false), &mut rng).unwrap();
        assert_eq!((ex.label, &ex.windows[0]), (0, &w));
    }

    #[test]
    fn dmp_forced_delay() {
        let a = ramp("a", 200, 0.0);
        let start = 100;
        let w = Window::from_span(&a, start, 20, 19);
        let ex = dmp_shift(&w, &a, 30).unwrap();
        for (t, f) in ex.windows[0].frames.iter().enumerate() {
            assert_eq!(f.animals[1], a.frames[start + t - 30].animals[1]);
            assert_eq!(f.animals[0], w.frames[t].animals[0]);
        }
        assert!(dmp_shift(&w, &a, 101).is_err());
        let mut rng = seeded_rng(5, 0);
        let orig = gen_dmp(&w, &a, &forced(false), &mut rng).unwrap();
        assert_eq!((orig.label, &orig.windows[0]), (0, &w));
    }

    #[test]
    fn batch_cardinality_targets_and_determinism() {
        let seqs = vec![ramp("a", 300, 0.0), ramp("b", 300, 5000.0)];
        let wc = WindowingConfig::new(16, 0).unwrap();
        let cfg = SslConfig::default();
        let b1 = build_batch(&seqs, &wc, &cfg, &mut seeded_rng(9, 0), 8).unwrap();
        let b2 = build_batch(&seqs, &wc, &cfg, &mut seeded_rng(9, 0), 8).unwrap();
        assert_eq!(b1, b2);
        for task in Task::ALL {
            assert_eq!(b1.iter().filter(|e| e.task == task).count(), 8);
        }
        for ex in &b1 {
            assert_eq!(ex.windows.len(), ex.task.arity());
            for w in &ex.windows {
                assert_eq!(w.len(), 16);
                assert!(w.target_index < 16);
            }
        }
        assert_eq!(soft_target(1, 0.1), 0.9);
        assert_eq!(soft_target(0, 0.1), 0.1);
        assert_eq!(soft_target(1, 0.0), 1.0);
        assert_eq!(soft_target(0, 0.0), 0.0);
    }
}
