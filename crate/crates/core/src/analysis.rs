//! Downstream quantification of label tracks: bouts, durations and rates,
//! bout-level transitions, coverage of annotations, kinematic features,
//! event-aligned averages and two-sample tests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{PoseSequence, NOSE};
use crate::{Error, Result};

/// Maximal run of one label over frames `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bout {
    pub label: usize,
    pub start: usize,
    pub end: usize,
    pub duration_s: f64,
}

pub fn extract_bouts(labels: &[usize], fps: f64) -> Vec<Bout> {
    let mut out: Vec<Bout> = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            out.push(Bout {
                label: labels[start],
                start,
                end: t,
                duration_s: (t - start) as f64 / fps,
            });
            start = t;
        }
    }
    out
}

/// Re-expands bouts into a per-frame track.
pub fn expand_bouts(bouts: &[Bout]) -> Vec<usize> {
    bouts
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.label, b.end - b.start))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoutStats {
    /// Mean bout duration in seconds; `None` when the label never occurs.
    pub mean_duration_s: Option<f64>,
    pub rate_per_min: f64,
    pub count: usize,
}

pub fn bout_stats(bouts: &[Bout], label: usize, track_duration_s: f64) -> Result<BoutStats> {
    if !(track_duration_s > 0.0) {
        return Err(Error::Data("track duration must be positive".into()));
    }
    let durations: Vec<f64> = bouts
        .iter()
        .filter(|b| b.label == label)
        .map(|b| b.duration_s)
        .collect();
    let count = durations.len();
    Ok(BoutStats {
        mean_duration_s: (count > 0).then(|| durations.iter().sum::<f64>() / count as f64),
        rate_per_min: count as f64 / (track_duration_s / 60.0),
        count,
    })
}

/// Row-normalised counts of consecutive distinct bouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: Vec<Vec<usize>>,
    pub probs: Vec<Vec<f64>>,
    pub outgoing: Vec<usize>,
    /// Labels with no outgoing transition (all-zero rows).
    pub empty_rows: Vec<usize>,
}

/// Transitions over one or more bout tracks; pairs never span tracks.
pub fn transitions(tracks: &[&[Bout]], n_labels: usize) -> Result<TransitionMatrix> {
    let mut counts = vec![vec![0usize; n_labels]; n_labels];
    for bouts in tracks {
        for w in bouts.windows(2) {
            let (a, b) = (w[0].label, w[1].label);
            if a >= n_labels || b >= n_labels {
                return Err(Error::Data(format!("label {} out of range", a.max(b))));
            }
            if a != b {
                counts[a][b] += 1;
            }
        }
    }
    let outgoing: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let probs = counts
        .iter()
        .zip(&outgoing)
        .map(|(r, &o)| {
            r.iter()
                .map(|&c| if o == 0 { 0.0 } else { c as f64 / o as f64 })
                .collect()
        })
        .collect();
    let empty_rows = (0..n_labels).filter(|&i| outgoing[i] == 0).collect();
    Ok(TransitionMatrix {
        counts,
        probs,
        outgoing,
        empty_rows,
    })
}

/// Elementwise `a - b` of two transition probability matrices.
pub fn transition_difference(a: &TransitionMatrix, b: &TransitionMatrix) -> Result<Vec<Vec<f64>>> {
    if a.probs.len() != b.probs.len() {
        return Err(Error::LengthMismatch {
            left: a.probs.len(),
            right: b.probs.len(),
        });
    }
    Ok(a.probs
        .iter()
        .zip(&b.probs)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect())
}

/// Binary F1 of frames labelled `proto` against frames labelled `behavior`,
/// for every pair. Rows are prototypes, columns behaviors.
pub fn f1_coverage(
    prototypes: &[usize],
    annotations: &[usize],
    n_prototypes: usize,
    n_behaviors: usize,
) -> Result<Vec<Vec<f64>>> {
    if prototypes.len() != annotations.len() {
        return Err(Error::LengthMismatch {
            left: prototypes.len(),
            right: annotations.len(),
        });
    }
    let mut joint = vec![vec![0usize; n_behaviors]; n_prototypes];
    let mut per_proto = vec![0usize; n_prototypes];
    let mut per_beh = vec![0usize; n_behaviors];
    for (&p, &b) in prototypes.iter().zip(annotations) {
        if p < n_prototypes {
            per_proto[p] += 1;
        }
        if b < n_behaviors {
            per_beh[b] += 1;
        }
        if p < n_prototypes && b < n_behaviors {
            joint[p][b] += 1;
        }
    }
    Ok((0..n_prototypes)
        .map(|p| {
            (0..n_behaviors)
                .map(|b| {
                    let den = per_proto[p] + per_beh[b];
                    if den == 0 {
                        0.0
                    } else {
                        2.0 * joint[p][b] as f64 / den as f64
                    }
                })
                .collect()
        })
        .collect())
}

/// Per-frame kinematic features of a dyad.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehavioralFeatures {
    /// Experimental body center to stimulus snout, cm.
    pub proximity_cm: Vec<f64>,
    /// Per animal: angle between body-center-to-snout and the direction of
    /// the partner's body center, degrees in [0, 180].
    pub orientation_deg: [Vec<f64>; 2],
    /// Per animal body-center speed, cm/s. Frame 0 repeats frame 1.
    pub velocity_cm_s: [Vec<f64>; 2],
}

/// Kinematic features with `experimental` as the focal animal (0 or 1).
/// Body center is the mean of neck and both hips.
pub fn behavioral_features(seq: &PoseSequence, experimental: usize) -> Result<BehavioralFeatures> {
    let px_per_cm = seq
        .px_per_cm
        .ok_or_else(|| Error::Config("px_per_cm is missing from the sequence metadata".into()))?;
    if experimental > 1 {
        return Err(Error::Config("experimental animal must be 0 or 1".into()));
    }
    let stimulus = 1 - experimental;
    let n = seq.len();
    let mut f = BehavioralFeatures {
        proximity_cm: Vec::with_capacity(n),
        orientation_deg: [Vec::with_capacity(n), Vec::with_capacity(n)],
        velocity_cm_s: [vec![0.0; n], vec![0.0; n]],
    };
    for frame in &seq.frames {
        let centers = [frame.body_center(0), frame.body_center(1)];
        let snout = frame.animals[stimulus][NOSE];
        let c = centers[experimental];
        f.proximity_cm
            .push((snout.x - c.0).hypot(snout.y - c.1) / px_per_cm);
        for a in 0..2 {
            let nose = frame.animals[a][NOSE];
            let head = (nose.x - centers[a].0, nose.y - centers[a].1);
            let other = centers[1 - a];
            let to = (other.0 - centers[a].0, other.1 - centers[a].1);
            let cross = head.0 * to.1 - head.1 * to.0;
            let dot = head.0 * to.0 + head.1 * to.1;
            f.orientation_deg[a].push(cross.abs().atan2(dot).to_degrees());
        }
    }
    for a in 0..2 {
        for t in 1..n {
            let (p, q) = (
                seq.frames[t - 1].body_center(a),
                seq.frames[t].body_center(a),
            );
            f.velocity_cm_s[a][t] = (q.0 - p.0).hypot(q.1 - p.1) * seq.fps / px_per_cm;
        }
        if n > 1 {
            f.velocity_cm_s[a][0] = f.velocity_cm_s[a][1];
        }
    }
    Ok(f)
}

/// Centered moving average over `window` samples, shrinking at the edges.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let (lo, hi) = ((w - 1) / 2, w / 2);
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..x.len())
        .map(|t| {
            let a = t.saturating_sub(lo);
            let b = (t + hi + 1).min(x.len());
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// Bouts whose duration lies in the closed interval `[min_s, max_s]`.
pub fn filter_events(bouts: &[Bout], min_s: f64, max_s: f64) -> Vec<Bout> {
    // Durations are frame counts over fps; allow for rounding at the bounds.
    let tol = 1e-9;
    bouts
        .iter()
        .filter(|b| b.duration_s >= min_s - tol && b.duration_s <= max_s + tol)
        .copied()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub unit: String,
    pub times: Vec<f64>,
    pub duration_s: f64,
}

impl SpikeTrain {
    pub fn new(unit: impl Into<String>, mut times: Vec<f64>, duration_s: f64) -> Result<Self> {
        let unit = unit.into();
        if times
            .iter()
            .any(|t| !t.is_finite() || *t < 0.0 || *t > duration_s)
        {
            return Err(Error::Data(format!(
                "unit {unit} has spikes outside [0, {duration_s}]"
            )));
        }
        times.sort_by(f64::total_cmp);
        Ok(SpikeTrain {
            unit,
            times,
            duration_s,
        })
    }

    /// Spikes per second in consecutive bins of `bin_s` from time 0.
    pub fn binned_rate(&self, bin_s: f64) -> Vec<f64> {
        let n = (self.duration_s / bin_s).ceil().max(1.0) as usize;
        let mut out = vec![0.0; n];
        for &t in &self.times {
            let i = ((t / bin_s + 1e-9).floor() as usize).min(n - 1);
            out[i] += 1.0 / bin_s;
        }
        out
    }
}

/// Reads `unit,timestamp_s` rows. Units are returned sorted by id; the
/// session duration defaults to the last spike time.
pub fn read_spikes_csv(path: &Path, duration_s: Option<f64>) -> Result<Vec<SpikeTrain>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut units: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let unit = rec
            .get(0)
            .ok_or_else(|| err("missing unit".into()))?
            .to_string();
        let t: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err("timestamp_s must be a number".into()))?;
        units.entry(unit).or_default().push(t);
    }
    let last = units.values().flatten().cloned().fold(0.0, f64::max);
    let duration = duration_s.unwrap_or(last);
    units
        .into_iter()
        .map(|(u, ts)| SpikeTrain::new(u, ts, duration))
        .collect()
}

pub fn write_spikes_csv(path: &Path, trains: &[SpikeTrain]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    w.write_record(["unit", "timestamp_s"])
        .map_err(|e| Error::io(path, e.into()))?;
    for tr in trains {
        for t in &tr.times {
            w.write_record([tr.unit.clone(), t.to_string()])
                .map_err(|e| Error::io(path, e.into()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PethConfig {
    /// Half-width of the aligned window, seconds.
    pub window_s: f64,
    pub bin_s: f64,
    pub zscore: bool,
    /// Gaussian smoothing window in seconds (sigma = window / 4); none if unset.
    pub smooth_s: Option<f64>,
}

impl Default for PethConfig {
    fn default() -> Self {
        PethConfig {
            window_s: 5.0,
            bin_s: 0.1,
            zscore: true,
            smooth_s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PethResult {
    pub time_s: Vec<f64>,
    pub mean: Vec<f64>,
    pub sem: Vec<f64>,
    pub n_events: usize,
    /// Events dropped because the window ran past the recording.
    pub n_dropped: usize,
}

/// z-score over the whole series; a constant series maps to zeros.
pub fn zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Normalised Gaussian smoothing with sigma `window / 4`, truncated at
/// `± window / 2`, renormalised near the edges.
pub fn gaussian_smooth(x: &[f64], bin_s: f64, window_s: f64) -> Vec<f64> {
    let sigma = window_s / 4.0 / bin_s;
    let half = (window_s / 2.0 / bin_s).round() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    (0..x.len() as isize)
        .map(|t| {
            let mut s = 0.0;
            let mut w = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                let j = t + k as isize - half;
                if j >= 0 && (j as usize) < x.len() {
                    s += g * x[j as usize];
                    w += g;
                }
            }
            s / w
        })
        .collect()
}

/// Averages a binned signal around event times. Events whose window does not
/// fit inside the signal are dropped and counted.
pub fn peth_signal(signal: &[f64], events_s: &[f64], cfg: &PethConfig) -> Result<PethResult> {
    if !(cfg.bin_s > 0.0 && cfg.window_s > 0.0) {
        return Err(Error::Config("PETH bin and window must be positive".into()));
    }
    let mut x = if cfg.zscore {
        zscore(signal)
    } else {
        signal.to_vec()
    };
    if let Some(w) = cfg.smooth_s {
        x = gaussian_smooth(&x, cfg.bin_s, w);
    }
    let h = (cfg.window_s / cfg.bin_s).round() as isize;
    let width = (2 * h + 1) as usize;
    let mut segments: Vec<&[f64]> = Vec::new();
    let mut dropped = 0;
    for &e in events_s {
        let c = (e / cfg.bin_s + 1e-9).floor() as isize;
        if c - h < 0 || c + h >= x.len() as isize {
            dropped += 1;
            continue;
        }
        segments.push(&x[(c - h) as usize..=(c + h) as usize]);
    }
    if segments.is_empty() {
        return Err(Error::Data(format!(
            "no usable events ({dropped} too close to the edges)"
        )));
    }
    let n = segments.len() as f64;
    let mut mean = vec![0.0; width];
    let mut sem = vec![0.0; width];
    for i in 0..width {
        let m = segments.iter().map(|s| s[i]).sum::<f64>() / n;
        mean[i] = m;
        if segments.len() > 1 {
            let var = segments.iter().map(|s| (s[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
            sem[i] = (var / n).sqrt();
        }
    }
    Ok(PethResult {
        time_s: (-h..=h).map(|i| i as f64 * cfg.bin_s).collect(),
        mean,
        sem,
        n_events: segments.len(),
        n_dropped: dropped,
    })
}

/// PETH of a spike train: spikes are binned to a rate, optionally z-scored
/// over the session, then aligned.
pub fn peth_spikes(train: &SpikeTrain, events_s: &[f64], cfg: &PethConfig) -> Result<PethResult> {
    peth_signal(&train.binned_rate(cfg.bin_s), events_s, cfg)
}

pub fn write_peth_csv(path: &Path, r: &PethResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    w.write_record(["time", "mean", "sem", "n"])
        .map_err(|e| Error::io(path, e.into()))?;
    for i in 0..r.time_s.len() {
        w.write_record([
            r.time_s[i].to_string(),
            r.mean[i].to_string(),
            r.sem[i].to_string(),
            r.n_events.to_string(),
        ])
        .map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Student's two-sample t-test with pooled variance, two-sided. With zero
/// pooled variance: equal means give `t = 0, p = 1`, unequal means give an
/// infinite `t` and `p = 0`.
pub fn unpaired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Data("each sample needs at least 2 values".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Data("samples must be finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let ss = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>()
        + b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
    let df = na + nb - 2.0;
    let pooled = ss / df;
    let diff = ma - mb;
    if pooled == 0.0 {
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: f64::INFINITY.copysign(diff),
                p: 0.0,
                df,
            }
        });
    }
    let t = diff / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Undefined(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}
