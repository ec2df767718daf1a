//! Browser demo over the core library: generate a synthetic dyad, segment it
//! with a Gaussian HMM over kinematic features, and align a simulated unit to
//! the onsets of one planted state.

use dyadic::analysis::{
    behavioral_features, extract_bouts, filter_events, moving_average, peth_spikes, PethConfig,
    SpikeTrain,
};
use dyadic::dataset::{synth_generate, PoseSequence, SyntheticSpec, NOSE};
use dyadic::hmm::{decode, em_fit};
use dyadic::seeded_rng;
use dyadic::train::eval_nmi;
use ndarray::Array2;
use rand::Rng as _;
use wasm_bindgen::prelude::*;

/// Frames averaged when smoothing features before segmentation.
const SMOOTH_FRAMES: usize = 15;

/// One generated dyad and its planted labels.
#[wasm_bindgen]
pub struct Session {
    seq: PoseSequence,
    planted: Vec<usize>,
    decoded: Vec<usize>,
}

/// Segmentation quality against the planted labels.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug)]
pub struct Score {
    pub accuracy: f64,
    pub nmi: f64,
}

/// Peri-event histogram of the simulated unit, in spikes per second.
#[wasm_bindgen(getter_with_clone)]
#[derive(Clone, Debug)]
pub struct Peth {
    pub time_s: Vec<f64>,
    pub mean: Vec<f64>,
    pub sem: Vec<f64>,
    pub n_events: usize,
}

#[wasm_bindgen]
impl Session {
    /// Three planted states at 30 fps.
    #[wasm_bindgen(constructor)]
    pub fn new(frames: usize, seed: u32) -> Result<Session, JsError> {
        let spec = SyntheticSpec::planted_three_state("demo", frames, seed as u64);
        let (seq, track) = synth_generate(&spec).map_err(err)?;
        Ok(Session {
            seq,
            planted: track.labels,
            decoded: Vec::new(),
        })
    }

    pub fn frames(&self) -> usize {
        self.seq.len()
    }

    /// Body centers per frame as `x0, y0, x1, y1` in unit arena coordinates.
    pub fn centers(&self) -> Vec<f64> {
        self.seq
            .frames
            .iter()
            .flat_map(|f| {
                let (a, b) = (f.body_center(0), f.body_center(1));
                [a.0, a.1, b.0, b.1]
            })
            .collect()
    }

    /// Noses per frame as `x0, y0, x1, y1`.
    pub fn noses(&self) -> Vec<f64> {
        self.seq
            .frames
            .iter()
            .flat_map(|f| {
                let (a, b) = (f.animals[0][NOSE], f.animals[1][NOSE]);
                [a.x, a.y, b.x, b.y]
            })
            .collect()
    }

    pub fn planted(&self) -> Vec<u32> {
        self.planted.iter().map(|&l| l as u32).collect()
    }

    /// Fits a `k`-state HMM and keeps the Viterbi path.
    pub fn segment(&mut self, k: usize, seed: u32) -> Result<Score, JsError> {
        let x = features(&self.seq).map_err(err)?;
        let (params, _) = em_fit(&[x.view()], k, seed as u64).map_err(err)?;
        self.decoded = decode(&params, &x.view()).map_err(err)?;
        Ok(Score {
            accuracy: majority_accuracy(&self.decoded, &self.planted),
            nmi: eval_nmi(&self.decoded, &self.planted).map_err(err)?,
        })
    }

    pub fn decoded(&self) -> Vec<u32> {
        self.decoded.iter().map(|&l| l as u32).collect()
    }

    /// PETH of a Poisson unit firing at `base_hz`, raised to `peak_hz` for
    /// half a second after each onset of planted `state`.
    pub fn peth(
        &self,
        state: usize,
        base_hz: f64,
        peak_hz: f64,
        seed: u32,
    ) -> Result<Peth, JsError> {
        peth_for_state(
            &self.seq,
            &self.planted,
            state,
            base_hz,
            peak_hz,
            seed as u64,
        )
        .map_err(err)
    }
}

fn err(e: dyadic::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Smoothed, z-scored proximity, orientations and speeds.
fn features(seq: &PoseSequence) -> dyadic::Result<Array2<f64>> {
    let f = behavioral_features(seq, 0)?;
    let cols = [
        &f.proximity_cm,
        &f.orientation_deg[0],
        &f.orientation_deg[1],
        &f.velocity_cm_s[0],
        &f.velocity_cm_s[1],
    ];
    let n = seq.len();
    let mut x = Array2::zeros((n, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        let s = moving_average(c, SMOOTH_FRAMES);
        let mean = s.iter().sum::<f64>() / n as f64;
        let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64)
            .sqrt()
            .max(1e-12);
        for (t, v) in s.iter().enumerate() {
            x[[t, j]] = (v - mean) / sd;
        }
    }
    Ok(x)
}

/// Fraction of frames whose decoded state maps to the planted label under
/// the majority mapping.
fn majority_accuracy(decoded: &[usize], planted: &[usize]) -> f64 {
    let k = decoded.iter().max().map_or(0, |m| m + 1);
    let m = planted.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; m]; k];
    for (&d, &p) in decoded.iter().zip(planted) {
        counts[d][p] += 1;
    }
    let hits: usize = counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / decoded.len().max(1) as f64
}

fn peth_for_state(
    seq: &PoseSequence,
    labels: &[usize],
    state: usize,
    base_hz: f64,
    peak_hz: f64,
    seed: u64,
) -> dyadic::Result<Peth> {
    if !(base_hz >= 0.0 && peak_hz >= base_hz && peak_hz > 0.0) {
        return Err(dyadic::Error::Config(
            "rates need 0 <= base <= peak, peak > 0".into(),
        ));
    }
    let fps = seq.fps;
    let duration = seq.len() as f64 / fps;
    let onsets: Vec<f64> = filter_events(&extract_bouts(labels, fps), 0.5, f64::INFINITY)
        .iter()
        .filter(|b| b.label == state)
        .map(|b| b.start as f64 / fps)
        .collect();
    let mut rng = seeded_rng(seed, 0);
    let mut times = Vec::new();
    let mut t = 0.0;
    // Thinning of a Poisson process at the peak rate.
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / peak_hz;
        if t >= duration {
            break;
        }
        let inside = onsets.iter().any(|&e| t >= e && t < e + 0.5);
        let rate = if inside { peak_hz } else { base_hz };
        if rng.random::<f64>() < rate / peak_hz {
            times.push(t);
        }
    }
    let train = SpikeTrain::new("demo", times, duration)?;
    let cfg = PethConfig {
        window_s: 1.0,
        bin_s: 0.05,
        zscore: false,
        smooth_s: None,
    };
    let r = peth_spikes(&train, &onsets, &cfg)?;
    Ok(Peth {
        time_s: r.time_s,
        mean: r.mean,
        sem: r.sem,
        n_events: r.n_events,
    })
}
