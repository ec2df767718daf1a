//! Diagonal-Gaussian hidden Markov model: Baum–Welch fitting, Viterbi
//! decoding and causal label filters.

use std::io::Write;
use std::path::Path;

use log::warn;
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{seeded_rng, Error, Result};

pub const VAR_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub k: usize,
    pub dim: usize,
    pub initial: Vec<f64>,
    /// Row-stochastic, `transition[i][j] = P(j | i)`.
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub seed: u64,
}

impl HmmParams {
    pub fn validate(&self) -> Result<()> {
        let stochastic = |row: &[f64]| {
            row.len() == self.k
                && row.iter().all(|&p| p >= 0.0 && p.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        };
        if self.k == 0 {
            return Err(Error::Spec("an HMM needs at least one state".into()));
        }
        if !stochastic(&self.initial) {
            return Err(Error::Spec("initial distribution must sum to 1".into()));
        }
        if self.transition.len() != self.k || !self.transition.iter().all(|r| stochastic(r)) {
            return Err(Error::Spec(
                "transition matrix must be row-stochastic".into(),
            ));
        }
        let shaped = |m: &[Vec<f64>]| m.len() == self.k && m.iter().all(|r| r.len() == self.dim);
        if !shaped(&self.means) || !shaped(&self.variances) {
            return Err(Error::Spec(format!(
                "means and variances must be {} x {}",
                self.k, self.dim
            )));
        }
        if self.variances.iter().flatten().any(|&v| !(v >= VAR_FLOOR)) {
            return Err(Error::Spec(format!("variances must be >= {VAR_FLOOR}")));
        }
        Ok(())
    }

    /// Log density of `x` under state `k`'s diagonal Gaussian.
    pub fn log_emission(&self, k: usize, x: ArrayView1<f64>) -> f64 {
        let mut s = 0.0;
        for ((&xi, &m), &v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            s += LN_2PI + v.ln() + (xi - m) * (xi - m) / v;
        }
        -0.5 * s
    }

    /// `T x K` log emission densities.
    pub fn log_emissions(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.ncols(),
            });
        }
        Ok(Array2::from_shape_fn((x.nrows(), self.k), |(t, k)| {
            self.log_emission(k, x.row(t))
        }))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: HmmParams = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Log-likelihood of the parameters entering each EM iteration; the last
    /// entry belongs to the returned parameters.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// Iterations at which an emptied state was re-seeded.
    pub reseeded: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub var_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 500,
            tol: 0.01,
            var_floor: VAR_FLOOR,
        }
    }
}

/// Scaled forward pass over precomputed log emissions. Returns the
/// normalised forward variables and the sequence log-likelihood.
fn forward(p: &HmmParams, logb: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Vec<f64>, f64) {
    let (t_len, k) = logb.dim();
    let mut alpha = Array2::zeros((t_len, k));
    let mut scale = vec![0.0; t_len];
    let mut shift = vec![0.0; t_len];
    let mut ll = 0.0;
    for t in 0..t_len {
        let m = logb.row(t).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        shift[t] = m;
        for j in 0..k {
            let prior = if t == 0 {
                p.initial[j]
            } else {
                (0..k).map(|i| alpha[[t - 1, i]] * p.transition[i][j]).sum()
            };
            alpha[[t, j]] = prior * (logb[[t, j]] - m).exp();
        }
        let c: f64 = alpha.row(t).sum();
        scale[t] = c;
        alpha.row_mut(t).mapv_inplace(|v| v / c);
        ll += c.ln() + m;
    }
    (alpha, scale, shift, ll)
}

fn check_dims(p: &HmmParams, series: &[ArrayView2<f64>]) -> Result<()> {
    for s in series {
        if s.ncols() != p.dim {
            return Err(Error::Dimension {
                expected: p.dim,
                got: s.ncols(),
            });
        }
    }
    Ok(())
}

/// Total log-likelihood of a set of independent series, each starting from
/// the initial distribution.
pub fn log_likelihood(p: &HmmParams, series: &[ArrayView2<f64>]) -> Result<f64> {
    check_dims(p, series)?;
    let mut total = 0.0;
    for s in series {
        if s.nrows() > 0 {
            total += forward(p, &p.log_emissions(s)?).3;
        }
    }
    Ok(total)
}

/// Expected sufficient statistics of one series.
struct Stats {
    ll: f64,
    gamma0: Vec<f64>,
    xi: Array2<f64>,
    mass: Vec<f64>,
    sum_x: Array2<f64>,
    sum_xx: Array2<f64>,
}

fn e_step(p: &HmmParams, x: &ArrayView2<f64>) -> Result<Stats> {
    let logb = p.log_emissions(x)?;
    let (t_len, k) = logb.dim();
    let (alpha, scale, shift, ll) = forward(p, &logb);
    let mut e = logb.clone();
    for (mut row, m) in e.rows_mut().into_iter().zip(&shift) {
        row.mapv_inplace(|v| (v - m).exp());
    }
    let mut beta = Array2::from_elem((t_len, k), 1.0);
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..k {
            let mut s = 0.0;
            for j in 0..k {
                s += p.transition[i][j] * e[[t + 1, j]] * beta[[t + 1, j]];
            }
            beta[[t, i]] = s / scale[t + 1];
        }
    }
    let gamma = &alpha * &beta;
    let mut xi = Array2::zeros((k, k));
    for t in 0..t_len.saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                xi[[i, j]] += alpha[[t, i]] * p.transition[i][j] * e[[t + 1, j]] * beta[[t + 1, j]]
                    / scale[t + 1];
            }
        }
    }
    let d = x.ncols();
    let mut sum_x = Array2::zeros((k, d));
    let mut sum_xx = Array2::zeros((k, d));
    let mut mass = vec![0.0; k];
    for t in 0..t_len {
        for s in 0..k {
            let g = gamma[[t, s]];
            mass[s] += g;
            for c in 0..d {
                let v = x[[t, c]];
                sum_x[[s, c]] += g * v;
                sum_xx[[s, c]] += g * v * v;
            }
        }
    }
    Ok(Stats {
        ll,
        gamma0: gamma.row(0).to_vec(),
        xi,
        mass,
        sum_x,
        sum_xx,
    })
}

fn global_variance(series: &[ArrayView2<f64>], d: usize, floor: f64) -> Vec<f64> {
    let n: usize = series.iter().map(|s| s.nrows()).sum();
    let mut mean = vec![0.0; d];
    for s in series {
        for row in s.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
    }
    let mut var = vec![0.0; d];
    for s in series {
        for row in s.rows() {
            for ((acc, m), v) in var.iter_mut().zip(&mean).zip(row) {
                *acc += (v - m) * (v - m) / n as f64;
            }
        }
    }
    var.into_iter().map(|v| v.max(floor)).collect()
}

/// Means seeded at K distinct observations, each drawn with probability
/// proportional to its squared distance from the nearest mean chosen so far.
fn seed_means(rows: &[ArrayView1<f64>], k: usize, rng: &mut crate::Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..rows.len())];
    let dist = |a: &ArrayView1<f64>, b: &ArrayView1<f64>| {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    };
    let mut nearest: Vec<f64> = rows.iter().map(|r| dist(r, &rows[chosen[0]])).collect();
    while chosen.len() < k {
        let weights: Vec<f64> = nearest
            .iter()
            .enumerate()
            .map(|(i, &d)| if chosen.contains(&i) { 0.0 } else { d })
            .collect();
        let next = match WeightedIndex::new(&weights) {
            Ok(w) => w.sample(rng),
            // Every remaining observation coincides with a chosen one.
            Err(_) => loop {
                let i = rng.random_range(0..rows.len());
                if !chosen.contains(&i) {
                    break i;
                }
            },
        };
        for (i, r) in rows.iter().enumerate() {
            nearest[i] = nearest[i].min(dist(r, &rows[next]));
        }
        chosen.push(next);
    }
    chosen.iter().map(|&i| rows[i].to_vec()).collect()
}

/// Fits an HMM with `k` states by Baum–Welch. Stops when the log-likelihood
/// gain falls below 0.01 or after 500 updates.
pub fn em_fit(series: &[ArrayView2<f64>], k: usize, seed: u64) -> Result<(HmmParams, FitReport)> {
    em_fit_with(series, k, seed, &EmOptions::default())
}

pub fn em_fit_with(
    series: &[ArrayView2<f64>],
    k: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<(HmmParams, FitReport)> {
    let series: Vec<ArrayView2<f64>> = series.iter().filter(|s| s.nrows() > 0).cloned().collect();
    let total: usize = series.iter().map(|s| s.nrows()).sum();
    if k == 0 || total < k {
        return Err(Error::Spec(format!(
            "{total} frames cannot support {k} states"
        )));
    }
    let d = series[0].ncols();
    if series.iter().any(|s| s.ncols() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: series
                .iter()
                .map(|s| s.ncols())
                .find(|&c| c != d)
                .unwrap_or(d),
        });
    }
    if series.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("non-finite observation".into()));
    }
    let rows: Vec<ArrayView1<f64>> = series.iter().flat_map(|s| s.rows()).collect();
    let mut rng = seeded_rng(seed, 0);
    let gvar = global_variance(&series, d, opts.var_floor);
    let mut p = HmmParams {
        k,
        dim: d,
        initial: vec![1.0 / k as f64; k],
        transition: vec![vec![1.0 / k as f64; k]; k],
        means: seed_means(&rows, k, &mut rng),
        variances: vec![gvar.clone(); k],
        seed,
    };
    let mut report = FitReport {
        log_likelihood: Vec::new(),
        iterations: 0,
        converged: false,
        seed,
        reseeded: Vec::new(),
    };
    loop {
        let stats: Vec<Stats> = series
            .par_iter()
            .map(|s| e_step(&p, s))
            .collect::<Result<_>>()?;
        let ll: f64 = stats.iter().map(|s| s.ll).sum();
        if !ll.is_finite() {
            return Err(Error::Training {
                step: report.iterations,
                msg: "non-finite HMM log-likelihood".into(),
            });
        }
        if let Some(&prev) = report.log_likelihood.last() {
            if ll - prev < opts.tol {
                report.log_likelihood.push(ll);
                report.converged = true;
                break;
            }
        }
        report.log_likelihood.push(ll);
        if report.iterations == opts.max_iter {
            break;
        }
        m_step(&mut p, &stats, &rows, &gvar, opts, &mut rng, &mut report);
        report.iterations += 1;
    }
    Ok((p, report))
}

fn m_step(
    p: &mut HmmParams,
    stats: &[Stats],
    rows: &[ArrayView1<f64>],
    gvar: &[f64],
    opts: &EmOptions,
    rng: &mut crate::Rng,
    report: &mut FitReport,
) {
    let (k, d) = (p.k, p.dim);
    let mut gamma0 = vec![0.0; k];
    let mut xi = Array2::<f64>::zeros((k, k));
    let mut mass = vec![0.0; k];
    let mut sum_x = Array2::<f64>::zeros((k, d));
    let mut sum_xx = Array2::<f64>::zeros((k, d));
    for s in stats {
        for i in 0..k {
            gamma0[i] += s.gamma0[i];
            mass[i] += s.mass[i];
        }
        xi += &s.xi;
        sum_x += &s.sum_x;
        sum_xx += &s.sum_xx;
    }
    let g0: f64 = gamma0.iter().sum();
    p.initial = gamma0.iter().map(|g| g / g0).collect();
    for i in 0..k {
        let row: f64 = xi.row(i).sum();
        if row > 0.0 {
            p.transition[i] = xi.row(i).iter().map(|v| v / row).collect();
        }
        if mass[i] < 1e-10 {
            warn!("HMM state {i} lost all responsibility; re-seeding at a random observation");
            p.means[i] = rows[rng.random_range(0..rows.len())].to_vec();
            p.variances[i] = gvar.to_vec();
            report.reseeded.push(report.iterations);
            continue;
        }
        for c in 0..d {
            let m = sum_x[[i, c]] / mass[i];
            p.means[i][c] = m;
            p.variances[i][c] = (sum_xx[[i, c]] / mass[i] - m * m).max(opts.var_floor);
        }
    }
    normalise(&mut p.initial);
    for row in &mut p.transition {
        normalise(row);
    }
}

fn normalise(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    for x in v {
        *x /= s;
    }
}

/// Viterbi path over precomputed `T x K` log emissions. Ties resolve toward
/// the lower state index.
pub fn viterbi(
    log_initial: &[f64],
    log_transition: &[Vec<f64>],
    logb: &ArrayView2<f64>,
) -> Vec<usize> {
    let (t_len, k) = logb.dim();
    if t_len == 0 {
        return Vec::new();
    }
    let mut delta: Vec<f64> = (0..k).map(|j| log_initial[j] + logb[[0, j]]).collect();
    let mut back = vec![0usize; t_len * k];
    for t in 1..t_len {
        let mut next = vec![0.0; k];
        for j in 0..k {
            let mut best = 0;
            let mut best_v = delta[0] + log_transition[0][j];
            for i in 1..k {
                let v = delta[i] + log_transition[i][j];
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            back[t * k + j] = best;
            next[j] = best_v + logb[[t, j]];
        }
        delta = next;
    }
    let mut state = 0;
    for j in 1..k {
        if delta[j] > delta[state] {
            state = j;
        }
    }
    let mut path = vec![0; t_len];
    for t in (0..t_len).rev() {
        path[t] = state;
        if t > 0 {
            state = back[t * k + state];
        }
    }
    path
}

/// Most likely state path of one series.
pub fn decode(p: &HmmParams, x: &ArrayView2<f64>) -> Result<Vec<usize>> {
    let logb = p.log_emissions(x)?;
    let li: Vec<f64> = p.initial.iter().map(|v| v.ln()).collect();
    let lt: Vec<Vec<f64>> = p
        .transition
        .iter()
        .map(|r| r.iter().map(|v| v.ln()).collect())
        .collect();
    Ok(viterbi(&li, &lt, &logb.view()))
}

/// `out[t]` is the median label over frames `[t - w + 1, t]`, clamped at the
/// start. Even-sized windows take the lower median.
pub fn causal_median_filter(labels: &[usize], filter_frames: usize) -> Vec<usize> {
    let w = filter_frames.max(1);
    (0..labels.len())
        .map(|t| {
            let mut win: Vec<usize> = labels[(t + 1).saturating_sub(w)..=t].to_vec();
            win.sort_unstable();
            win[(win.len() - 1) / 2]
        })
        .collect()
}

/// Majority label over the same causal window; ties go to the label seen
/// most recently.
pub fn causal_mode_filter(labels: &[usize], filter_frames: usize) -> Vec<usize> {
    let w = filter_frames.max(1);
    (0..labels.len())
        .map(|t| {
            let win = &labels[(t + 1).saturating_sub(w)..=t];
            let mut best = labels[t];
            let mut best_n = 0;
            for (i, &l) in win.iter().enumerate().rev() {
                if win[i + 1..].contains(&l) {
                    continue;
                }
                let n = win.iter().filter(|&&x| x == l).count();
                if n > best_n {
                    best = l;
                    best_n = n;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    #[default]
    Median,
    Mode,
}

pub fn causal_filter(labels: &[usize], filter_frames: usize, kind: FilterKind) -> Vec<usize> {
    match kind {
        FilterKind::Median => causal_median_filter(labels, filter_frames),
        FilterKind::Mode => causal_mode_filter(labels, filter_frames),
    }
}

/// State track as CSV `frame,state`.
pub fn write_states_csv(path: &Path, states: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    w.write_record(["frame", "state"])
        .map_err(|e| Error::io(path, e.into()))?;
    for (t, s) in states.iter().enumerate() {
        w.write_record([t.to_string(), s.to_string()])
            .map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_states_csv(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let frame: usize = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err("bad frame".into()))?;
        if frame != out.len() {
            return Err(parse_err(format!(
                "expected frame {}, found {frame}",
                out.len()
            )));
        }
        out.push(
            rec.get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| parse_err("bad state".into()))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_state(mean: Vec<f64>, var: Vec<f64>) -> HmmParams {
        HmmParams {
            k: 1,
            dim: mean.len(),
            initial: vec![1.0],
            transition: vec![vec![1.0]],
            means: vec![mean],
            variances: vec![var],
            seed: 0,
        }
    }

    #[test]
    fn single_state_single_frame_is_gaussian_density() {
        let p = one_state(vec![1.0, -1.0], vec![2.0, 0.5]);
        let x = array![[2.0, 0.0]];
        let expect = -0.5 * ((2.0 * std::f64::consts::PI * 2.0).ln() + 0.5)
            - 0.5 * ((2.0 * std::f64::consts::PI * 0.5).ln() + 2.0);
        assert!((log_likelihood(&p, &[x.view()]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = one_state(vec![0.0], vec![1.0]);
        let x = array![[1.0, 2.0]];
        assert!(matches!(
            log_likelihood(&p, &[x.view()]),
            Err(Error::Dimension { .. })
        ));
        assert!(decode(&p, &x.view()).is_err());
    }

    #[test]
    fn single_state_fit_matches_sample_moments() {
        let x = array![[1.0, 0.0], [2.0, 4.0], [4.0, 2.0], [5.0, 2.0]];
        let (p, r) = em_fit(&[x.view()], 1, 0).unwrap();
        assert_eq!(p.means[0], vec![3.0, 2.0]);
        assert!((p.variances[0][0] - 2.5).abs() < 1e-12);
        assert!((p.variances[0][1] - 2.0).abs() < 1e-12);
        assert!(r.converged);
        assert_eq!(decode(&p, &x.view()).unwrap(), vec![0; 4]);
    }

    #[test]
    fn filters() {
        assert_eq!(causal_median_filter(&[0, 0, 0, 5, 0, 0, 0], 3), vec![0; 7]);
        let l = [3, 1, 4, 1, 5, 9, 2, 6];
        assert_eq!(causal_median_filter(&l, 1), l.to_vec());
        assert_eq!(causal_median_filter(&[2; 5], 4), vec![2; 5]);
        assert_eq!(causal_mode_filter(&[0, 0, 0, 5, 0, 0, 0], 3), vec![0; 7]);
        assert_eq!(causal_mode_filter(&[1, 2, 2, 1], 2), vec![1, 2, 2, 1]);
        assert_eq!(causal_median_filter(&[], 3), Vec::<usize>::new());
    }

    #[test]
    fn too_few_frames_is_rejected() {
        let x = array![[1.0], [2.0]];
        assert!(em_fit(&[x.view()], 3, 0).is_err());
    }

    #[test]
    fn json_and_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = array![[0.0], [0.1], [5.0], [5.1], [0.2], [5.2]];
        let (p, _) = em_fit(&[x.view()], 2, 3).unwrap();
        let path = dir.path().join("h.json");
        p.write_json(&path).unwrap();
        assert_eq!(HmmParams::read_json(&path).unwrap(), p);
        let states = decode(&p, &x.view()).unwrap();
        let csv = dir.path().join("s.csv");
        write_states_csv(&csv, &states).unwrap();
        assert_eq!(read_states_csv(&csv).unwrap(), states);
    }
}
