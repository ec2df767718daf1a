//! Test-only oracles, written independently of the library's code paths.

#![allow(dead_code)]

use dyadic::dataset::{Keypoint, PoseFrame, PoseSequence, Window, WindowingConfig, INPUT_DIM};
use dyadic::model::{EncoderConfig, EncoderParams, TensorSet};
use dyadic::{seeded_rng, Rng};
use rand::Rng as _;

pub fn random_sequence(id: &str, len: usize, rng: &mut Rng) -> PoseSequence {
    let frames = (0..len)
        .map(|_| {
            let mut f = PoseFrame::default();
            for kp in f.animals.iter_mut().flatten() {
                *kp = Keypoint::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            }
            f
        })
        .collect();
    PoseSequence::new(id, 30.0, frames)
}

pub fn small_config() -> EncoderConfig {
    EncoderConfig {
        input_dim: INPUT_DIM,
        embed_dim: 16,
        n_layers: 2,
        n_heads: 2,
        mlp_hidden: 16,
        window_size: 8,
    }
}

/// Randomly initialised model with every tensor (positional table and norms
/// included) pushed off its default values.
pub fn random_model(cfg: &EncoderConfig, seed: u64) -> EncoderParams {
    let mut rng = seeded_rng(seed, 0);
    let mut p = EncoderParams::init(cfg, &mut rng).unwrap();
    p.perturb(0.3, &mut rng);
    p
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn affine(x: &[Vec<f64>], w: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w.ncols())
                .map(|j| b[j] + (0..w.nrows()).map(|i| row[i] * w[[i, j]]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn norm(x: &[Vec<f64>], g: &ndarray::Array1<f64>, b: &ndarray::Array1<f64>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(j, v)| g[j] * (v - mean) / (var + 1e-5).sqrt() + b[j])
                .collect()
        })
        .collect()
}

/// Straight-line evaluation of the backbone on one window, with explicit
/// loops and no shared helpers.
pub fn reference_forward(p: &EncoderParams, window: &Window) -> Vec<Vec<f64>> {
    let cfg = &p.config;
    let x: Vec<Vec<f64>> = window
        .frames
        .iter()
        .map(|f| f.features().to_vec())
        .collect();
    let hidden: Vec<Vec<f64>> = affine(&x, &p.frame.fc1.w, &p.frame.fc1.b)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let mut h = affine(&hidden, &p.frame.fc2.w, &p.frame.fc2.b);
    for (t, row) in h.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += p.pos[[t, j]];
        }
    }
    let n = h.len();
    let dh = cfg.embed_dim / cfg.n_heads;
    for blk in &p.blocks {
        let n1 = norm(&h, &blk.ln1.g, &blk.ln1.b);
        let q = affine(&n1, &blk.wq.w, &blk.wq.b);
        let k = affine(&n1, &blk.wk.w, &blk.wk.b);
        let v = affine(&n1, &blk.wv.w, &blk.wv.b);
        let mut o = vec![vec![0.0; cfg.embed_dim]; n];
        for head in 0..cfg.n_heads {
            let c0 = head * dh;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dh).map(|c| q[i][c0 + c] * k[j][c0 + c]).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    o[i][c0 + c] = (0..n).map(|j| e[j] / z * v[j][c0 + c]).sum();
                }
            }
        }
        let a = affine(&o, &blk.wo.w, &blk.wo.b);
        for i in 0..n {
            for j in 0..cfg.embed_dim {
                h[i][j] += a[i][j];
            }
        }
        let n2 = norm(&h, &blk.ln2.g, &blk.ln2.b);
        let m1: Vec<Vec<f64>> = affine(&n2, &blk.mlp.fc1.w, &blk.mlp.fc1.b)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let m2 = affine(&m1, &blk.mlp.fc2.w, &blk.mlp.fc2.b);
        for i in 0..n {
            for j in 0..cfg.embed_dim {
                h[i][j] += m2[i][j];
            }
        }
    }
    norm(&h, &p.ln_f.g, &p.ln_f.b)
}

/// Central finite differences over every scalar of every tensor of `params`.
/// Returns (tensor name, max relative error) per tensor. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn finite_difference_check<P: TensorSet + Clone>(
    params: &P,
    analytic: &P,
    step: f64,
    floor: f64,
    loss: impl Fn(&P) -> f64,
) -> Vec<(String, f64)> {
    let names: Vec<String> = params.tensors().into_iter().map(|t| t.name).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut out = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = grads[ti].len();
        let mut worst: f64 = 0.0;
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][i] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][i] -= step;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let a = grads[ti][i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push((name.clone(), worst));
    }
    out
}

pub fn windowing(n: usize) -> WindowingConfig {
    WindowingConfig::new(n, 0).unwrap()
}

/// Markov chain over `k` states with self-transition `stay`, remaining mass
/// spread uniformly, started from state 0.
pub fn planted_chain(k: usize, len: usize, stay: f64, rng: &mut Rng) -> Vec<usize> {
    let mut s = 0;
    (0..len)
        .map(|_| {
            let cur = s;
            if k > 1 && rng.random::<f64>() >= stay {
                let mut n = rng.random_range(0..k - 1);
                if n >= s {
                    n += 1;
                }
                s = n;
            }
            cur
        })
        .collect()
}

/// Unit-variance Gaussian observations around `means[label]`.
pub fn planted_observations(
    labels: &[usize],
    means: &[Vec<f64>],
    rng: &mut Rng,
) -> ndarray::Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let d = means[0].len();
    ndarray::Array2::from_shape_fn((labels.len(), d), |(t, c)| {
        let z: f64 = StandardNormal.sample(rng);
        means[labels[t]][c] + z
    })
}

/// Means for `k` planted states in `d` dimensions, pairwise at least
/// `sep` apart.
pub fn separated_means(k: usize, d: usize, sep: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            (0..d)
                .map(|c| {
                    if c == i % d {
                        sep * (1 + i / d) as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Best fraction of agreement between two labelings over all one-to-one
/// relabelings of `pred` (brute force over permutations).
pub fn best_permutation_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let k = kp.max(kt);
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    fn search(i: usize, used: &mut Vec<bool>, counts: &[Vec<usize>]) -> usize {
        if i == counts.len() {
            return 0;
        }
        let mut best = 0;
        for j in 0..counts.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(counts[i][j] + search(i + 1, used, counts));
                used[j] = false;
            }
        }
        best
    }
    search(0, &mut vec![false; k], &counts) as f64 / pred.len() as f64
}

/// Log-likelihood by explicit enumeration of every state path.
pub fn enumerate_log_likelihood(p: &dyadic::hmm::HmmParams, x: &ndarray::Array2<f64>) -> f64 {
    let (t_len, k) = (x.nrows(), p.k);
    let density = |s: usize, t: usize| -> f64 {
        (0..p.dim)
            .map(|c| {
                let v = p.variances[s][c];
                let d = x[[t, c]] - p.means[s][c];
                (-(d * d) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
            })
            .product()
    };
    let mut total = 0.0;
    for code in 0..k.pow(t_len as u32) {
        let path: Vec<usize> = (0..t_len).map(|t| code / k.pow(t as u32) % k).collect();
        let mut prob = p.initial[path[0]] * density(path[0], 0);
        for t in 1..t_len {
            prob *= p.transition[path[t - 1]][path[t]] * density(path[t], t);
        }
        total += prob;
    }
    total.ln()
}

/// Highest-scoring path by enumeration; ties go to the lexicographically
/// smallest path compared from the last frame backwards.
pub fn enumerate_best_path(
    p: &dyadic::hmm::HmmParams,
    x: &ndarray::Array2<f64>,
) -> (Vec<usize>, f64) {
    let (t_len, k) = (x.nrows(), p.k);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for code in 0..k.pow(t_len as u32) {
        let path: Vec<usize> = (0..t_len).map(|t| code / k.pow(t as u32) % k).collect();
        let mut score = p.initial[path[0]].ln() + p.log_emission(path[0], x.row(0));
        for t in 1..t_len {
            score += p.transition[path[t - 1]][path[t]].ln() + p.log_emission(path[t], x.row(t));
        }
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((path, score));
        }
    }
    best.unwrap()
}

fn random_simplex(k: usize, rng: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_hmm(k: usize, d: usize, rng: &mut Rng) -> dyadic::hmm::HmmParams {
    dyadic::hmm::HmmParams {
        k,
        dim: d,
        initial: random_simplex(k, rng),
        transition: (0..k).map(|_| random_simplex(k, rng)).collect(),
        means: (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect(),
        variances: (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(0.3..2.0)).collect())
            .collect(),
        seed: 0,
    }
}

/// Jaccard distance of two boolean masks; two empty masks are identical.
pub fn brute_jaccard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// Symmetric matrix with zero diagonal and distinct off-diagonal entries.
pub fn random_distances(n: usize, rng: &mut Rng) -> ndarray::Array2<f64> {
    let mut d = ndarray::Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let v = rng.random_range(0.01..1.0);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Silhouette straight from its definition: mean intra-cluster distance
/// against the nearest other cluster's mean distance.
pub fn brute_silhouette(d: &ndarray::Array2<f64>, assignment: &[usize]) -> Vec<f64> {
    let n = assignment.len();
    let clusters: std::collections::BTreeSet<usize> = assignment.iter().copied().collect();
    (0..n)
        .map(|i| {
            let mates: Vec<usize> = (0..n)
                .filter(|&j| j != i && assignment[j] == assignment[i])
                .collect();
            if mates.is_empty() {
                return 0.0;
            }
            let a = mates.iter().map(|&j| d[[i, j]]).sum::<f64>() / mates.len() as f64;
            let b = clusters
                .iter()
                .filter(|&&c| c != assignment[i])
                .map(|&c| {
                    let m: Vec<usize> = (0..n).filter(|&j| assignment[j] == c).collect();
                    m.iter().map(|&j| d[[i, j]]).sum::<f64>() / m.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}

/// Average linkage recomputed from member lists at every step. Returns
/// `(id_a, id_b, height, members)` per merge with leaves `0..n` and merged
/// clusters `n + step`.
pub fn brute_average_linkage(d: &ndarray::Array2<f64>) -> Vec<(usize, usize, f64, Vec<usize>)> {
    let n = d.nrows();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let mut best = (0, 0, f64::INFINITY);
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (a, b) = (&clusters[x].1, &clusters[y].1);
                let mut s = 0.0;
                for &i in a {
                    for &j in b {
                        s += d[[i, j]];
                    }
                }
                let avg = s / (a.len() * b.len()) as f64;
                if avg < best.2 {
                    best = (x, y, avg);
                }
            }
        }
        let (x, y, h) = best;
        let cy = clusters.remove(y);
        let cx = clusters.remove(x);
        let mut members: Vec<usize> = cx.1.iter().chain(&cy.1).copied().collect();
        members.sort_unstable();
        out.push((cx.0.min(cy.0), cx.0.max(cy.0), h, members.clone()));
        clusters.push((n + step, members));
    }
    out
}

/// Per-class F1 by counting, over classes seen in either labeling.
pub fn brute_f1(
    pred: &[usize],
    truth: &[usize],
    excluded: Option<usize>,
) -> (Vec<(usize, f64)>, f64) {
    let mut classes: Vec<usize> = pred
        .iter()
        .chain(truth)
        .copied()
        .filter(|&c| Some(c) != excluded)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let per: Vec<(usize, f64)> = classes
        .iter()
        .map(|&c| {
            let tp = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| **p == c && **t == c)
                .count() as f64;
            let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
            let actual = truth.iter().filter(|&&t| t == c).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (c, f1)
        })
        .collect();
    let macro_f1 = if per.is_empty() {
        0.0
    } else {
        per.iter().map(|x| x.1).sum::<f64>() / per.len() as f64
    };
    (per, macro_f1)
}

/// NMI via `I = H(A) + H(B) - H(A, B)` on a dense contingency table,
/// normalised by the arithmetic mean of the marginal entropies.
pub fn brute_nmi(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let n = a.len() as f64;
    let mut table = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let h = |counts: &mut dyn Iterator<Item = f64>| -> f64 {
        counts
            .filter(|&c| c > 0.0)
            .map(|c| -(c / n) * (c / n).ln())
            .sum()
    };
    let ha = h(&mut table.iter().map(|r| r.iter().sum::<f64>()));
    let hb = h(&mut (0..kb).map(|j| table.iter().map(|r| r[j]).sum::<f64>()));
    let hab = h(&mut table.iter().flatten().copied());
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    (2.0 * (ha + hb - hab) / (ha + hb)).clamp(0.0, 1.0)
}

/// Pooled-variance t statistic and its two-sided p-value from the exact
/// finite series for integer degrees of freedom.
pub fn brute_ttest(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ssa: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let ssb: f64 = b.iter().map(|x| (x - mb) * (x - mb)).sum();
    let nu = a.len() + b.len() - 2;
    let sp2 = (ssa + ssb) / nu as f64;
    let t = (ma - mb) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    let theta = (t.abs() / (nu as f64).sqrt()).atan();
    let (s, c) = (theta.sin(), theta.cos());
    // P(|T| <= |t|), Abramowitz & Stegun 26.7.3 / 26.7.4.
    let inside = if nu % 2 == 1 {
        let mut term = 1.0;
        let mut sum = if nu > 1 { 1.0 } else { 0.0 };
        let mut k = 1;
        while 2 * k + 1 < nu {
            term *= (2 * k) as f64 / (2 * k + 1) as f64 * c * c;
            sum += term;
            k += 1;
        }
        2.0 / std::f64::consts::PI * (theta + s * c * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while 2 * k < nu {
            term *= (2 * k - 1) as f64 / (2 * k) as f64 * c * c;
            sum += term;
            k += 1;
        }
        s * sum
    };
    (t, 1.0 - inside, nu as f64)
}
