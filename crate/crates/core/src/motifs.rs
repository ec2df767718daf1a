//! Motif discovery across HMMs of increasing state count: per-state binary
//! masks, Jaccard distances, average-linkage clustering and silhouette-based
//! prototype selection.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hmm::{causal_filter, decode, em_fit, FilterKind, FitReport, HmmParams};
use crate::{Error, Result};

const CATALOG_MAGIC: &[u8; 8] = b"DYADMSK1";

/// Identifies a motif by the state count of its HMM and the state index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MotifId {
    pub k: usize,
    pub state: usize,
}

impl std::fmt::Display for MotifId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k{}s{}", self.k, self.state)
    }
}

/// Per-frame membership bitset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotifMask {
    pub id: MotifId,
    pub len: usize,
    pub words: Vec<u64>,
}

impl MotifMask {
    pub fn empty(id: MotifId, len: usize) -> Self {
        MotifMask {
            id,
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bools(id: MotifId, bits: &[bool]) -> Self {
        let mut m = Self::empty(id, bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.set(i);
            }
        }
        m
    }

    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }
}

/// One mask per state of every HMM of the sweep, in (K, state) order.
#[derive(Clone, Debug, PartialEq)]
pub struct MotifCatalog {
    pub masks: Vec<MotifMask>,
    pub k_min: usize,
    pub k_max: usize,
    pub n_frames: usize,
    /// Sequence ids and frame counts in concatenation order.
    pub series: Vec<(String, usize)>,
    /// State counts whose fit failed, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl MotifCatalog {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Masks from the per-frame state labels of each HMM (`(k, labels)`).
    pub fn from_labelings(
        labelings: &[(usize, Vec<usize>)],
        k_min: usize,
        k_max: usize,
        series: Vec<(String, usize)>,
    ) -> Result<Self> {
        let n_frames: usize = series.iter().map(|s| s.1).sum();
        let mut masks = Vec::new();
        for (k, labels) in labelings {
            if labels.len() != n_frames {
                return Err(Error::LengthMismatch {
                    left: labels.len(),
                    right: n_frames,
                });
            }
            let mut ms: Vec<MotifMask> = (0..*k)
                .map(|s| MotifMask::empty(MotifId { k: *k, state: s }, n_frames))
                .collect();
            for (t, &l) in labels.iter().enumerate() {
                if l >= *k {
                    return Err(Error::Data(format!("state {l} out of range for k = {k}")));
                }
                ms[l].set(t);
            }
            masks.extend(ms);
        }
        Ok(MotifCatalog {
            masks,
            k_min,
            k_max,
            n_frames,
            series,
            skipped: Vec::new(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    /// Causal filter applied to each decoded track, in frames (1 = none).
    pub filter_frames: usize,
    pub filter_kind: FilterKind,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_min: 2,
            k_max: 32,
            seed: 0,
            filter_frames: 1,
            filter_kind: FilterKind::Median,
        }
    }
}

/// Fits and decodes one HMM per state count in `[k_min, k_max]` over the
/// concatenated series. A failed fit skips that K with a warning.
pub fn sweep_hmms(series: &[(String, ArrayView2<f64>)], cfg: &SweepConfig) -> Result<MotifCatalog> {
    Ok(sweep_hmms_with_fits(series, cfg)?.0)
}

/// One successful fit of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFit {
    pub params: HmmParams,
    pub report: FitReport,
}

/// As [`sweep_hmms`], also returning every fitted model.
pub fn sweep_hmms_with_fits(
    series: &[(String, ArrayView2<f64>)],
    cfg: &SweepConfig,
) -> Result<(MotifCatalog, Vec<SweepFit>)> {
    if cfg.k_min == 0 || cfg.k_min > cfg.k_max {
        return Err(Error::Config(format!(
            "invalid state range {}..{}",
            cfg.k_min, cfg.k_max
        )));
    }
    let total: usize = series.iter().map(|s| s.1.nrows()).sum();
    if total < cfg.k_max {
        return Err(Error::Spec(format!(
            "{total} frames cannot support {} states",
            cfg.k_max
        )));
    }
    let views: Vec<ArrayView2<f64>> = series.iter().map(|s| s.1).collect();
    let fits: Vec<(usize, Result<(Vec<usize>, SweepFit)>)> = (cfg.k_min..=cfg.k_max)
        .into_par_iter()
        .map(|k| {
            let r =
                em_fit(&views, k, cfg.seed.wrapping_add(k as u64)).and_then(|(params, report)| {
                    let mut labels = Vec::with_capacity(total);
                    for v in &views {
                        let states = decode(&params, v)?;
                        labels.extend(causal_filter(&states, cfg.filter_frames, cfg.filter_kind));
                    }
                    Ok((labels, SweepFit { params, report }))
                });
            (k, r)
        })
        .collect();
    let mut labelings = Vec::new();
    let mut models = Vec::new();
    let mut skipped = Vec::new();
    for (k, r) in fits {
        match r {
            Ok((l, fit)) => {
                labelings.push((k, l));
                models.push(fit);
            }
            Err(e) => {
                warn!("HMM fit with {k} states failed: {e}");
                skipped.push((k, e.to_string()));
            }
        }
    }
    let meta = series.iter().map(|s| (s.0.clone(), s.1.nrows())).collect();
    let mut cat = MotifCatalog::from_labelings(&labelings, cfg.k_min, cfg.k_max, meta)?;
    cat.skipped = skipped;
    Ok((cat, models))
}

/// `1 - |a & b| / |a | b|`; two empty masks are at distance 0.
pub fn jaccard_distance(a: &MotifMask, b: &MotifMask) -> Result<f64> {
    if a.len != b.len {
        return Err(Error::LengthMismatch {
            left: a.len,
            right: b.len,
        });
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones() as u64;
        union += (x | y).count_ones() as u64;
    }
    Ok(if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    })
}

/// Pairwise Jaccard distances of every catalog mask.
pub fn distance_matrix(masks: &[MotifMask]) -> Result<Array2<f64>> {
    let n = masks.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| jaccard_distance(&masks[i], &masks[j]))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

/// One agglomeration step. Clusters are numbered as leaves `0..n`, then
/// `n + step` for the cluster formed at each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

fn check_distance_matrix(d: &ArrayView2<f64>) -> Result<()> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::Matrix(format!(
            "distance matrix is {} x {}",
            n,
            d.ncols()
        )));
    }
    for i in 0..n {
        if d[[i, i]] != 0.0 {
            return Err(Error::Matrix(format!("diagonal entry {i} is not zero")));
        }
        for j in 0..i {
            if !d[[i, j]].is_finite() || d[[i, j]] != d[[j, i]] {
                return Err(Error::Matrix(format!(
                    "entry ({i}, {j}) is not symmetric and finite"
                )));
            }
        }
    }
    Ok(())
}

/// Average-linkage agglomerative clustering on a precomputed distance
/// matrix. Each step merges the closest pair of active slots; ties go to the
/// lexicographically lowest `(i, j)` slot pair, and the merged cluster takes
/// slot `i`.
pub fn hierarchical_cluster(d: &ArrayView2<f64>) -> Result<Dendrogram> {
    check_distance_matrix(d)?;
    let n = d.nrows();
    let mut work = d.to_owned();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut label: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && work[[i, j]] < best.2 {
                    best = (i, j, work[[i, j]]);
                }
            }
        }
        let (i, j, h) = best;
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if active[k] && k != i && k != j {
                let v = (si * work[[i, k]] + sj * work[[j, k]]) / (si + sj);
                work[[i, k]] = v;
                work[[k, i]] = v;
            }
        }
        active[j] = false;
        size[i] += size[j];
        merges.push(Merge {
            a: label[i].min(label[j]),
            b: label[i].max(label[j]),
            height: h,
            size: size[i],
        });
        label[i] = n + step;
    }
    Ok(Dendrogram { n, merges })
}

/// Flat assignment into `c` clusters by undoing the last `c - 1` merges.
/// Cluster ids follow the order of each cluster's lowest member.
pub fn cut(dendro: &Dendrogram, c: usize) -> Result<Vec<usize>> {
    let n = dendro.n;
    if c == 0 || c > n {
        return Err(Error::Spec(format!(
            "cannot cut {n} items into {c} clusters"
        )));
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, m) in dendro.merges.iter().take(n - c).enumerate() {
        let ra = root(&mut parent, m.a);
        let rb = root(&mut parent, m.b);
        parent[ra] = n + step;
        parent[rb] = n + step;
    }
    let mut ids = std::collections::BTreeMap::new();
    Ok((0..n)
        .map(|i| {
            let r = root(&mut parent, i);
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect())
}

/// Per-item silhouette and its mean. Singleton clusters score 0.
pub fn silhouette(d: &ArrayView2<f64>, assignment: &[usize]) -> Result<(Vec<f64>, f64)> {
    let n = d.nrows();
    if assignment.len() != n {
        return Err(Error::LengthMismatch {
            left: assignment.len(),
            right: n,
        });
    }
    let c = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; c];
    for &a in assignment {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Undefined(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignment[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; c];
            for j in 0..n {
                if j != i {
                    sums[assignment[j]] += d[[i, j]];
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..c)
                .filter(|&k| k != own && sizes[k] > 0)
                .map(|k| sums[k] / sizes[k] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / n as f64;
    Ok((scores, mean))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub n_macro: usize,
    pub motif_ids: Vec<MotifId>,
    /// Macro-category of each motif (catalog order).
    pub assignment: Vec<usize>,
    /// Catalog index of each macro-category's prototype.
    pub prototypes: Vec<usize>,
    pub silhouette: Vec<f64>,
    /// `(cluster count, mean silhouette)` for every candidate count.
    pub mean_silhouette: Vec<(usize, f64)>,
    pub tie_breaks: Vec<String>,
}

impl PrototypeSet {
    pub fn empty() -> Self {
        PrototypeSet {
            n_macro: 0,
            motif_ids: Vec::new(),
            assignment: Vec::new(),
            prototypes: Vec::new(),
            silhouette: Vec::new(),
            mean_silhouette: Vec::new(),
            tie_breaks: Vec::new(),
        }
    }

    pub fn prototype_ids(&self) -> Vec<MotifId> {
        self.prototypes.iter().map(|&i| self.motif_ids[i]).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Clusters the catalog's motifs, picks the cluster count with the highest
/// mean silhouette (smaller count on ties) and, within each cluster, the
/// motif with the highest silhouette (lower catalog index on ties).
pub fn select_prototypes(catalog: &MotifCatalog, max_macro: Option<usize>) -> Result<PrototypeSet> {
    let d = distance_matrix(&catalog.masks)?;
    select_prototypes_from(
        &d.view(),
        catalog.masks.iter().map(|m| m.id).collect(),
        max_macro,
    )
}

pub fn select_prototypes_from(
    d: &ArrayView2<f64>,
    motif_ids: Vec<MotifId>,
    max_macro: Option<usize>,
) -> Result<PrototypeSet> {
    let n = d.nrows();
    if n < 2 {
        return Err(Error::Spec(
            "prototype selection needs at least two motifs".into(),
        ));
    }
    let dendro = hierarchical_cluster(d)?;
    let hi = max_macro.unwrap_or(usize::MAX).min(n - 1).max(2);
    let mut tie_breaks = Vec::new();
    let mut mean_silhouette = Vec::new();
    let mut best: Option<(usize, Vec<usize>, Vec<f64>, f64)> = None;
    for c in 2..=hi {
        let assignment = cut(&dendro, c)?;
        let (scores, mean) = silhouette(d, &assignment)?;
        mean_silhouette.push((c, mean));
        match &best {
            Some(b) if mean == b.3 => tie_breaks.push(format!(
                "cluster count {c} ties {} on mean silhouette; kept {}",
                b.0, b.0
            )),
            Some(b) if mean <= b.3 => {}
            _ => best = Some((c, assignment, scores, mean)),
        }
    }
    let (n_macro, assignment, scores, _) = best.expect("at least one candidate count");
    let mut prototypes = vec![usize::MAX; n_macro];
    for i in 0..n {
        let m = assignment[i];
        let p = prototypes[m];
        if p == usize::MAX || scores[i] > scores[p] {
            prototypes[m] = i;
        } else if scores[i] == scores[p] {
            tie_breaks.push(format!(
                "macro {m}: {} ties {} on silhouette; kept {}",
                motif_ids[i], motif_ids[p], motif_ids[p]
            ));
        }
    }
    Ok(PrototypeSet {
        n_macro,
        motif_ids,
        assignment,
        prototypes,
        silhouette: scores,
        mean_silhouette,
        tie_breaks,
    })
}

/// Per-frame macro label from the prototypes' masks. Overlaps go to the
/// prototype with the higher silhouette (lower macro id on ties); uncovered
/// frames get `set.n_macro` as background.
pub fn prototype_labels(set: &PrototypeSet, catalog: &MotifCatalog) -> Result<Vec<usize>> {
    let background = set.n_macro;
    let mut labels = vec![background; catalog.n_frames];
    let mut order: Vec<usize> = (0..set.prototypes.len()).collect();
    order.sort_by(|&a, &b| {
        set.silhouette[set.prototypes[b]]
            .total_cmp(&set.silhouette[set.prototypes[a]])
            .then(a.cmp(&b))
    });
    // Assign from weakest to strongest so stronger prototypes overwrite.
    for &m in order.iter().rev() {
        let id = set.motif_ids[set.prototypes[m]];
        let mask = catalog
            .masks
            .iter()
            .find(|x| x.id == id)
            .ok_or_else(|| Error::Data(format!("prototype {id} is not in the catalog")))?;
        for (t, l) in labels.iter_mut().enumerate() {
            if mask.get(t) {
                *l = m;
            }
        }
    }
    Ok(labels)
}

#[derive(Serialize, Deserialize)]
struct CatalogIndex {
    k_min: usize,
    k_max: usize,
    n_frames: usize,
    series: Vec<(String, usize)>,
    skipped: Vec<(usize, String)>,
    motifs: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    id: MotifId,
    frames: usize,
}

/// Writes masks as a bitset binary (magic, counts, little-endian words) next
/// to a JSON index.
pub fn write_catalog(bin_path: &Path, json_path: &Path, cat: &MotifCatalog) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CATALOG_MAGIC);
    buf.extend_from_slice(&(cat.masks.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(cat.n_frames as u64).to_le_bytes());
    for m in &cat.masks {
        for w in &m.words {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    std::fs::write(bin_path, &buf).map_err(|e| Error::io(bin_path, e))?;
    let index = CatalogIndex {
        k_min: cat.k_min,
        k_max: cat.k_max,
        n_frames: cat.n_frames,
        series: cat.series.clone(),
        skipped: cat.skipped.clone(),
        motifs: cat
            .masks
            .iter()
            .map(|m| IndexEntry {
                id: m.id,
                frames: m.count(),
            })
            .collect(),
    };
    let mut f = std::fs::File::create(json_path).map_err(|e| Error::io(json_path, e))?;
    serde_json::to_writer_pretty(&mut f, &index)?;
    f.write_all(b"\n").map_err(|e| Error::io(json_path, e))
}

pub fn read_catalog(bin_path: &Path, json_path: &Path) -> Result<MotifCatalog> {
    let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let index: CatalogIndex = serde_json::from_str(&text)?;
    let mut bytes = Vec::new();
    std::fs::File::open(bin_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(bin_path, e))?;
    let corrupt = |msg: &str| Error::Corrupt {
        path: bin_path.to_path_buf(),
        msg: msg.into(),
    };
    if bytes.len() < 24 || &bytes[..8] != CATALOG_MAGIC {
        return Err(corrupt("missing catalog header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (n_masks, n_frames) = (word(8) as usize, word(16) as usize);
    if n_masks != index.motifs.len() || n_frames != index.n_frames {
        return Err(corrupt("header disagrees with the JSON index"));
    }
    let per = n_frames.div_ceil(64);
    if bytes.len() != 24 + n_masks * per * 8 {
        return Err(corrupt("unexpected file length"));
    }
    let mut masks = Vec::with_capacity(n_masks);
    for (m, entry) in index.motifs.iter().enumerate() {
        let base = 24 + m * per * 8;
        let words = (0..per).map(|w| word(base + w * 8)).collect();
        let mask = MotifMask {
            id: entry.id,
            len: n_frames,
            words,
        };
        if mask.count() != entry.frames {
            return Err(corrupt(&format!("mask {} frame count mismatch", entry.id)));
        }
        masks.push(mask);
    }
    Ok(MotifCatalog {
        masks,
        k_min: index.k_min,
        k_max: index.k_max,
        n_frames,
        series: index.series,
        skipped: index.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn mask(bits: &[u8]) -> MotifMask {
        let b: Vec<bool> = bits.iter().map(|&x| x == 1).collect();
        MotifMask::from_bools(MotifId { k: 0, state: 0 }, &b)
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(
            jaccard_distance(&mask(&[1, 1, 0, 0]), &mask(&[1, 1, 0, 0])).unwrap(),
            0.0
        );
        assert_eq!(
            jaccard_distance(&mask(&[1, 1, 0, 0]), &mask(&[0, 0, 1, 0])).unwrap(),
            1.0
        );
        let d = jaccard_distance(&mask(&[1, 1, 0, 0]), &mask(&[1, 0, 1, 0])).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            jaccard_distance(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(),
            0.0
        );
        assert!(jaccard_distance(&mask(&[0, 0]), &mask(&[0])).is_err());
    }

    #[test]
    fn clustering_base_cases() {
        let d = array![[0.0, 0.4], [0.4, 0.0]];
        let dg = hierarchical_cluster(&d.view()).unwrap();
        assert_eq!(
            dg.merges,
            vec![Merge {
                a: 0,
                b: 1,
                height: 0.4,
                size: 2
            }]
        );
        let d = array![[0.0, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.0]];
        let dg = hierarchical_cluster(&d.view()).unwrap();
        assert_eq!(
            (dg.merges[0].a, dg.merges[0].b, dg.merges[0].height),
            (0, 2, 0.0)
        );
        assert!(hierarchical_cluster(&array![[0.0, 1.0], [0.5, 0.0]].view()).is_err());
        assert!(hierarchical_cluster(&array![[0.0, f64::NAN], [f64::NAN, 0.0]].view()).is_err());
    }

    #[test]
    fn silhouette_conventions() {
        let d = array![
            [0.0, 0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0],
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0]
        ];
        let (s, m) = silhouette(&d.view(), &[0, 0, 1, 1]).unwrap();
        assert_eq!(s, vec![1.0; 4]);
        assert_eq!(m, 1.0);
        let (s, _) = silhouette(&d.view(), &[0, 1, 2, 3]).unwrap();
        assert_eq!(s, vec![0.0; 4]);
        assert!(silhouette(&d.view(), &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn two_duplicated_groups_give_two_macros() {
        let groups = [[1u8, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1]];
        let masks: Vec<MotifMask> = (0..6)
            .map(|i| {
                let mut m = mask(&groups[i % 2]);
                m.id = MotifId { k: 3, state: i };
                m
            })
            .collect();
        let cat = MotifCatalog {
            n_frames: 6,
            masks,
            k_min: 3,
            k_max: 3,
            series: vec![("s".into(), 6)],
            skipped: vec![],
        };
        let set = select_prototypes(&cat, None).unwrap();
        assert_eq!(set.n_macro, 2);
        let protos: Vec<usize> = set.prototypes.iter().map(|&p| p % 2).collect();
        assert_eq!(protos, vec![0, 1]);
        assert_eq!(set.prototypes, vec![0, 1]);
        let labels = prototype_labels(&set, &cat).unwrap();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn overlap_goes_to_higher_silhouette_and_empty_set_is_background() {
        let a = MotifMask::from_bools(MotifId { k: 2, state: 0 }, &[true, true, false]);
        let b = MotifMask::from_bools(MotifId { k: 3, state: 1 }, &[false, true, true]);
        let cat = MotifCatalog {
            masks: vec![a.clone(), b.clone()],
            k_min: 2,
            k_max: 3,
            n_frames: 3,
            series: vec![("s".into(), 3)],
            skipped: vec![],
        };
        let set = PrototypeSet {
            n_macro: 2,
            motif_ids: vec![a.id, b.id],
            assignment: vec![0, 1],
            prototypes: vec![0, 1],
            silhouette: vec![0.3, 0.8],
            mean_silhouette: vec![],
            tie_breaks: vec![],
        };
        assert_eq!(prototype_labels(&set, &cat).unwrap(), vec![0, 1, 1]);
        let none = PrototypeSet::empty();
        assert_eq!(prototype_labels(&none, &cat).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn catalog_round_trip_and_corruption() {
        let labelings = vec![(2, vec![0, 1, 1, 0, 1]), (3, vec![2, 1, 0, 0, 2])];
        let cat = MotifCatalog::from_labelings(&labelings, 2, 3, vec![("a".into(), 5)]).unwrap();
        assert_eq!(cat.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        let (bin, json) = (dir.path().join("c.bin"), dir.path().join("c.json"));
        write_catalog(&bin, &json, &cat).unwrap();
        assert_eq!(read_catalog(&bin, &json).unwrap(), cat);
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[24] ^= 1;
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(
            read_catalog(&bin, &json),
            Err(Error::Corrupt { .. })
        ));
    }
}
