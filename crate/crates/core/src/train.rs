//! Optimisation loops and evaluation: multi-task pretraining, classifier
//! fine-tuning, F1 and NMI scores, and the repeated-split grid search.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use log::warn;
use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{window_at, AnnotationTrack, PoseSequence, Window, WindowingConfig};
use crate::model::{
    classify_loss_and_grad, decoder_loss_and_grad, embed_sequence, ssl_loss_and_grad, Classifier,
    EncoderConfig, EncoderParams, PretextHeads, TaskStats, TensorSet,
};
use crate::ssl::{build_batch, SslConfig, Task};
use crate::{seeded_rng, Error, Result, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Examples per task per step (pretraining) or frames per step (fine-tuning).
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub label_smoothing: f64,
    pub freeze_encoder: bool,
    /// Fraction of sequences held out for validation during pretraining.
    pub val_fraction: f64,
    /// Held-out examples per task evaluated at the end of each epoch.
    pub val_examples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            steps_per_epoch: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            label_smoothing: 0.1,
            freeze_encoder: false,
            val_fraction: 0.1,
            val_examples: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad("label_smoothing must be in [0, 0.5)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad("adam betas must be in [0, 1) and eps positive");
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer over any tensor set.
#[derive(Clone, Debug)]
pub struct Adam<P> {
    pub lr: f64,
    pub cfg: AdamConfig,
    t: i32,
    m: P,
    v: P,
}

impl<P: TensorSet + Clone> Adam<P> {
    pub fn new(params: &P, lr: f64, cfg: AdamConfig) -> Self {
        let mut m = params.clone();
        m.fill(0.0);
        let v = m.clone();
        Adam {
            lr,
            cfg,
            t: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let g = grads.tensors();
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(g.iter());
        for (((p, m), v), g) in tensors {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: String,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

fn records(epoch: usize, split: &str, stats: &[TaskStats; 4]) -> Vec<EpochRecord> {
    Task::ALL
        .iter()
        .map(|t| {
            let s = stats[t.index()];
            EpochRecord {
                epoch,
                task: t.name().into(),
                split: split.into(),
                loss: s.mean_loss(),
                accuracy: s.accuracy(),
            }
        })
        .collect()
}

/// Training curves as CSV: `epoch,task,split,loss,accuracy`.
pub fn write_curves_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub encoder: EncoderParams,
    pub heads: PretextHeads,
    pub history: Vec<EpochRecord>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

impl PretrainOutcome {
    /// Mean held-out accuracy per task over the last `last` epochs.
    pub fn val_accuracy(&self, last: usize) -> BTreeMap<String, f64> {
        mean_accuracy(&self.history, "val", last)
    }
}

fn mean_accuracy(history: &[EpochRecord], split: &str, last: usize) -> BTreeMap<String, f64> {
    let max_epoch = history
        .iter()
        .filter(|r| r.split == split)
        .map(|r| r.epoch)
        .max();
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    if let Some(max_epoch) = max_epoch {
        let lo = (max_epoch + 1).saturating_sub(last.max(1));
        for r in history.iter().filter(|r| r.split == split && r.epoch >= lo) {
            let e = acc.entry(r.task.clone()).or_default();
            e.0 += r.accuracy;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

/// Splits sources into disjoint train and validation sets. The validation
/// side is dropped (empty) when it would hold fewer than two sequences, since
/// swap examples need a donor.
pub fn split_sources(
    sources: &[PoseSequence],
    val_fraction: f64,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..sources.len()).collect();
    idx.shuffle(rng);
    let n_val = (val_fraction * sources.len() as f64).round() as usize;
    if n_val < 2 || sources.len() - n_val < 2 {
        idx.sort_unstable();
        return (idx, Vec::new());
    }
    let mut val = idx.split_off(sources.len() - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

fn eval_ssl(
    enc: &EncoderParams,
    heads: &PretextHeads,
    sources: &[PoseSequence],
    windowing: &WindowingConfig,
    ssl: &SslConfig,
    per_task: usize,
    smoothing: f64,
    rng: &mut Rng,
) -> Result<[TaskStats; 4]> {
    let batch = build_batch(sources, windowing, ssl, rng, per_task)?;
    Ok(ssl_loss_and_grad(enc, heads, &batch, smoothing, false)?
        .0
        .per_task)
}

/// Multi-task self-supervised pretraining. Each step draws one batch per
/// task and applies one update on the summed task losses. A `val_fraction`
/// share of the sequences is held out and fresh held-out examples are drawn
/// every epoch.
pub fn pretrain(
    encoder: EncoderParams,
    heads: PretextHeads,
    sources: &[PoseSequence],
    windowing: &WindowingConfig,
    cfg: &TrainConfig,
    ssl: &SslConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let (train_idx, val_idx) =
        split_sources(sources, cfg.val_fraction, &mut seeded_rng(cfg.seed, 1));
    let train: Vec<PoseSequence> = train_idx.iter().map(|&i| sources[i].clone()).collect();
    let val: Vec<PoseSequence> = val_idx.iter().map(|&i| sources[i].clone()).collect();
    pretrain_split(encoder, heads, &train, &val, windowing, cfg, ssl)
}

/// Pretraining on an explicit split; `val` may be empty.
pub fn pretrain_split(
    encoder: EncoderParams,
    heads: PretextHeads,
    train: &[PoseSequence],
    val: &[PoseSequence],
    windowing: &WindowingConfig,
    cfg: &TrainConfig,
    ssl: &SslConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    ssl.validate()?;
    if train.len() < 2 {
        return Err(Error::Config(
            "pretraining needs at least 2 source sequences".into(),
        ));
    }
    if val.len() == 1 {
        return Err(Error::Config(
            "a validation split needs at least 2 sequences".into(),
        ));
    }
    if windowing.window_size != encoder.config.window_size {
        return Err(Error::Config(format!(
            "window_size {} does not match model window {}",
            windowing.window_size, encoder.config.window_size
        )));
    }
    let mut rng = seeded_rng(cfg.seed, 2);
    let mut val_rng = seeded_rng(cfg.seed, 3);

    let mut enc = encoder;
    let mut heads = heads;
    let mut opt_enc = Adam::new(&enc, cfg.learning_rate, cfg.adam);
    let mut opt_heads = Adam::new(&heads, cfg.learning_rate, cfg.adam);
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut stats = [TaskStats::default(); 4];
        for step in 0..cfg.steps_per_epoch {
            let batch = build_batch(train, windowing, ssl, &mut rng, cfg.batch_size)?;
            let global = epoch * cfg.steps_per_epoch + step;
            let (loss, grads) = ssl_loss_and_grad(&enc, &heads, &batch, cfg.label_smoothing, true)
                .map_err(|e| Error::Training {
                    step: global,
                    msg: e.to_string(),
                })?;
            let (genc, gheads) = grads.expect("gradients requested");
            if !genc.all_finite() || !gheads.all_finite() {
                return Err(Error::Training {
                    step: global,
                    msg: "non-finite gradient".into(),
                });
            }
            if !cfg.freeze_encoder {
                opt_enc.step(&mut enc, &genc);
            }
            opt_heads.step(&mut heads, &gheads);
            for (acc, s) in stats.iter_mut().zip(loss.per_task) {
                acc.loss_sum += s.loss_sum;
                acc.correct += s.correct;
                acc.count += s.count;
            }
        }
        history.extend(records(epoch, "train", &stats));
        if !val.is_empty() {
            let s = eval_ssl(
                &enc,
                &heads,
                val,
                windowing,
                ssl,
                cfg.val_examples,
                cfg.label_smoothing,
                &mut val_rng,
            )?;
            history.extend(records(epoch, "val", &s));
        }
    }
    Ok(PretrainOutcome {
        encoder: enc,
        heads,
        history,
        train_ids: train.iter().map(|s| s.id.clone()).collect(),
        val_ids: val.iter().map(|s| s.id.clone()).collect(),
    })
}

/// Per-task accuracy of a model on fresh examples drawn from `sources`.
pub fn ssl_accuracy(
    enc: &EncoderParams,
    heads: &PretextHeads,
    sources: &[PoseSequence],
    windowing: &WindowingConfig,
    ssl: &SslConfig,
    per_task: usize,
    rng: &mut Rng,
) -> Result<BTreeMap<String, f64>> {
    let s = eval_ssl(enc, heads, sources, windowing, ssl, per_task, 0.0, rng)?;
    Ok(Task::ALL
        .iter()
        .map(|t| (t.name().to_string(), s[t.index()].accuracy()))
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: BTreeMap<usize, ClassScore>,
    /// Unweighted mean F1 over the scored classes.
    pub macro_f1: f64,
    pub excluded: Option<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro F1. Scored classes are those present in either
/// labeling, minus `excluded`. Classes never present in the truth score 0.
pub fn eval_f1(pred: &[usize], truth: &[usize], excluded: Option<usize>) -> Result<F1Report> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let classes: BTreeSet<usize> = pred
        .iter()
        .chain(truth)
        .copied()
        .filter(|&c| Some(c) != excluded)
        .collect();
    let mut per_class = BTreeMap::new();
    for &c in &classes {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fn_ == 0 {
            warn!("class {c} has no true frames; scored as F1 = 0");
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        per_class.insert(
            c,
            ClassScore {
                precision,
                recall,
                f1,
                support: tp + fn_,
            },
        );
    }
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|s| s.f1).sum::<f64>() / per_class.len() as f64
    };
    Ok(F1Report {
        per_class,
        macro_f1,
        excluded,
    })
}

impl F1Report {
    /// Macro F1 over the scored classes that are not in `mask`.
    pub fn macro_without(&self, mask: &BTreeSet<usize>) -> f64 {
        let kept: Vec<f64> = self
            .per_class
            .iter()
            .filter(|(c, _)| !mask.contains(c))
            .map(|(_, s)| s.f1)
            .collect();
        if kept.is_empty() {
            0.0
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalised by the arithmetic mean of the two entropies.
/// Zero when either labeling is constant.
pub fn eval_nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Undefined("NMI of empty labelings".into()));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((mi / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}

/// One labeled recording for classifier training.
#[derive(Clone, Debug)]
pub struct LabeledSequence {
    pub seq: PoseSequence,
    pub track: AnnotationTrack,
}

impl LabeledSequence {
    pub fn new(seq: PoseSequence, track: AnnotationTrack) -> Result<Self> {
        if seq.len() != track.len() {
            return Err(Error::LengthMismatch {
                left: seq.len(),
                right: track.len(),
            });
        }
        Ok(LabeledSequence { seq, track })
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub classifier: Classifier,
    pub history: Vec<EpochRecord>,
    pub train_f1: F1Report,
    /// Macro F1 on training frames, background and classes absent from the
    /// training labels excluded.
    pub train_macro_f1: f64,
    pub masked: BTreeSet<usize>,
}

/// Predicted class for every frame of a sequence.
pub fn predict_sequence(
    clf: &Classifier,
    seq: &PoseSequence,
    windowing: &WindowingConfig,
) -> Result<Vec<usize>> {
    let e = embed_sequence(&clf.encoder, seq, windowing)?;
    Ok(clf.predict_embeddings(&e.embeddings.view()))
}

/// F1 of a classifier over every frame of `data`, background excluded.
pub fn evaluate_classifier(
    clf: &Classifier,
    data: &[LabeledSequence],
    windowing: &WindowingConfig,
) -> Result<F1Report> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for d in data {
        pred.extend(predict_sequence(clf, &d.seq, windowing)?);
        truth.extend_from_slice(&d.track.labels);
    }
    eval_f1(&pred, &truth, Some(clf.background))
}

/// Trains the linear decoder, and the encoder unless `freeze_encoder`, on
/// uniformly sampled labeled frames. With a frozen encoder the embeddings are
/// computed once and only the decoder is optimised.
pub fn finetune_classifier(
    clf: Classifier,
    data: &[LabeledSequence],
    windowing: &WindowingConfig,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no labeled sequences".into()));
    }
    for d in data {
        if d.track.n_classes() != clf.n_classes() {
            return Err(Error::Config(format!(
                "{} has {} classes, classifier has {}",
                d.seq.id,
                d.track.n_classes(),
                clf.n_classes()
            )));
        }
    }
    let frames: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(s, d)| (0..d.seq.len()).map(move |t| (s, t)))
        .collect();
    if frames.is_empty() {
        return Err(Error::Config("labeled sequences are empty".into()));
    }
    let present: BTreeSet<usize> = data
        .iter()
        .flat_map(|d| d.track.labels.iter().copied())
        .collect();
    let masked: BTreeSet<usize> = (0..clf.n_classes())
        .filter(|c| *c != clf.background && !present.contains(c))
        .collect();
    for c in &masked {
        warn!(
            "class {} ({}) absent from training labels; masked from macro F1",
            c, clf.names[*c]
        );
    }

    let mut rng = seeded_rng(cfg.seed, 4);
    let mut clf = clf;
    let mut opt_dec = Adam::new(&clf.decoder, cfg.learning_rate, cfg.adam);
    let mut opt_enc = Adam::new(&clf.encoder, cfg.learning_rate, cfg.adam);
    let frozen: Option<Array2<f64>> = if cfg.freeze_encoder {
        let parts: Vec<Array2<f64>> = data
            .iter()
            .map(|d| embed_sequence(&clf.encoder, &d.seq, windowing).map(|e| e.embeddings))
            .collect::<Result<_>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Some(concatenate(Axis(0), &views).map_err(|e| Error::Matrix(e.to_string()))?)
    } else {
        None
    };

    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let picks: Vec<usize> = (0..cfg.batch_size)
                .map(|_| rng.random_range(0..frames.len()))
                .collect();
            let labels: Vec<usize> = picks
                .iter()
                .map(|&i| {
                    let (s, t) = frames[i];
                    data[s].track.labels[t]
                })
                .collect();
            let global = epoch * cfg.steps_per_epoch + step;
            let wrap = |e: Error| Error::Training {
                step: global,
                msg: e.to_string(),
            };
            if let Some(emb) = &frozen {
                let rows = emb.select(Axis(0), &picks);
                let (loss, _, gdec) =
                    decoder_loss_and_grad(&clf.decoder, &rows.view(), &labels, cfg.label_smoothing)
                        .map_err(wrap)?;
                opt_dec.step(&mut clf.decoder, &gdec);
                loss_sum += loss;
            } else {
                let windows: Vec<Window> = picks
                    .iter()
                    .map(|&i| {
                        let (s, t) = frames[i];
                        window_at(&data[s].seq, windowing, t)
                    })
                    .collect();
                let refs: Vec<&Window> = windows.iter().collect();
                let (loss, genc, gdec) =
                    classify_loss_and_grad(&clf, &refs, &labels, cfg.label_smoothing, true)
                        .map_err(wrap)?;
                opt_dec.step(&mut clf.decoder, &gdec);
                opt_enc.step(&mut clf.encoder, &genc.expect("encoder gradient requested"));
                loss_sum += loss;
            }
        }
        history.push(EpochRecord {
            epoch,
            task: "classify".into(),
            split: "train".into(),
            loss: loss_sum / cfg.steps_per_epoch as f64,
            accuracy: f64::NAN,
        });
    }

    let train_f1 = match &frozen {
        Some(emb) => {
            let pred = clf.predict_embeddings(&emb.view());
            let truth: Vec<usize> = data
                .iter()
                .flat_map(|d| d.track.labels.iter().copied())
                .collect();
            eval_f1(&pred, &truth, Some(clf.background))?
        }
        None => evaluate_classifier(&clf, data, windowing)?,
    };
    let train_macro_f1 = train_f1.macro_without(&masked);
    Ok(FinetuneOutcome {
        classifier: clf,
        history,
        train_f1,
        train_macro_f1,
        masked,
    })
}

/// One grid-search candidate. `epochs` overrides the harness default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub candidates: Vec<Candidate>,
    pub n_splits: usize,
    pub val_fraction: f64,
    pub tune_epochs: usize,
    pub score_window: usize,
    pub retrain_best: bool,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            candidates: Vec::new(),
            n_splits: 4,
            val_fraction: 0.10,
            tune_epochs: 100,
            score_window: 10,
            retrain_best: true,
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() || self.candidates.len() > 12 {
            return Err(Error::Config(
                "between 1 and 12 candidates are required".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must be in (0, 1)".into()));
        }
        if self.n_splits == 0 || self.score_window == 0 {
            return Err(Error::Config(
                "n_splits and score_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub candidate: String,
    pub split: usize,
    pub epoch: usize,
    pub task: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub name: String,
    /// Mean held-out accuracy over tasks, splits and the scoring window.
    pub score: Option<f64>,
    pub split_scores: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuneReport {
    /// Successful candidates, best first, then failed ones.
    pub ranking: Vec<CandidateResult>,
    pub best: String,
    pub traces: Vec<FoldTrace>,
}

fn score_candidate(
    cand: &Candidate,
    ci: usize,
    tune: &TuneConfig,
    sources: &[PoseSequence],
    ssl: &SslConfig,
    traces: &mut Vec<FoldTrace>,
) -> Result<Vec<f64>> {
    let windowing = WindowingConfig::new(cand.encoder.window_size, 0)?;
    let epochs = cand.epochs.unwrap_or(tune.tune_epochs);
    let mut scores = Vec::new();
    for split in 0..tune.n_splits {
        let split_seed = tune.seed ^ ((ci as u64) << 32) ^ split as u64;
        let mut rng = seeded_rng(split_seed, 5);
        let mut idx: Vec<usize> = (0..sources.len()).collect();
        idx.shuffle(&mut rng);
        let n_val = ((tune.val_fraction * sources.len() as f64).round() as usize).max(2);
        if sources.len() < n_val + 2 {
            return Err(Error::Config(format!(
                "{} sequences cannot be split into train and validation sets of >= 2",
                sources.len()
            )));
        }
        let val: Vec<PoseSequence> = idx[..n_val].iter().map(|&i| sources[i].clone()).collect();
        let train: Vec<PoseSequence> = idx[n_val..].iter().map(|&i| sources[i].clone()).collect();
        let mut init_rng = seeded_rng(split_seed, 6);
        let enc = EncoderParams::init(&cand.encoder, &mut init_rng)?;
        let heads = PretextHeads::init(&cand.encoder, &mut init_rng);
        let cfg = TrainConfig {
            epochs,
            seed: split_seed,
            ..cand.train.clone()
        };
        let outcome = pretrain_split(enc, heads, &train, &val, &windowing, &cfg, ssl)?;
        let mut per_epoch: Vec<(usize, BTreeMap<String, f64>)> = Vec::new();
        if epochs == 0 {
            let mut eval_rng = seeded_rng(split_seed, 7);
            per_epoch.push((
                0,
                ssl_accuracy(
                    &outcome.encoder,
                    &outcome.heads,
                    &val,
                    &windowing,
                    ssl,
                    cfg.val_examples,
                    &mut eval_rng,
                )?,
            ));
        } else {
            let lo = epochs.saturating_sub(tune.score_window);
            for epoch in lo..epochs {
                let accs = outcome
                    .history
                    .iter()
                    .filter(|r| r.split == "val" && r.epoch == epoch)
                    .map(|r| (r.task.clone(), r.accuracy))
                    .collect();
                per_epoch.push((epoch, accs));
            }
        }
        let mut total = 0.0;
        let mut count = 0;
        for (epoch, accs) in &per_epoch {
            for (task, acc) in accs {
                traces.push(FoldTrace {
                    candidate: cand.name.clone(),
                    split,
                    epoch: *epoch,
                    task: task.clone(),
                    accuracy: *acc,
                });
                total += acc;
                count += 1;
            }
        }
        scores.push(total / count as f64);
    }
    Ok(scores)
}

/// Repeated random sub-sampling search over candidate configurations. The
/// winner is optionally retrained on all sources.
pub fn grid_search(
    tune: &TuneConfig,
    sources: &[PoseSequence],
    ssl: &SslConfig,
) -> Result<(TuneReport, Option<PretrainOutcome>)> {
    tune.validate()?;
    let mut traces = Vec::new();
    let mut results = Vec::new();
    for (ci, cand) in tune.candidates.iter().enumerate() {
        let r = match score_candidate(cand, ci, tune, sources, ssl, &mut traces) {
            Ok(split_scores) => CandidateResult {
                name: cand.name.clone(),
                score: Some(split_scores.iter().sum::<f64>() / split_scores.len() as f64),
                split_scores,
                error: None,
            },
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                warn!("candidate {} failed: {e}", cand.name);
                CandidateResult {
                    name: cand.name.clone(),
                    score: None,
                    split_scores: Vec::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        results.push(r);
    }
    // Stable sort keeps candidate order among equal scores.
    results.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let best = results
        .first()
        .filter(|r| r.score.is_some())
        .ok_or_else(|| Error::Training {
            step: 0,
            msg: "every candidate failed".into(),
        })?
        .name
        .clone();
    let retrained = if tune.retrain_best {
        let cand = tune
            .candidates
            .iter()
            .find(|c| c.name == best)
            .expect("ranked candidate exists");
        let windowing = WindowingConfig::new(cand.encoder.window_size, 0)?;
        let mut rng = seeded_rng(tune.seed, 8);
        let enc = EncoderParams::init(&cand.encoder, &mut rng)?;
        let heads = PretextHeads::init(&cand.encoder, &mut rng);
        let cfg = TrainConfig {
            epochs: cand.epochs.unwrap_or(tune.tune_epochs),
            val_fraction: 0.0,
            ..cand.train.clone()
        };
        Some(pretrain(enc, heads, sources, &windowing, &cfg, ssl)?)
    } else {
        None
    };
    Ok((
        TuneReport {
            ranking: results,
            best,
            traces,
        },
        retrained,
    ))
}

/// Per-fold traces as CSV: `candidate,split,epoch,task,accuracy`.
pub fn write_traces_csv(path: &Path, traces: &[FoldTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for t in traces {
        w.serialize(t).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Machine-readable summary of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_accuracy: BTreeMap<String, f64>,
    pub f1: Option<F1Report>,
    pub macro_f1: Option<f64>,
    pub nmi: Option<f64>,
    pub curves: Vec<EpochRecord>,
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }
}

/// Accuracy per task from the final epoch of a split in a history.
pub fn final_accuracy(history: &[EpochRecord], split: &str) -> BTreeMap<String, f64> {
    mean_accuracy(history, split, 1)
}
