use ndarray::{s, Array1, Array2, ArrayView2};
use rayon::prelude::*;

use super::backbone::stack_windows;
use super::{join, EncoderConfig, EncoderParams, Linear, Mlp, TensorSet, TensorView};
use crate::dataset::Window;
use crate::ssl::{soft_target, SslExample, Task};
use crate::{Error, Result, Rng};

/// Examples per gradient shard. Shards are reduced in index order, so results
/// do not depend on the thread count.
const SHARD: usize = 4;

/// One binary perceptron head per pretext task, indexed by [`Task::index`].
/// The NWP head reads the concatenation of both pooled windows.
#[derive(Clone, Debug, PartialEq)]
pub struct PretextHeads {
    pub heads: Vec<Mlp>,
}

impl PretextHeads {
    pub fn init(config: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = config.embed_dim;
        let heads = Task::ALL
            .iter()
            .map(|t| Mlp::new(d * t.arity(), config.mlp_hidden, 1, rng))
            .collect();
        PretextHeads { heads }
    }

    pub fn head(&self, task: Task) -> &Mlp {
        &self.heads[task.index()]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }
}

impl TensorSet for PretextHeads {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        for (t, h) in Task::ALL.iter().zip(&self.heads) {
            h.visit(&join(prefix, t.name()), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for h in &mut self.heads {
            h.visit_mut(out);
        }
    }
}

/// Column-wise max over the frame axis, with the winning row of each column
/// (first row on ties).
pub fn max_pool(features: &ArrayView2<f64>) -> (Array1<f64>, Vec<usize>) {
    let d = features.ncols();
    let mut best = Array1::from_elem(d, f64::NEG_INFINITY);
    let mut arg = vec![0; d];
    for (r, row) in features.rows().into_iter().enumerate() {
        for c in 0..d {
            if row[c] > best[c] {
                best[c] = row[c];
                arg[c] = r;
            }
        }
    }
    (best, arg)
}

fn pool_concat(windows: &[ArrayView2<f64>]) -> (Array2<f64>, Vec<Vec<usize>>) {
    let d = windows.first().map(|w| w.ncols()).unwrap_or(0);
    let mut pooled = Array2::zeros((1, d * windows.len()));
    let mut args = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let (p, a) = max_pool(w);
        pooled.slice_mut(s![0, i * d..(i + 1) * d]).assign(&p);
        args.push(a);
    }
    (pooled, args)
}

/// Raw logit(s) of a head over one or two windows' features.
pub fn head_forward(head: &Mlp, windows: &[ArrayView2<f64>]) -> Result<Array1<f64>> {
    let (pooled, _) = pool_concat(windows);
    if pooled.ncols() != head.fc1.n_in() {
        return Err(Error::Dimension {
            expected: head.fc1.n_in(),
            got: pooled.ncols(),
        });
    }
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite features".into()));
    }
    Ok(head.forward(&pooled.view()).0.row(0).to_owned())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit against a soft target.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

impl TaskStats {
    pub fn mean_loss(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss_sum / self.count as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SslLoss {
    /// Sum over tasks of each task's mean loss.
    pub total: f64,
    pub per_task: [TaskStats; 4],
}

type SslGrads = (EncoderParams, PretextHeads);

fn ssl_example(
    enc: &EncoderParams,
    heads: &PretextHeads,
    ex: &SslExample,
    index: usize,
    smoothing: f64,
    weight: f64,
    grads: Option<&mut SslGrads>,
) -> Result<(f64, bool)> {
    let n = enc.config.window_size;
    let refs: Vec<&Window> = ex.windows.iter().collect();
    let x = stack_windows(&refs, n)?;
    let arity = refs.len();
    let (out, cache) = enc.forward(&x.view(), arity)?;
    let views: Vec<ArrayView2<f64>> = (0..arity)
        .map(|w| out.slice(s![w * n..(w + 1) * n, ..]))
        .collect();
    let (pooled, args) = pool_concat(&views);
    let head = heads.head(ex.task);
    let (z, hcache) = head.forward(&pooled.view());
    let z = z[[0, 0]];
    let y = soft_target(ex.label, smoothing);
    let loss = bce_with_logit(z, y);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { example: index });
    }
    let correct = (z > 0.0) == (ex.label == 1);

    if let Some((genc, gheads)) = grads {
        let dz = Array2::from_elem((1, 1), (sigmoid(z) - y) * weight);
        let dpooled = head.backward(&hcache, &dz.view(), &mut gheads.heads[ex.task.index()]);
        let d = enc.config.embed_dim;
        let mut d_out = Array2::zeros(out.raw_dim());
        for (w, arg) in args.iter().enumerate() {
            for (c, &r) in arg.iter().enumerate() {
                d_out[[w * n + r, c]] += dpooled[[0, w * d + c]];
            }
        }
        enc.backward(&cache, &d_out.view(), genc);
    }
    Ok((loss, correct))
}

/// Summed per-task mean binary cross-entropy over a mixed batch, with
/// accuracies and, when `with_grad`, exact gradients for the shared backbone
/// and every head.
pub fn ssl_loss_and_grad(
    enc: &EncoderParams,
    heads: &PretextHeads,
    examples: &[SslExample],
    smoothing: f64,
    with_grad: bool,
) -> Result<(SslLoss, Option<SslGrads>)> {
    if examples.is_empty() {
        return Err(Error::Generation("empty batch".into()));
    }
    let mut counts = [0usize; 4];
    for ex in examples {
        counts[ex.task.index()] += 1;
    }

    type ShardOut = (Vec<(Task, f64, bool)>, Option<SslGrads>);
    let shards: Vec<Result<ShardOut>> = examples
        .par_chunks(SHARD)
        .enumerate()
        .map(|(si, chunk)| {
            let mut grads = with_grad.then(|| (enc.zeros_like(), heads.zeros_like()));
            let mut rows = Vec::with_capacity(chunk.len());
            for (j, ex) in chunk.iter().enumerate() {
                let weight = 1.0 / counts[ex.task.index()] as f64;
                let (loss, correct) = ssl_example(
                    enc,
                    heads,
                    ex,
                    si * SHARD + j,
                    smoothing,
                    weight,
                    grads.as_mut(),
                )?;
                rows.push((ex.task, loss, correct));
            }
            Ok((rows, grads))
        })
        .collect();

    let mut stats = SslLoss::default();
    let mut total: Option<SslGrads> = None;
    for shard in shards {
        let (rows, grads) = shard?;
        for (task, loss, correct) in rows {
            let s = &mut stats.per_task[task.index()];
            s.loss_sum += loss;
            s.count += 1;
            s.correct += usize::from(correct);
        }
        if let Some((ge, gh)) = grads {
            match total.as_mut() {
                None => total = Some((ge, gh)),
                Some((te, th)) => {
                    te.add_scaled(&ge, 1.0);
                    th.add_scaled(&gh, 1.0);
                }
            }
        }
    }
    stats.total = stats.per_task.iter().map(TaskStats::mean_loss).sum();
    Ok((stats, total))
}

/// Linear frame classifier over the backbone's target-frame embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub encoder: EncoderParams,
    pub decoder: Linear,
    pub names: Vec<String>,
    pub background: usize,
}

impl Classifier {
    pub fn new(
        encoder: EncoderParams,
        names: Vec<String>,
        background: usize,
        rng: &mut Rng,
    ) -> Self {
        let decoder = Linear::xavier(encoder.config.embed_dim, names.len(), rng);
        Classifier {
            encoder,
            decoder,
            names,
            background,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    pub fn predict_embeddings(&self, embeddings: &ArrayView2<f64>) -> Vec<usize> {
        argmax_rows(&self.decoder.forward(embeddings).view())
    }
}

/// Index of the largest entry of each row (lowest index on ties).
pub(crate) fn argmax_rows(m: &ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Softmax cross-entropy with smoothing `eps` spread uniformly over classes.
/// Returns per-row losses and `d loss / d logits` (unscaled).
fn softmax_xent(logits: &ArrayView2<f64>, labels: &[usize], eps: f64) -> (Vec<f64>, Array2<f64>) {
    let c = logits.ncols();
    let mut grad = logits.to_owned();
    let mut losses = Vec::with_capacity(labels.len());
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let mut loss = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            let target = eps / c as f64 + if j == y { 1.0 - eps } else { 0.0 };
            loss -= target * (*v - lse);
            *v = (*v - lse).exp() - target;
        }
        losses.push(loss);
    }
    (losses, grad)
}

/// Mean loss, accuracy count and decoder gradient for precomputed embeddings.
pub fn decoder_loss_and_grad(
    decoder: &Linear,
    embeddings: &ArrayView2<f64>,
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, usize, Linear)> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: embeddings.nrows(),
            right: labels.len(),
        });
    }
    let logits = decoder.forward(embeddings);
    let (losses, mut dlogits) = softmax_xent(&logits.view(), labels, smoothing);
    let b = labels.len() as f64;
    dlogits /= b;
    let mut g = Linear::zeros(decoder.n_in(), decoder.n_out());
    decoder.accumulate(embeddings, &dlogits.view(), &mut g);
    let correct = argmax_rows(&logits.view())
        .into_iter()
        .zip(labels)
        .filter(|(p, y)| p == *y)
        .count();
    let loss = losses.iter().sum::<f64>() / b;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { example: 0 });
    }
    Ok((loss, correct, g))
}

/// End-to-end classification loss over labeled windows. With
/// `train_encoder == false` the encoder gradient is not computed.
pub fn classify_loss_and_grad(
    clf: &Classifier,
    windows: &[&Window],
    labels: &[usize],
    smoothing: f64,
    train_encoder: bool,
) -> Result<(f64, Option<EncoderParams>, Linear)> {
    if windows.len() != labels.len() || windows.is_empty() {
        return Err(Error::LengthMismatch {
            left: windows.len(),
            right: labels.len(),
        });
    }
    let enc = &clf.encoder;
    let b = windows.len() as f64;
    type ShardOut = (f64, Option<EncoderParams>, Linear);
    let shards: Vec<Result<ShardOut>> = windows
        .par_chunks(SHARD)
        .zip(labels.par_chunks(SHARD))
        .map(|(ws, ys)| {
            let n = enc.config.window_size;
            let x = stack_windows(ws, n)?;
            let (out, cache) = enc.forward(&x.view(), ws.len())?;
            let mut emb = Array2::zeros((ws.len(), enc.config.embed_dim));
            for (i, w) in ws.iter().enumerate() {
                emb.row_mut(i).assign(&out.row(i * n + w.target_index));
            }
            let logits = clf.decoder.forward(&emb.view());
            let (losses, mut dlogits) = softmax_xent(&logits.view(), ys, smoothing);
            dlogits /= b;
            let mut gdec = Linear::zeros(clf.decoder.n_in(), clf.decoder.n_out());
            let demb = clf
                .decoder
                .backward(&emb.view(), &dlogits.view(), &mut gdec);
            let genc = if train_encoder {
                let mut d_out = Array2::zeros(out.raw_dim());
                for (i, w) in ws.iter().enumerate() {
                    d_out.row_mut(i * n + w.target_index).assign(&demb.row(i));
                }
                let mut g = enc.zeros_like();
                enc.backward(&cache, &d_out.view(), &mut g);
                Some(g)
            } else {
                None
            };
            Ok((losses.iter().sum::<f64>(), genc, gdec))
        })
        .collect();

    let mut loss = 0.0;
    let mut genc: Option<EncoderParams> = None;
    let mut gdec = Linear::zeros(clf.decoder.n_in(), clf.decoder.n_out());
    for shard in shards {
        let (l, ge, gd) = shard?;
        loss += l;
        gdec.add_scaled(&gd, 1.0);
        if let Some(ge) = ge {
            match genc.as_mut() {
                None => genc = Some(ge),
                Some(t) => t.add_scaled(&ge, 1.0),
            }
        }
    }
    let loss = loss / b;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { example: 0 });
    }
    Ok((loss, genc, gdec))
}
