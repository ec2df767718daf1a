use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::layers::{LayerNormCache, MlpCache};
use super::EncoderParams;
use crate::dataset::Window;
use crate::{Error, Result};

struct BlockCache {
    ln1: LayerNormCache,
    n1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights, one `N x N` matrix per (window, head).
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LayerNormCache,
    mlp: MlpCache,
}

/// Intermediates of a forward pass over `n_windows` stacked windows.
pub struct BackboneCache {
    n_windows: usize,
    frame: MlpCache,
    blocks: Vec<BlockCache>,
    ln_f: LayerNormCache,
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl EncoderParams {
    /// Forward pass over `x`, the row-stack of `n_windows` windows of
    /// `window_size x input_dim` frames. Returns the final-norm features
    /// (same row layout) and the cache needed by [`EncoderParams::backward`].
    pub fn forward(
        &self,
        x: &ArrayView2<f64>,
        n_windows: usize,
    ) -> Result<(Array2<f64>, BackboneCache)> {
        let cfg = &self.config;
        let n = cfg.window_size;
        if x.ncols() != cfg.input_dim {
            return Err(Error::Dimension {
                expected: cfg.input_dim,
                got: x.ncols(),
            });
        }
        if x.nrows() != n * n_windows {
            return Err(Error::Config(format!(
                "expected {} rows for {n_windows} windows of {n}, got {}",
                n * n_windows,
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite backbone input".into()));
        }

        let (mut h, frame) = self.frame.forward(x);
        for w in 0..n_windows {
            let mut rows = h.slice_mut(s![w * n..(w + 1) * n, ..]);
            rows += &self.pos;
        }

        let heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (n1, ln1) = block.ln1.forward(&h.view());
            let q = block.wq.forward(&n1.view());
            let k = block.wk.forward(&n1.view());
            let v = block.wv.forward(&n1.view());
            let mut attn = Array2::zeros(h.raw_dim());
            let mut probs = Vec::with_capacity(n_windows * heads);
            for w in 0..n_windows {
                let rows = w * n..(w + 1) * n;
                for hd in 0..heads {
                    let cols = hd * dh..(hd + 1) * dh;
                    let qh = q.slice(s![rows.clone(), cols.clone()]);
                    let kh = k.slice(s![rows.clone(), cols.clone()]);
                    let vh = v.slice(s![rows.clone(), cols.clone()]);
                    let mut p = qh.dot(&kh.t());
                    p *= scale;
                    softmax_rows(&mut p);
                    attn.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vh));
                    probs.push(p);
                }
            }
            let proj = block.wo.forward(&attn.view());
            h += &proj;
            let (n2, ln2) = block.ln2.forward(&h.view());
            let (m, mlp) = block.mlp.forward(&n2.view());
            h += &m;
            blocks.push(BlockCache {
                ln1,
                n1,
                q,
                k,
                v,
                probs,
                attn,
                ln2,
                mlp,
            });
        }
        let (out, ln_f) = self.ln_f.forward(&h.view());
        Ok((
            out,
            BackboneCache {
                n_windows,
                frame,
                blocks,
                ln_f,
            },
        ))
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/dfeatures`.
    pub fn backward(
        &self,
        cache: &BackboneCache,
        d_out: &ArrayView2<f64>,
        grad: &mut EncoderParams,
    ) {
        let cfg = &self.config;
        let n = cfg.window_size;
        let heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dh_res = self.ln_f.backward(&cache.ln_f, d_out, &mut grad.ln_f);
        for (li, block) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[li];
            let gb = &mut grad.blocks[li];

            let dn2 = block.mlp.backward(&bc.mlp, &dh_res.view(), &mut gb.mlp);
            dh_res += &block.ln2.backward(&bc.ln2, &dn2.view(), &mut gb.ln2);

            let dattn = block
                .wo
                .backward(&bc.attn.view(), &dh_res.view(), &mut gb.wo);
            let mut dq = Array2::zeros(dattn.raw_dim());
            let mut dk = Array2::zeros(dattn.raw_dim());
            let mut dv = Array2::zeros(dattn.raw_dim());
            for w in 0..cache.n_windows {
                let rows = w * n..(w + 1) * n;
                for hd in 0..heads {
                    let cols = hd * dh..(hd + 1) * dh;
                    let p = &bc.probs[w * heads + hd];
                    let qh = bc.q.slice(s![rows.clone(), cols.clone()]);
                    let kh = bc.k.slice(s![rows.clone(), cols.clone()]);
                    let vh = bc.v.slice(s![rows.clone(), cols.clone()]);
                    let doh = dattn.slice(s![rows.clone(), cols.clone()]);
                    dv.slice_mut(s![rows.clone(), cols.clone()])
                        .assign(&p.t().dot(&doh));
                    let dp = doh.dot(&vh.t());
                    // softmax backward, then the 1/sqrt(dh) scale
                    let inner: Array1<f64> = (&dp * p).sum_axis(Axis(1));
                    let mut ds = dp;
                    for ((mut row, pr), c) in
                        ds.rows_mut().into_iter().zip(p.rows()).zip(inner.iter())
                    {
                        row.zip_mut_with(&pr, |d, &pv| *d = pv * (*d - c) * scale);
                    }
                    dq.slice_mut(s![rows.clone(), cols.clone()])
                        .assign(&ds.dot(&kh));
                    dk.slice_mut(s![rows.clone(), cols])
                        .assign(&ds.t().dot(&qh));
                }
            }
            let mut dn1 = block.wq.backward(&bc.n1.view(), &dq.view(), &mut gb.wq);
            dn1 += &block.wk.backward(&bc.n1.view(), &dk.view(), &mut gb.wk);
            dn1 += &block.wv.backward(&bc.n1.view(), &dv.view(), &mut gb.wv);
            dh_res += &block.ln1.backward(&bc.ln1, &dn1.view(), &mut gb.ln1);
        }

        for w in 0..cache.n_windows {
            grad.pos += &dh_res.slice(s![w * n..(w + 1) * n, ..]);
        }
        self.frame
            .backward_params(&cache.frame, &dh_res.view(), &mut grad.frame);
    }

    /// Features for a batch of windows without keeping the cache.
    pub fn features(&self, windows: &[&Window]) -> Result<Array2<f64>> {
        let x = stack_windows(windows, self.config.window_size)?;
        Ok(self.forward(&x.view(), windows.len())?.0)
    }
}

/// Row-stacks windows into a `(count * N) x input_dim` matrix.
pub fn stack_windows(windows: &[&Window], window_size: usize) -> Result<Array2<f64>> {
    let d = crate::dataset::INPUT_DIM;
    let mut data = Vec::with_capacity(windows.len() * window_size * d);
    for w in windows {
        if w.len() != window_size {
            return Err(Error::Config(format!(
                "window has {} frames, model expects {window_size}",
                w.len()
            )));
        }
        data.extend(w.features());
    }
    Ok(Array2::from_shape_vec((windows.len() * window_size, d), data).expect("shape"))
}

/// Per-frame features (`N x D`) and the target-row embedding of one window.
pub fn backbone_forward(
    params: &EncoderParams,
    window: &Window,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let features = params.features(&[window])?;
    let target = features.row(window.target_index).to_owned();
    Ok((features, target))
}
