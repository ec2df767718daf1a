use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use super::{join, TensorSet, TensorView};
use crate::Rng;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Affine map `y = x W + b`, with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear {
            w: Array2::zeros((n_in, n_out)),
            b: Array1::zeros(n_out),
        }
    }

    pub fn xavier(n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = Array2::from_shape_fn((n_in, n_out), |_| rng.random_range(-a..a));
        Linear {
            w,
            b: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: &ArrayView2<f64>,
        dy: &ArrayView2<f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.w.t())
    }

    pub fn accumulate(&self, x: &ArrayView2<f64>, dy: &ArrayView2<f64>, grad: &mut Linear) {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
    }
}

impl TensorSet for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(TensorView {
            name: join(prefix, "w"),
            shape: self.w.shape().to_vec(),
            data: self.w.as_slice().expect("standard layout"),
        });
        out.push(TensorView {
            name: join(prefix, "b"),
            shape: self.b.shape().to_vec(),
            data: self.b.as_slice().expect("standard layout"),
        });
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w.as_slice_mut().expect("standard layout"));
        out.push(self.b.as_slice_mut().expect("standard layout"));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub g: Array1<f64>,
    pub b: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            g: Array1::ones(d),
            b: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *s = 1.0 / (var + LN_EPS).sqrt();
            row *= *s;
        }
        let mut y = &xhat * &self.g;
        y += &self.b;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache,
        dy: &ArrayView2<f64>,
        grad: &mut LayerNorm,
    ) -> Array2<f64> {
        grad.g += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.b += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let mut dx = dy * &self.g;
        for ((mut row, xh), s) in dx
            .rows_mut()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_d = row.sum() / d;
            let mean_dx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
            row.zip_mut_with(&xh, |r, &h| *r = s * (*r - mean_d - h * mean_dx));
        }
        dx
    }
}

impl TensorSet for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(TensorView {
            name: join(prefix, "g"),
            shape: self.g.shape().to_vec(),
            data: self.g.as_slice().expect("standard layout"),
        });
        out.push(TensorView {
            name: join(prefix, "b"),
            shape: self.b.shape().to_vec(),
            data: self.b.as_slice().expect("standard layout"),
        });
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.g.as_slice_mut().expect("standard layout"));
        out.push(self.b.as_slice_mut().expect("standard layout"));
    }
}

/// Two-layer perceptron `fc2(gelu(fc1(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct MlpCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl Mlp {
    pub fn new(n_in: usize, hidden: usize, n_out: usize, rng: &mut Rng) -> Self {
        Mlp {
            fc1: Linear::xavier(n_in, hidden, rng),
            fc2: Linear::xavier(hidden, n_out, rng),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.fc1.forward(x);
        let act = pre.mapv(gelu);
        let y = self.fc2.forward(&act.view());
        (
            y,
            MlpCache {
                x: x.to_owned(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &MlpCache, dy: &ArrayView2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut dact = self.fc2.backward(&cache.act.view(), dy, &mut grad.fc2);
        dact.zip_mut_with(&cache.pre, |d, &p| *d *= gelu_grad(p));
        self.fc1
            .backward(&cache.x.view(), &dact.view(), &mut grad.fc1)
    }

    /// Backward pass that skips `dL/dx` (first layer of the network).
    pub fn backward_params(&self, cache: &MlpCache, dy: &ArrayView2<f64>, grad: &mut Mlp) {
        let mut dact = self.fc2.backward(&cache.act.view(), dy, &mut grad.fc2);
        dact.zip_mut_with(&cache.pre, |d, &p| *d *= gelu_grad(p));
        self.fc1
            .accumulate(&cache.x.view(), &dact.view(), &mut grad.fc1);
    }
}

impl TensorSet for Mlp {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.fc1.visit_mut(out);
        self.fc2.visit_mut(out);
    }
}
