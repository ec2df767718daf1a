//! Windowed transformer backbone: a GELU frame encoder, a learned positional
//! table, pre-norm self-attention blocks and a final layer norm. Pretext heads
//! max-pool the frame axis before a small perceptron; the classifier is a
//! linear decoder over the target-frame embedding.
//!
//! All arithmetic is `f64` and every parameter has an analytic gradient.

mod backbone;
mod embed;
mod heads;
mod io;
mod layers;

pub use backbone::{backbone_forward, BackboneCache};
pub use embed::{embed_sequence, read_embeddings_ndjson, write_embeddings_ndjson, EmbeddingSeries};
pub use heads::{
    classify_loss_and_grad, decoder_loss_and_grad, head_forward, max_pool, ssl_loss_and_grad,
    Classifier, PretextHeads, SslLoss, TaskStats,
};
pub use io::{
    load_checkpoint, load_classifier, load_params, save_checkpoint, save_classifier, save_params,
    Checkpoint, NamedTensor,
};
pub use layers::{gelu, gelu_grad, LayerNorm, Linear, Mlp};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::INPUT_DIM;
use crate::{Error, Result, Rng};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    pub window_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: INPUT_DIM,
            embed_dim: 32,
            n_layers: 4,
            n_heads: 4,
            mlp_hidden: 512,
            window_size: 200,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("mlp_hidden", self.mlp_hidden),
            ("window_size", self.window_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Short stable digest of the architecture, embedded in every parameter file.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    /// Whether the architecture lies on the published search grid.
    pub fn on_search_grid(&self) -> bool {
        [16, 32, 64, 128].contains(&self.embed_dim)
            && [2, 4, 8, 16].contains(&self.n_layers)
            && [2, 4, 8, 16].contains(&self.n_heads)
            && [512, 1024, 2048, 4096].contains(&self.mlp_hidden)
    }
}

/// Read-only view of one parameter tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Uniform access to every parameter tensor, in a fixed order. Used by the
/// optimizer, the serializer and gradient checks.
pub trait TensorSet {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);

    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src: Vec<Vec<f64>> = other.tensors().iter().map(|t| t.data.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Prefix helper for nested tensor names.
pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    fn new(d: usize, hidden: usize, rng: &mut Rng) -> Self {
        Block {
            ln1: LayerNorm::new(d),
            wq: Linear::xavier(d, d, rng),
            wk: Linear::xavier(d, d, rng),
            wv: Linear::xavier(d, d, rng),
            wo: Linear::xavier(d, d, rng),
            ln2: LayerNorm::new(d),
            mlp: Mlp::new(d, hidden, d, rng),
        }
    }
}

impl TensorSet for Block {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        self.ln1.visit(&join(prefix, "ln1"), out);
        self.wq.visit(&join(prefix, "wq"), out);
        self.wk.visit(&join(prefix, "wk"), out);
        self.wv.visit(&join(prefix, "wv"), out);
        self.wo.visit(&join(prefix, "wo"), out);
        self.ln2.visit(&join(prefix, "ln2"), out);
        self.mlp.visit(&join(prefix, "mlp"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.ln1.visit_mut(out);
        self.wq.visit_mut(out);
        self.wk.visit_mut(out);
        self.wv.visit_mut(out);
        self.wo.visit_mut(out);
        self.ln2.visit_mut(out);
        self.mlp.visit_mut(out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub frame: Mlp,
    /// Learned positional table, `window_size x embed_dim`.
    pub pos: ndarray::Array2<f64>,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
}

impl EncoderParams {
    /// Xavier-uniform projections, zero biases and positional table, unit
    /// layer-norm scales.
    pub fn init(config: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        Ok(EncoderParams {
            config: config.clone(),
            frame: Mlp::new(config.input_dim, config.mlp_hidden, d, rng),
            pos: ndarray::Array2::zeros((config.window_size, d)),
            blocks: (0..config.n_layers)
                .map(|_| Block::new(d, config.mlp_hidden, rng))
                .collect(),
            ln_f: LayerNorm::new(d),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// Adds small uniform noise to every tensor; handy for tests that need
    /// a non-degenerate positional table or layer norm.
    pub fn perturb(&mut self, scale: f64, rng: &mut Rng) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v += scale * rng.random_range(-1.0..1.0);
            }
        }
    }
}

impl TensorSet for EncoderParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        self.frame.visit(&join(prefix, "frame"), out);
        out.push(TensorView {
            name: join(prefix, "pos"),
            shape: self.pos.shape().to_vec(),
            data: self.pos.as_slice().expect("standard layout"),
        });
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.ln_f.visit(&join(prefix, "ln_f"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.frame.visit_mut(out);
        out.push(self.pos.as_slice_mut().expect("standard layout"));
        for b in &mut self.blocks {
            b.visit_mut(out);
        }
        self.ln_f.visit_mut(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn config_validation_and_hash() {
        let c = EncoderConfig::default();
        c.validate().unwrap();
        assert!(c.on_search_grid());
        let bad = EncoderConfig {
            n_heads: 3,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
        let other = EncoderConfig {
            embed_dim: 64,
            ..c.clone()
        };
        assert_ne!(c.hash(), other.hash());
        assert_eq!(c.hash(), c.clone().hash());
    }

    #[test]
    fn init_shapes_and_zero_positional_table() {
        let c = EncoderConfig {
            embed_dim: 16,
            n_layers: 2,
            n_heads: 2,
            mlp_hidden: 24,
            window_size: 8,
            ..EncoderConfig::default()
        };
        let p = EncoderParams::init(&c, &mut seeded_rng(0, 0)).unwrap();
        assert_eq!(p.pos.dim(), (8, 16));
        assert!(p.pos.iter().all(|&v| v == 0.0));
        assert_eq!(p.blocks.len(), 2);
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names[0], "frame.fc1.w");
        assert!(names.contains(&"blocks.1.mlp.fc2.b".to_string()));
        assert_eq!(names.last().unwrap(), "ln_f.b");
        assert_eq!(p.tensors().len(), p.clone().tensors_mut().len());
    }
}
