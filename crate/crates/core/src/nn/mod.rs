//! Neural building blocks: linear/layer-norm/embedding layers, multi-head
//! self-attention, transformer encoder stacks, an LSTM cell and an MLP head.

mod attention;
mod encoder;
mod lstm;
mod mlp;

pub use attention::{scaled_dot_attention, MultiHeadAttention};
pub use encoder::{Encoder, EncoderLayer};
pub use lstm::{Lstm, LstmConfig};
pub use mlp::Mlp;

use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Transformer stack shape. `hidden_dim` must divide evenly across heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub causal: bool,
}

impl TransformerConfig {
    pub fn validate(&self) {
        assert!(self.heads > 0 && self.hidden_dim > 0 && self.max_positions > 0);
        assert_eq!(
            self.hidden_dim % self.heads,
            0,
            "hidden_dim {} not divisible by heads {}",
            self.hidden_dim,
            self.heads
        );
    }
}

/// Init scale used across all weight matrices.
pub(crate) const INIT_STD: f64 = 0.02;

pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>, // [in, out]
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Self {
        let std = 1.0 / (in_dim as f64).sqrt();
        Linear {
            weight: Tensor::param(&[in_dim, out_dim], std, rng),
            bias: bias.then(|| Tensor::zeros(&[out_dim]).requires_grad()),
        }
    }

    /// x: [.., in] -> [.., out]
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = x.matmul(&self.weight);
        match &self.bias {
            Some(b) => y.add(b),
            None => y,
        }
    }

    pub fn params(&self, out: &mut Vec<Tensor<T>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

pub struct LayerNorm<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::full(&[dim], T::ONE).requires_grad(),
            bias: Tensor::zeros(&[dim]).requires_grad(),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }

    pub fn params(&self, out: &mut Vec<Tensor<T>>) {
        out.push(self.gain.clone());
        out.push(self.bias.clone());
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct Embedding<T: Scalar> {
    pub table: Tensor<T>, // [vocab, dim]
}

impl<T: Scalar> Embedding<T> {
    pub fn new(vocab: usize, dim: usize, rng: &mut Rng) -> Self {
        Embedding {
            table: Tensor::param(&[vocab, dim], INIT_STD, rng),
        }
    }

    pub fn lookup(&self, ids: &[u32]) -> crate::Result<Tensor<T>> {
        Tensor::embedding_lookup(&self.table, ids)
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn params(&self, out: &mut Vec<Tensor<T>>) {
        out.push(self.table.clone());
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.table"), self.table.clone()));
    }
}
