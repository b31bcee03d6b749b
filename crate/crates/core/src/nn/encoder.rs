//! Pre-norm transformer encoder with learned positional embeddings.

use super::{Embedding, LayerNorm, Linear, MultiHeadAttention, TransformerConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Mask, Scalar, Tensor};

pub struct EncoderLayer<T: Scalar> {
    pub ln1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn new(dim: usize, heads: usize, ffn_dim: usize, rng: &mut Rng) -> Self {
        EncoderLayer {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            ffn_in: Linear::new(dim, ffn_dim, true, rng),
            ffn_out: Linear::new(ffn_dim, dim, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mask: Option<&Mask>) -> Result<Tensor<T>> {
        let attn_out = self.attn.forward(&self.ln1.forward(x), mask)?;
        let x = x.add(&attn_out);
        let ffn_out = self.ffn_out.forward(&self.ffn_in.forward(&self.ln2.forward(&x)).gelu());
        Ok(x.add(&ffn_out))
    }

    pub fn params(&self, out: &mut Vec<Tensor<T>>) {
        self.ln1.params(out);
        self.attn.params(out);
        self.ln2.params(out);
        self.ffn_in.params(out);
        self.ffn_out.params(out);
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.ln1.named(&format!("{prefix}.ln1"), out);
        self.attn.named(&format!("{prefix}.attn"), out);
        self.ln2.named(&format!("{prefix}.ln2"), out);
        self.ffn_in.named(&format!("{prefix}.ffn_in"), out);
        self.ffn_out.named(&format!("{prefix}.ffn_out"), out);
    }
}

/// Stack of encoder layers over an already-embedded sequence. A zero-layer
/// stack is the identity plus positional embeddings.
pub struct Encoder<T: Scalar> {
    pub config: TransformerConfig,
    pub positions: Embedding<T>,
    pub layers: Vec<EncoderLayer<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: TransformerConfig, rng: &mut Rng) -> Self {
        config.validate();
        let positions = Embedding::new(config.max_positions, config.hidden_dim, rng);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::new(config.hidden_dim, config.heads, config.ffn_dim, rng))
            .collect();
        Encoder {
            config,
            positions,
            layers,
        }
    }

    /// x: [t, hidden] -> [t, hidden].
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_opts(x, true)
    }

    /// Forward with positional embeddings optionally disabled (used by the
    /// permutation-equivariance checks).
    pub fn forward_opts(&self, x: &Tensor<T>, with_positions: bool) -> Result<Tensor<T>> {
        let t = x.shape()[0];
        if t > self.config.max_positions {
            return Err(Error::Model(format!(
                "sequence length {t} exceeds max positions {}",
                self.config.max_positions
            )));
        }
        let mut h = if with_positions {
            let pos_ids: Vec<u32> = (0..t as u32).collect();
            x.add(&self.positions.lookup(&pos_ids)?)
        } else {
            // keep the graph shape identical: add a zero tensor
            x.clone()
        };
        let mask = self.config.causal.then(|| Mask::causal(t));
        for layer in &self.layers {
            h = layer.forward(&h, mask.as_ref())?;
        }
        Ok(h)
    }

    pub fn params(&self, out: &mut Vec<Tensor<T>>) {
        self.positions.params(out);
        for layer in &self.layers {
            layer.params(out);
        }
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.positions.named(&format!("{prefix}.pos"), out);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.named(&format!("{prefix}.layer{i}"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::no_grad;

    fn cfg(layers: usize, causal: bool) -> TransformerConfig {
        TransformerConfig {
            layers,
            heads: 2,
            hidden_dim: 8,
            ffn_dim: 16,
            max_positions: 16,
            causal,
        }
    }

    #[test]
    fn zero_layer_is_identity_plus_positions() {
        let mut rng = Rng::from_seed(1);
        let enc = Encoder::<f64>::new(cfg(0, false), &mut rng);
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let out = enc.forward(&x).unwrap();
        let pos = enc.positions.lookup(&[0, 1, 2, 3]).unwrap();
        let expect = x.add(&pos);
        assert_eq!(out.to_vec(), expect.to_vec());
    }

    #[test]
    fn output_shape_preserved() {
        let mut rng = Rng::from_seed(2);
        let enc = Encoder::<f32>::new(cfg(2, false), &mut rng);
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let out = enc.forward(&x).unwrap();
        assert_eq!(out.shape(), &[5, 8]);
    }

    #[test]
    fn too_long_sequence_rejected() {
        let mut rng = Rng::from_seed(3);
        let enc = Encoder::<f32>::new(cfg(1, false), &mut rng);
        let x = Tensor::randn(&[17, 8], 1.0, &mut rng);
        assert!(enc.forward(&x).is_err());
    }

    #[test]
    fn permuting_rows_permutes_outputs_without_positions() {
        let mut rng = Rng::from_seed(4);
        let enc = Encoder::<f64>::new(cfg(2, false), &mut rng);
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let out = no_grad(|| enc.forward_opts(&x, false)).unwrap().to_vec();

        // permutation [2,0,3,1]
        let perm = [2usize, 0, 3, 1];
        let xd = x.to_vec();
        let mut permuted = vec![0.0; xd.len()];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * 8..(dst + 1) * 8].copy_from_slice(&xd[src * 8..(src + 1) * 8]);
        }
        let xp = Tensor::from_vec(&[4, 8], permuted);
        let out_p = no_grad(|| enc.forward_opts(&xp, false)).unwrap().to_vec();
        // attention sums over keys in permuted order, so allow fp roundoff
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..8 {
                let a = out_p[dst * 8 + j];
                let b = out[src * 8 + j];
                assert!(
                    (a - b).abs() < 1e-10,
                    "row {src}->{dst} col {j}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn causal_stack_ignores_future_perturbations() {
        let mut rng = Rng::from_seed(5);
        for depth in [1usize, 2, 3] {
            let enc = Encoder::<f32>::new(cfg(depth, true), &mut rng);
            let x = Tensor::randn(&[6, 8], 1.0, &mut rng);
            let base = no_grad(|| enc.forward(&x)).unwrap().to_vec();

            let mut xd = x.to_vec();
            let p = 4; // perturb row 4
            for v in &mut xd[p * 8..(p + 1) * 8] {
                *v += 3.5;
            }
            let xp = Tensor::from_vec(&[6, 8], xd);
            let out = no_grad(|| enc.forward(&xp)).unwrap().to_vec();
            // rows before p must be bit-identical
            assert_eq!(out[..p * 8], base[..p * 8], "depth {depth}");
            // row p must change
            assert_ne!(out[p * 8..(p + 1) * 8], base[p * 8..(p + 1) * 8]);
        }
    }
}
