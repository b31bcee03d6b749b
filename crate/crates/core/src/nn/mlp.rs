//! Feed-forward head: gelu between hidden layers, linear output.

use super::Linear;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub struct Mlp<T: Scalar> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// `dims` lists layer widths input-first, e.g. [64, 32, 16, 1].
    pub fn new(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], true, rng))
            .collect();
        Mlp { layers }
    }

    /// x: [.., in] -> [.., out]
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h = h.gelu();
            }
        }
        h
    }

    pub fn params(&self, out: &mut Vec<Tensor<T>>) {
        for layer in &self.layers {
            layer.params(out);
        }
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.named(&format!("{prefix}.fc{i}"), out);
        }
    }
}
