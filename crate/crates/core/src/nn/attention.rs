//! Scaled dot-product attention and the multi-head wrapper.

use super::Linear;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Mask, Scalar, Tensor};

/// Attention over explicit q/k/v. Shapes: q [tq, d] with k/v [tk, d], or
/// batched q [b, tq, d] with k/v [b, tk, d]. The mask (true = blocked) must
/// be [tq, tk] and is broadcast over leading dims. Masked keys get exactly
/// zero weight; a query with every key masked is an error.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&Mask>,
) -> Result<Tensor<T>> {
    let d = *q.shape().last().expect("attention on 0-d tensor");
    let kd = k.shape();
    let vd = v.shape();
    let conformant = kd.last() == Some(&d)
        && kd.len() == vd.len()
        && kd[..kd.len() - 1] == vd[..vd.len() - 1];
    if !conformant {
        return Err(Error::Shape(format!(
            "attention shapes q={:?} k={:?} v={:?}",
            q.shape(),
            kd,
            vd
        )));
    }
    if let Some(m) = mask {
        if m.has_fully_masked_row() {
            return Err(Error::Data(
                "attention mask blocks every key for some query".into(),
            ));
        }
    }
    let ndim = q.shape().len();
    let kt = k.transpose(ndim - 2, ndim - 1);
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let mut scores = q.matmul(&kt).scale(scale);
    if let Some(m) = mask {
        scores = scores.masked_fill(m, T::NEG_INF);
    }
    let weights = scores.softmax(ndim - 1);
    Ok(weights.matmul(v))
}

pub struct MultiHeadAttention<T: Scalar> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub heads: usize,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(dim: usize, heads: usize, rng: &mut Rng) -> Self {
        assert_eq!(dim % heads, 0);
        MultiHeadAttention {
            wq: Linear::new(dim, dim, true, rng),
            wk: Linear::new(dim, dim, true, rng),
            wv: Linear::new(dim, dim, true, rng),
            wo: Linear::new(dim, dim, true, rng),
            heads,
        }
    }

    /// Self-attention over x: [t, dim] -> [t, dim].
    pub fn forward(&self, x: &Tensor<T>, mask: Option<&Mask>) -> Result<Tensor<T>> {
        let t = x.shape()[0];
        let dim = x.shape()[1];
        let hd = dim / self.heads;
        let split = |y: Tensor<T>| -> Tensor<T> {
            // [t, dim] -> [heads, t, hd]
            y.reshape(&[t, self.heads, hd]).transpose(0, 1)
        };
        let q = split(self.wq.forward(x));
        let k = split(self.wk.forward(x));
        let v = split(self.wv.forward(x));
        let ctx = scaled_dot_attention(&q, &k, &v, mask)?;
        let merged = ctx.transpose(0, 1).reshape(&[t, dim]);
        Ok(self.wo.forward(&merged))
    }

    pub fn params(&self, out: &mut Vec<Tensor<T>>) {
        self.wq.params(out);
        self.wk.params(out);
        self.wv.params(out);
        self.wo.params(out);
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.wq.named(&format!("{prefix}.wq"), out);
        self.wk.named(&format!("{prefix}.wk"), out);
        self.wv.named(&format!("{prefix}.wv"), out);
        self.wo.named(&format!("{prefix}.wo"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_returns_v() {
        let q = Tensor::<f64>::from_vec(&[2, 3], vec![5.0, -1.0, 2.0, 0.0, 0.0, 0.0]);
        let k = Tensor::from_vec(&[1, 3], vec![0.3, 0.7, -0.2]);
        let v = Tensor::from_vec(&[1, 3], vec![10.0, 20.0, 30.0]);
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        for row in out.to_vec().chunks(3) {
            assert!((row[0] - 10.0).abs() < 1e-12);
            assert!((row[1] - 20.0).abs() < 1e-12);
            assert!((row[2] - 30.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let q = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]);
        let k = Tensor::from_vec(&[3, 2], vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let v = Tensor::from_vec(&[3, 2], vec![0.0, 3.0, 6.0, 9.0, 3.0, 0.0]);
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
        let d = out.to_vec();
        assert!((d[0] - 3.0).abs() < 1e-12);
        assert!((d[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_query_is_error() {
        let q = Tensor::<f64>::from_vec(&[2, 2], vec![1.0; 4]);
        let k = q.detach();
        let v = q.detach();
        let mask = Mask::new(&[2, 2], vec![true, true, false, false]);
        assert!(scaled_dot_attention(&q, &k, &v, Some(&mask)).is_err());
    }

    #[test]
    fn masked_keys_have_zero_weight() {
        // identical k rows: without masking, weights are uniform; masking key 1
        // must yield the average of v rows 0 and 2 only.
        let q = Tensor::<f64>::from_vec(&[1, 2], vec![0.2, -0.4]);
        let k = Tensor::from_vec(&[3, 2], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let v = Tensor::from_vec(&[3, 1], vec![1.0, 100.0, 3.0]);
        let mask = Mask::new(&[1, 3], vec![false, true, false]);
        let out = scaled_dot_attention(&q, &k, &v, Some(&mask)).unwrap();
        assert!((out.item() - 2.0).abs() < 1e-12);
    }
}
