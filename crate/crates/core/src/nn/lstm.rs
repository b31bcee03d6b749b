//! Single-layer LSTM built from tensor ops, so backward comes from autodiff.

use super::Linear;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Gate layout along the 4h axis: input, forget, cell, output.
pub struct Lstm<T: Scalar> {
    pub config: LstmConfig,
    pub ih: Linear<T>, // [in, 4h]
    pub hh: Linear<T>, // [h, 4h], bias folded into ih
}

impl<T: Scalar> Lstm<T> {
    pub fn new(config: LstmConfig, rng: &mut Rng) -> Self {
        assert!(config.input_dim > 0 && config.hidden_dim > 0);
        Lstm {
            config,
            ih: Linear::new(config.input_dim, 4 * config.hidden_dim, true, rng),
            hh: Linear::new(config.hidden_dim, 4 * config.hidden_dim, false, rng),
        }
    }

    /// sequence: [t, in] -> (per-step hidden states [t, h], final h [1, h]).
    pub fn forward(&self, sequence: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let t = sequence.shape()[0];
        assert!(t > 0, "lstm on empty sequence");
        let h_dim = self.config.hidden_dim;
        let mut h = Tensor::zeros(&[1, h_dim]);
        let mut c = Tensor::zeros(&[1, h_dim]);
        let mut states: Vec<Tensor<T>> = Vec::with_capacity(t);
        for step in 0..t {
            let x_t = sequence.narrow(0, step, 1); // [1, in]
            let z = self.ih.forward(&x_t).add(&self.hh.forward(&h)); // [1, 4h]
            let i = z.narrow(1, 0, h_dim).sigmoid();
            let f = z.narrow(1, h_dim, h_dim).sigmoid();
            let g = z.narrow(1, 2 * h_dim, h_dim).tanh_op();
            let o = z.narrow(1, 3 * h_dim, h_dim).sigmoid();
            c = f.mul(&c).add(&i.mul(&g));
            h = o.mul(&c.tanh_op());
            states.push(h.clone());
        }
        let refs: Vec<&Tensor<T>> = states.iter().collect();
        let stacked = Tensor::concat(&refs, 0); // [t, h]
        (stacked, h)
    }

    pub fn params(&self, out: &mut Vec<Tensor<T>>) {
        self.ih.params(out);
        self.hh.params(out);
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.ih.named(&format!("{prefix}.ih"), out);
        self.hh.named(&format!("{prefix}.hh"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(lstm: &Lstm<f64>) {
        let mut ps = Vec::new();
        lstm.params(&mut ps);
        for p in ps {
            p.set_data(vec![0.0; p.numel()]);
        }
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut rng = Rng::from_seed(1);
        let lstm = Lstm::<f64>::new(
            LstmConfig {
                input_dim: 3,
                hidden_dim: 4,
            },
            &mut rng,
        );
        zeroed(&lstm);
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]);
        let (states, last) = lstm.forward(&x);
        // all gates sigmoid(0)=0.5, g=tanh(0)=0 -> c=0 -> h=0
        assert!(states.to_vec().iter().all(|&v| v == 0.0));
        assert!(last.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_matches_hand_recurrence() {
        let mut rng = Rng::from_seed(2);
        let cfg = LstmConfig {
            input_dim: 2,
            hidden_dim: 2,
        };
        let lstm = Lstm::<f64>::new(cfg, &mut rng);
        let x = Tensor::from_vec(&[1, 2], vec![0.7, -0.3]);
        let (_, h) = lstm.forward(&x);

        // hand recurrence with h0=c0=0: z = x.W_ih + b
        let w = lstm.ih.weight.to_vec(); // [2, 8]
        let b = lstm.ih.bias.as_ref().unwrap().to_vec();
        let xs = [0.7, -0.3];
        let mut z = [0.0f64; 8];
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = xs[0] * w[j] + xs[1] * w[8 + j] + b[j];
        }
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..2 {
            let i = sig(z[j]);
            let g = z[4 + j].tanh();
            let o = sig(z[6 + j]);
            let c = i * g;
            let expect = o * c.tanh();
            let got = h.to_vec()[j];
            assert!((got - expect).abs() < 1e-12, "unit {j}: {got} vs {expect}");
        }
    }

    #[test]
    fn gates_bounded_states_finite() {
        let mut rng = Rng::from_seed(3);
        let lstm = Lstm::<f32>::new(
            LstmConfig {
                input_dim: 4,
                hidden_dim: 6,
            },
            &mut rng,
        );
        let x = Tensor::randn(&[10, 4], 5.0, &mut rng);
        let (states, _) = lstm.forward(&x);
        // h = o * tanh(c) with o in (0,1) and |tanh| < 1
        assert!(states.to_vec().iter().all(|v| v.abs() < 1.0 && v.is_finite()));
    }
}
