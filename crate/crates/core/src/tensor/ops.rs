//! Tensor operations: forward values plus backward rules.
//!
//! Shape errors are programming errors and panic; data-dependent failures
//! (token id out of range, empty supervision) return `Result`. Broadcasting
//! is restricted to leading dimensions: the smaller operand's shape must
//! equal the trailing dims of the larger one.

use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Boolean grid for masking. `true` marks a position as masked out.
#[derive(Debug, Clone)]
pub struct Mask {
    pub shape: Vec<usize>,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(shape: &[usize], data: Vec<bool>) -> Self {
        assert_eq!(numel(shape), data.len());
        Mask {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Causal mask over an n-length sequence: entry (i, j) is masked (true)
    /// when j > i, so position i only attends to positions <= i.
    pub fn causal(n: usize) -> Self {
        let mut data = vec![false; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                data[i * n + j] = true;
            }
        }
        Mask::new(&[n, n], data)
    }

    /// True if some row is fully masked (attention would be undefined).
    pub fn has_fully_masked_row(&self) -> bool {
        let cols = *self.shape.last().unwrap_or(&1);
        self.data.chunks(cols).any(|row| row.iter().all(|&m| m))
    }
}

/// Which operand of a broadcast pair is the full-size one.
enum BcSide {
    Equal,
    LhsLarger,
    RhsLarger,
}

fn bc_side(a: &[usize], b: &[usize]) -> BcSide {
    if a == b {
        BcSide::Equal
    } else if a.len() > b.len() && a.ends_with(b) {
        BcSide::LhsLarger
    } else if b.len() > a.len() && b.ends_with(a) {
        BcSide::RhsLarger
    } else {
        panic!("shapes {a:?} and {b:?} are not leading-broadcast compatible");
    }
}

/// Sum `g` (len = chunks * small_len) down to the broadcast operand.
fn reduce_to<T: Scalar>(g: &[T], small_len: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; small_len];
    for chunk in g.chunks(small_len) {
        for (o, &x) in out.iter_mut().zip(chunk) {
            *o += x;
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    // ---- elementwise binary ----------------------------------------------

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.zip_broadcast(other, |a, b| a + b, ZipKind::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.zip_broadcast(other, |a, b| a - b, ZipKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.zip_broadcast(other, |a, b| a * b, ZipKind::Mul)
    }

    fn zip_broadcast(
        &self,
        other: &Tensor<T>,
        f: impl Fn(T, T) -> T,
        kind: ZipKind,
    ) -> Tensor<T> {
        let side = bc_side(self.shape(), other.shape());
        let (out_shape, data) = {
            let a = self.data();
            let b = other.data();
            match side {
                BcSide::Equal => (
                    self.shape().to_vec(),
                    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
                ),
                BcSide::LhsLarger => {
                    let bl = b.len().max(1);
                    (
                        self.shape().to_vec(),
                        a.iter()
                            .enumerate()
                            .map(|(i, &x)| f(x, b[i % bl]))
                            .collect(),
                    )
                }
                BcSide::RhsLarger => {
                    let al = a.len().max(1);
                    (
                        other.shape().to_vec(),
                        b.iter()
                            .enumerate()
                            .map(|(i, &y)| f(a[i % al], y))
                            .collect(),
                    )
                }
            }
        };
        let lhs = self.clone();
        let rhs = other.clone();
        let lhs_tracked = lhs.tracked();
        let rhs_tracked = rhs.tracked();
        let lhs_len = self.numel();
        let rhs_len = other.numel();
        Tensor::result_of(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |_out, g| {
                let ga = if lhs_tracked {
                    let raw: Vec<T> = match kind {
                        ZipKind::Add | ZipKind::Sub => g.to_vec(),
                        ZipKind::Mul => {
                            let b = rhs.data();
                            let bl = b.len().max(1);
                            g.iter()
                                .enumerate()
                                .map(|(i, &gi)| gi * b[i % bl])
                                .collect()
                        }
                    };
                    Some(if raw.len() == lhs_len {
                        raw
                    } else {
                        reduce_to(&raw, lhs_len)
                    })
                } else {
                    None
                };
                let gb = if rhs_tracked {
                    let raw: Vec<T> = match kind {
                        ZipKind::Add => g.to_vec(),
                        ZipKind::Sub => g.iter().map(|&x| -x).collect(),
                        ZipKind::Mul => {
                            let a = lhs.data();
                            let al = a.len().max(1);
                            g.iter()
                                .enumerate()
                                .map(|(i, &gi)| gi * a[i % al])
                                .collect()
                        }
                    };
                    Some(if raw.len() == rhs_len {
                        raw
                    } else {
                        reduce_to(&raw, rhs_len)
                    })
                } else {
                    None
                };
                vec![ga, gb]
            },
        )
    }

    // ---- elementwise unary -----------------------------------------------

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::ONE)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::result_of(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_out, g| vec![Some(g.iter().map(|&x| x * c).collect())],
        )
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::result_of(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            |_out, g| vec![Some(g.to_vec())],
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        fn sig<T: Scalar>(x: T) -> T {
            if x >= T::ZERO {
                T::ONE / (T::ONE + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::ONE + e)
            }
        }
        let data = self.data().iter().map(|&x| sig(x)).collect();
        Tensor::result_of(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            |out, g| {
                vec![Some(
                    out.iter()
                        .zip(g)
                        .map(|(&y, &gi)| gi * y * (T::ONE - y))
                        .collect(),
                )]
            },
        )
    }

    pub fn tanh_op(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.tanh()).collect();
        Tensor::result_of(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            |out, g| {
                vec![Some(
                    out.iter()
                        .zip(g)
                        .map(|(&y, &gi)| gi * (T::ONE - y * y))
                        .collect(),
                )]
            },
        )
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
        let k = T::from_f64(0.044_715);
        let half = T::from_f64(0.5);
        let three = T::from_f64(3.0);
        let data = self
            .data()
            .iter()
            .map(|&x| {
                let t = (c * (x + k * x * x * x)).tanh();
                half * x * (T::ONE + t)
            })
            .collect();
        let input = self.clone();
        Tensor::result_of(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_out, g| {
                let xs = input.data();
                vec![Some(
                    xs.iter()
                        .zip(g)
                        .map(|(&x, &gi)| {
                            let inner = c * (x + k * x * x * x);
                            let t = inner.tanh();
                            let d_inner = c * (T::ONE + three * k * x * x);
                            let dy = half * (T::ONE + t) + half * x * (T::ONE - t * t) * d_inner;
                            gi * dy
                        })
                        .collect(),
                )]
            },
        )
    }

    /// Inverted dropout: kept positions scaled by 1/(1-rate). The mask is
    /// drawn from the provided stream so runs are reproducible.
    pub fn dropout(&self, rate: f64, rng: &mut Rng) -> Tensor<T> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if rate == 0.0 {
            return self.clone();
        }
        let keep: Vec<bool> = (0..self.numel()).map(|_| !rng.bernoulli(rate)).collect();
        let inv = T::from_f64(1.0 / (1.0 - rate));
        let data = self
            .data()
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x * inv } else { T::ZERO })
            .collect();
        Tensor::result_of(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_out, g| {
                vec![Some(
                    g.iter()
                        .zip(&keep)
                        .map(|(&gi, &k)| if k { gi * inv } else { T::ZERO })
                        .collect(),
                )]
            },
        )
    }

    /// Replace masked positions with `value`. The mask shape must equal the
    /// trailing dims of this tensor (leading-dimension broadcast).
    pub fn masked_fill(&self, mask: &Mask, value: T) -> Tensor<T> {
        assert!(
            self.shape().ends_with(&mask.shape),
            "mask shape {:?} is not a suffix of {:?}",
            mask.shape,
            self.shape()
        );
        let ml = mask.data.len().max(1);
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| if mask.data[i % ml] { value } else { x })
            .collect();
        let masked = mask.data.clone();
        Tensor::result_of(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_out, g| {
                vec![Some(
                    g.iter()
                        .enumerate()
                        .map(|(i, &gi)| if masked[i % ml] { T::ZERO } else { gi })
                        .collect(),
                )]
            },
        )
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::result_of(vec![], vec![s], vec![self.clone()], move |_out, g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        assert!(n > 0, "mean of empty tensor");
        let s: T = self.data().iter().copied().sum();
        let inv = T::ONE / T::from_f64(n as f64);
        Tensor::result_of(vec![], vec![s * inv], vec![self.clone()], move |_out, g| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }

    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor<T> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Tensor<T> {
        let shape = self.shape();
        assert!(axis < shape.len(), "axis {axis} out of range {shape:?}");
        let lane = shape[axis];
        assert!(lane > 0);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = if mean {
            T::ONE / T::from_f64(lane as f64)
        } else {
            T::ONE
        };
        let mut out = vec![T::ZERO; outer * inner];
        {
            let d = self.data();
            for o in 0..outer {
                for l in 0..lane {
                    let base = (o * lane + l) * inner;
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for (dv, &x) in dst.iter_mut().zip(&d[base..base + inner]) {
                        *dv += x;
                    }
                }
            }
            for v in out.iter_mut() {
                *v *= inv;
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Tensor::result_of(
            out_shape,
            out,
            vec![self.clone()],
            move |_out, g| {
                let mut gx = vec![T::ZERO; outer * lane * inner];
                for o in 0..outer {
                    for l in 0..lane {
                        let base = (o * lane + l) * inner;
                        let src = &g[o * inner..(o + 1) * inner];
                        for (dv, &x) in gx[base..base + inner].iter_mut().zip(src) {
                            *dv = x * inv;
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    // ---- shape ops --------------------------------------------------------

    pub fn reshape(&self, new_shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel(new_shape),
            self.numel(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            new_shape
        );
        Tensor::result_of(
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |_out, g| vec![Some(g.to_vec())],
        )
    }

    /// Swap two axes (materialized copy).
    pub fn transpose(&self, a: usize, b: usize) -> Tensor<T> {
        let ndim = self.shape().len();
        assert!(a < ndim && b < ndim, "transpose axes out of range");
        let mut perm: Vec<usize> = (0..ndim).collect();
        perm.swap(a, b);
        let (out_shape, data) = permute_copy(&self.data(), self.shape(), &perm);
        Tensor::result_of(
            out_shape.clone(),
            data,
            vec![self.clone()],
            move |_out, g| {
                let (_, gx) = permute_copy(g, &out_shape, &perm);
                vec![Some(gx)]
            },
        )
    }

    pub fn concat(tensors: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!tensors.is_empty(), "concat of zero tensors");
        let first = tensors[0].shape().to_vec();
        assert!(axis < first.len());
        for t in tensors {
            assert_eq!(t.shape().len(), first.len());
            for (d, (&a, &b)) in t.shape().iter().zip(&first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch on dim {d}");
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let axis_sizes: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total_axis: usize = axis_sizes.iter().sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total_axis;

        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for (t, &asz) in tensors.iter().zip(&axis_sizes) {
                let d = t.data();
                let block = asz * inner;
                data.extend_from_slice(&d[o * block..(o + 1) * block]);
            }
        }
        let parents: Vec<Tensor<T>> = tensors.iter().map(|t| (*t).clone()).collect();
        let sizes = axis_sizes.clone();
        Tensor::result_of(out_shape, data, parents, move |_out, g| {
            let mut grads: Vec<Vec<T>> = sizes
                .iter()
                .map(|&asz| Vec::with_capacity(outer * asz * inner))
                .collect();
            let mut pos = 0;
            for _o in 0..outer {
                for (gi, &asz) in grads.iter_mut().zip(&sizes) {
                    let block = asz * inner;
                    gi.extend_from_slice(&g[pos..pos + block]);
                    pos += block;
                }
            }
            grads.into_iter().map(Some).collect()
        })
    }

    /// Contiguous sub-range along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let shape = self.shape();
        assert!(axis < shape.len());
        assert!(start + len <= shape[axis], "narrow out of range");
        let outer: usize = shape[..axis].iter().product();
        let lane = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let d = self.data();
            for o in 0..outer {
                let base = (o * lane + start) * inner;
                data.extend_from_slice(&d[base..base + len * inner]);
            }
        }
        Tensor::result_of(out_shape, data, vec![self.clone()], move |_out, g| {
            let mut gx = vec![T::ZERO; outer * lane * inner];
            for o in 0..outer {
                let base = (o * lane + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Stack same-shape tensors along a new leading axis.
    pub fn stack(tensors: &[&Tensor<T>]) -> Tensor<T> {
        assert!(!tensors.is_empty());
        let shape = tensors[0].shape().to_vec();
        let each = numel(&shape);
        let mut data = Vec::with_capacity(each * tensors.len());
        for t in tensors {
            assert_eq!(t.shape(), shape.as_slice(), "stack shape mismatch");
            data.extend_from_slice(&t.data());
        }
        let mut out_shape = vec![tensors.len()];
        out_shape.extend_from_slice(&shape);
        let parents: Vec<Tensor<T>> = tensors.iter().map(|t| (*t).clone()).collect();
        Tensor::result_of(out_shape, data, parents, move |_out, g| {
            g.chunks(each).map(|c| Some(c.to_vec())).collect()
        })
    }

    // ---- matmul ------------------------------------------------------------

    /// Matrix product. Supports [m,k]x[k,n], batched [b,m,k]x[k,n] with a
    /// shared rhs, and [b,m,k]x[b,k,n].
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let (ls, rs) = (self.shape().to_vec(), other.shape().to_vec());
        let (batch, m, k, n, shared_rhs) = match (ls.len(), rs.len()) {
            (2, 2) => {
                assert_eq!(ls[1], rs[0], "matmul inner dim mismatch {ls:?} x {rs:?}");
                (1, ls[0], ls[1], rs[1], true)
            }
            (3, 2) => {
                assert_eq!(ls[2], rs[0], "matmul inner dim mismatch {ls:?} x {rs:?}");
                (ls[0], ls[1], ls[2], rs[1], true)
            }
            (3, 3) => {
                assert_eq!(ls[0], rs[0], "matmul batch dim mismatch {ls:?} x {rs:?}");
                assert_eq!(ls[2], rs[1], "matmul inner dim mismatch {ls:?} x {rs:?}");
                (ls[0], ls[1], ls[2], rs[2], false)
            }
            _ => panic!("matmul unsupported ranks {ls:?} x {rs:?}"),
        };
        let out_shape = if ls.len() == 2 && rs.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let mut data = vec![T::ZERO; batch * m * n];
        {
            let a = self.data();
            let b = other.data();
            for bi in 0..batch {
                let ab = &a[bi * m * k..(bi + 1) * m * k];
                let bb = if shared_rhs {
                    &b[..]
                } else {
                    &b[bi * k * n..(bi + 1) * k * n]
                };
                gemm(&mut data[bi * m * n..(bi + 1) * m * n], ab, bb, m, k, n, false, false);
            }
        }
        let lhs = self.clone();
        let rhs = other.clone();
        let lhs_tracked = lhs.tracked();
        let rhs_tracked = rhs.tracked();
        Tensor::result_of(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |_out, g| {
                let a = lhs.data();
                let b = rhs.data();
                let ga = if lhs_tracked {
                    // dA = dC . B^T
                    let mut ga = vec![T::ZERO; batch * m * k];
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let bb = if shared_rhs {
                            &b[..]
                        } else {
                            &b[bi * k * n..(bi + 1) * k * n]
                        };
                        gemm(&mut ga[bi * m * k..(bi + 1) * m * k], gb, bb, m, n, k, false, true);
                    }
                    Some(ga)
                } else {
                    None
                };
                let gb = if rhs_tracked {
                    // dB = A^T . dC, reduced over the batch when rhs is shared
                    let rhs_len = if shared_rhs { k * n } else { batch * k * n };
                    let mut gbv = vec![T::ZERO; rhs_len];
                    for bi in 0..batch {
                        let ab = &a[bi * m * k..(bi + 1) * m * k];
                        let gblock = &g[bi * m * n..(bi + 1) * m * n];
                        let dst = if shared_rhs {
                            &mut gbv[..]
                        } else {
                            &mut gbv[bi * k * n..(bi + 1) * k * n]
                        };
                        gemm(dst, ab, gblock, k, m, n, true, false);
                    }
                    Some(gbv)
                } else {
                    None
                };
                vec![ga, gb]
            },
        )
    }

    // ---- softmax / layer norm ---------------------------------------------

    /// Softmax along `axis`. Lanes must contain at least one finite entry;
    /// -inf entries (from masking) get exactly zero probability.
    pub fn softmax(&self, axis: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len());
        let lane = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * lane + l) * inner + i;
                let mut mx = T::NEG_INF;
                for l in 0..lane {
                    mx = mx.maximum(data[idx(l)]);
                }
                debug_assert!(mx.is_finite(), "softmax lane fully masked");
                let mut z = T::ZERO;
                for l in 0..lane {
                    let e = (data[idx(l)] - mx).exp();
                    data[idx(l)] = e;
                    z += e;
                }
                let inv = T::ONE / z;
                for l in 0..lane {
                    data[idx(l)] *= inv;
                }
            }
        }
        Tensor::result_of(
            shape,
            data,
            vec![self.clone()],
            move |out, g| {
                let mut gx = vec![T::ZERO; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * lane + l) * inner + i;
                        let mut dot = T::ZERO;
                        for l in 0..lane {
                            dot += g[idx(l)] * out[idx(l)];
                        }
                        for l in 0..lane {
                            gx[idx(l)] = out[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Normalize the last axis to zero mean / unit variance, then apply
    /// elementwise gain and bias (both of length = last dim).
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Tensor<T> {
        let shape = self.shape().to_vec();
        let d = *shape.last().expect("layer_norm needs at least 1 dim");
        assert_eq!(gain.shape(), &[d]);
        assert_eq!(bias.shape(), &[d]);
        let rows = self.numel() / d;
        let epsv = T::from_f64(eps);
        let inv_d = T::ONE / T::from_f64(d as f64);

        let mut out = vec![T::ZERO; rows * d];
        let mut xhat_store = vec![T::ZERO; rows * d];
        let mut inv_std_store = vec![T::ZERO; rows];
        {
            let x = self.data();
            let gn = gain.data();
            let bs = bias.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mut mean = T::ZERO;
                for &v in row {
                    mean += v;
                }
                mean *= inv_d;
                let mut var = T::ZERO;
                for &v in row {
                    let c = v - mean;
                    var += c * c;
                }
                var *= inv_d;
                let inv_std = T::ONE / (var + epsv).sqrt();
                inv_std_store[r] = inv_std;
                for j in 0..d {
                    let xh = (row[j] - mean) * inv_std;
                    xhat_store[r * d + j] = xh;
                    out[r * d + j] = xh * gn[j] + bs[j];
                }
            }
        }
        let x_tracked = self.tracked();
        let g_tracked = gain.tracked();
        let b_tracked = bias.tracked();
        let gain_c = gain.clone();
        Tensor::result_of(
            shape,
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |_out, g| {
                let gn = gain_c.data();
                let gx = if x_tracked {
                    let mut gx = vec![T::ZERO; rows * d];
                    for r in 0..rows {
                        let inv_std = inv_std_store[r];
                        let xh = &xhat_store[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        // dxhat = g * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                        let mut mean_dxh = T::ZERO;
                        let mut mean_dxh_xh = T::ZERO;
                        for j in 0..d {
                            let dxh = gr[j] * gn[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh *= inv_d;
                        mean_dxh_xh *= inv_d;
                        for j in 0..d {
                            let dxh = gr[j] * gn[j];
                            gx[r * d + j] = inv_std * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    Some(gx)
                } else {
                    None
                };
                let ggain = if g_tracked {
                    let mut gg = vec![T::ZERO; d];
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat_store[r * d + j];
                        }
                    }
                    Some(gg)
                } else {
                    None
                };
                let gbias = if b_tracked {
                    let mut gb = vec![T::ZERO; d];
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                    Some(gb)
                } else {
                    None
                };
                vec![gx, ggain, gbias]
            },
        )
    }

    // ---- lookup / losses ---------------------------------------------------

    /// Gather rows of a [v, d] table. Gradients scatter-add back into the
    /// table, so repeated ids accumulate.
    pub fn embedding_lookup(table: &Tensor<T>, ids: &[u32]) -> Result<Tensor<T>> {
        let shape = table.shape();
        if shape.len() != 2 {
            return Err(Error::Shape(format!(
                "embedding_lookup expects a 2-d table, got {shape:?}"
            )));
        }
        let (v, d) = (shape[0], shape[1]);
        for &id in ids {
            if id as usize >= v {
                return Err(Error::Data(format!(
                    "token id {id} out of range for table of {v} rows"
                )));
            }
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        {
            let t = table.data();
            for &id in ids {
                let r = id as usize;
                data.extend_from_slice(&t[r * d..(r + 1) * d]);
            }
        }
        let ids_owned: Vec<u32> = ids.to_vec();
        Ok(Tensor::result_of(
            vec![ids_owned.len(), d],
            data,
            vec![table.clone()],
            move |_out, g| {
                let mut gt = vec![T::ZERO; v * d];
                for (i, &id) in ids_owned.iter().enumerate() {
                    let r = id as usize;
                    for j in 0..d {
                        gt[r * d + j] += g[i * d + j];
                    }
                }
                vec![Some(gt)]
            },
        ))
    }

    /// Mean cross entropy of [rows, classes] logits against integer targets.
    /// Rows whose target equals `ignore_id` contribute nothing.
    pub fn cross_entropy(
        logits: &Tensor<T>,
        targets: &[u32],
        ignore_id: Option<u32>,
    ) -> Result<Tensor<T>> {
        let shape = logits.shape();
        let (rows, classes) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => {
                return Err(Error::Shape(format!(
                    "cross_entropy expects 1-d or 2-d logits, got {shape:?}"
                )))
            }
        };
        if targets.len() != rows {
            return Err(Error::Shape(format!(
                "cross_entropy got {} targets for {} rows",
                targets.len(),
                rows
            )));
        }
        let counted: Vec<bool> = targets.iter().map(|&t| Some(t) != ignore_id).collect();
        let count = counted.iter().filter(|&&c| c).count();
        if count == 0 {
            return Err(Error::Data(
                "cross_entropy has no supervised positions".into(),
            ));
        }
        for (&t, &c) in targets.iter().zip(&counted) {
            if c && t as usize >= classes {
                return Err(Error::Data(format!(
                    "target id {t} out of range for {classes} classes"
                )));
            }
        }
        let mut total = T::ZERO;
        {
            let l = logits.data();
            for r in 0..rows {
                if !counted[r] {
                    continue;
                }
                let row = &l[r * classes..(r + 1) * classes];
                let mut mx = T::NEG_INF;
                for &v in row {
                    mx = mx.maximum(v);
                }
                let mut z = T::ZERO;
                for &v in row {
                    z += (v - mx).exp();
                }
                let lse = mx + z.ln();
                total += lse - row[targets[r] as usize];
            }
        }
        let inv_count = T::ONE / T::from_f64(count as f64);
        let logits_c = logits.clone();
        let targets_owned: Vec<u32> = targets.to_vec();
        Ok(Tensor::result_of(
            vec![],
            vec![total * inv_count],
            vec![logits.clone()],
            move |_out, g| {
                let l = logits_c.data();
                let mut gl = vec![T::ZERO; rows * classes];
                let scale = g[0] * inv_count;
                for r in 0..rows {
                    if !counted[r] {
                        continue;
                    }
                    let row = &l[r * classes..(r + 1) * classes];
                    let mut mx = T::NEG_INF;
                    for &v in row {
                        mx = mx.maximum(v);
                    }
                    let mut z = T::ZERO;
                    for &v in row {
                        z += (v - mx).exp();
                    }
                    let inv_z = T::ONE / z;
                    for j in 0..classes {
                        let p = (row[j] - mx).exp() * inv_z;
                        let ind = if j == targets_owned[r] as usize {
                            T::ONE
                        } else {
                            T::ZERO
                        };
                        gl[r * classes + j] = scale * (p - ind);
                    }
                }
                vec![Some(gl)]
            },
        ))
    }

    /// Mean binary cross entropy with logits; numerically stable form.
    pub fn bce_with_logits(logits: &Tensor<T>, targets: &[T]) -> Result<Tensor<T>> {
        let n = logits.numel();
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "bce_with_logits got {} targets for {} logits",
                targets.len(),
                n
            )));
        }
        let mut total = T::ZERO;
        {
            let l = logits.data();
            for (&z, &y) in l.iter().zip(targets) {
                let max_part = z.maximum(T::ZERO);
                total += max_part - z * y + (T::ONE + (-z.abs()).exp()).ln();
            }
        }
        let inv_n = T::ONE / T::from_f64(n as f64);
        let logits_c = logits.clone();
        let targets_owned: Vec<T> = targets.to_vec();
        Ok(Tensor::result_of(
            vec![],
            vec![total * inv_n],
            vec![logits.clone()],
            move |_out, g| {
                let l = logits_c.data();
                let scale = g[0] * inv_n;
                vec![Some(
                    l.iter()
                        .zip(&targets_owned)
                        .map(|(&z, &y)| {
                            let sig = if z >= T::ZERO {
                                T::ONE / (T::ONE + (-z).exp())
                            } else {
                                let e = z.exp();
                                e / (T::ONE + e)
                            };
                            scale * (sig - y)
                        })
                        .collect(),
                )]
            },
        ))
    }
}

#[derive(Clone, Copy)]
enum ZipKind {
    Add,
    Sub,
    Mul,
}

/// out += op(A) . op(B) with A viewed as m x k and B as k x n after the
/// requested transpositions. `out` must be m x n and pre-initialized.
pub(crate) fn gemm<T: Scalar>(
    out: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    debug_assert_eq!(out.len(), m * n);
    match (ta, tb) {
        (false, false) => {
            debug_assert_eq!(a.len(), m * k);
            debug_assert_eq!(b.len(), k * n);
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (l, &av) in arow.iter().enumerate() {
                    let brow = &b[l * n..(l + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, false) => {
            // a stored k x m
            debug_assert_eq!(a.len(), k * m);
            debug_assert_eq!(b.len(), k * n);
            for l in 0..k {
                let arow = &a[l * m..(l + 1) * m];
                let brow = &b[l * n..(l + 1) * n];
                for (i, &av) in arow.iter().enumerate() {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            // b stored n x k
            debug_assert_eq!(a.len(), m * k);
            debug_assert_eq!(b.len(), n * k);
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut s = T::ZERO;
                    for (&av, &bv) in arow.iter().zip(brow) {
                        s += av * bv;
                    }
                    out[i * n + j] += s;
                }
            }
        }
        (true, true) => {
            debug_assert_eq!(a.len(), k * m);
            debug_assert_eq!(b.len(), n * k);
            for i in 0..m {
                for j in 0..n {
                    let mut s = T::ZERO;
                    for l in 0..k {
                        s += a[l * m + i] * b[j * k + l];
                    }
                    out[i * n + j] += s;
                }
            }
        }
    }
}

fn permute_copy<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let ndim = shape.len();
    debug_assert_eq!(perm.len(), ndim);
    if ndim == 0 {
        return (vec![], data.to_vec());
    }
    let mut in_strides = vec![1usize; ndim];
    for d in (0..ndim - 1).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; ndim];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(data[off]);
        for d in (0..ndim).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}
