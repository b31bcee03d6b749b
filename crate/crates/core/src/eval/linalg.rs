//! Small dense f64 routines for the fidelity metrics: symmetric Jacobi
//! eigendecomposition and the PSD matrix square root built on it.

use crate::error::{Error, Result};

/// C = A . B for square n x n row-major matrices.
pub fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for l in 0..n {
            let av = a[i * n + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub fn trace(a: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_asymmetry(a: &[f64], n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    worst
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors) with A = V diag(w) V^T, V row-major
/// with eigenvectors in columns.
pub fn sym_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = frobenius(&m).max(1e-300);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rows/columns p and q of m
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    (w, v)
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// (numerical noise) are clamped to zero. The input must be symmetric within
/// an absolute tolerance scaled by its norm.
pub fn psd_sqrt(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::Shape(format!(
            "psd_sqrt got {} elements for n={n}",
            a.len()
        )));
    }
    let tol = 1e-8 * frobenius(a).max(1.0);
    let asym = max_asymmetry(a, n);
    if asym > tol {
        return Err(Error::Data(format!(
            "matrix asymmetry {asym:.3e} exceeds tolerance {tol:.3e}"
        )));
    }
    // symmetrize exactly before decomposing
    let mut sym = a.to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (sym[i * n + j] + sym[j * n + i]);
            sym[i * n + j] = avg;
            sym[j * n + i] = avg;
        }
    }
    let (w, v) = sym_eigen(&sym, n);
    let roots: Vec<f64> = w.iter().map(|&x| x.max(0.0).sqrt()).collect();
    // R = V diag(sqrt(w)) V^T
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..n {
                s += v[i * n + k] * roots[k] * v[j * n + k];
            }
            r[i * n + j] = s;
            r[j * n + i] = s;
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_psd(n: usize, rng: &mut Rng) -> Vec<f64> {
        // A = B^T B is PSD
        let b: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += b[k * n + i] * b[k * n + j];
                }
                a[i * n + j] = s;
            }
        }
        a
    }

    #[test]
    fn identity_root_is_identity() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let r = psd_sqrt(&eye, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((r[i * 3 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_root_analytic() {
        let a = vec![4.0, 0.0, 0.0, 9.0];
        let r = psd_sqrt(&a, 2).unwrap();
        assert!((r[0] - 2.0).abs() < 1e-12);
        assert!((r[3] - 3.0).abs() < 1e-12);
        assert!(r[1].abs() < 1e-12 && r[2].abs() < 1e-12);
    }

    #[test]
    fn reconstruction_on_random_psd() {
        let mut rng = Rng::from_seed(3);
        for &n in &[2usize, 5, 16, 33] {
            let a = random_psd(n, &mut rng);
            let r = psd_sqrt(&a, n).unwrap();
            let rr = matmul_sq(&r, &r, n);
            let err: f64 = rr
                .iter()
                .zip(&a)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
                / frobenius(&a);
            assert!(err < 1e-6, "n={n}: rel frobenius error {err:.3e}");
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = vec![1.0, 2.0, 0.0, 1.0];
        assert!(psd_sqrt(&a, 2).is_err());
    }

    #[test]
    fn eigen_reconstructs_symmetric_matrix() {
        let mut rng = Rng::from_seed(4);
        let n = 8;
        let a = random_psd(n, &mut rng);
        let (w, v) = sym_eigen(&a, n);
        // A v_k = w_k v_k
        for k in 0..n {
            for i in 0..n {
                let mut av = 0.0;
                for j in 0..n {
                    av += a[i * n + j] * v[j * n + k];
                }
                assert!(
                    (av - w[k] * v[i * n + k]).abs() < 1e-8 * frobenius(&a),
                    "eigenpair {k} row {i}"
                );
            }
        }
    }
}
