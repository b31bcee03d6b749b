//! Fidelity metrics for synthetic data: per-field chi-squared histogram
//! distance over the quantized token space, and Frechet distance between
//! Gaussian summaries of TabBert window embeddings.

mod linalg;

pub use linalg::{matmul_sq, psd_sqrt, sym_eigen};

use crate::datapipe::WindowSample;
use crate::error::{Error, Result};
use crate::tabbert::{ColumnLayout, TabBert};
use linalg::{frobenius, max_asymmetry, trace};
use serde::Serialize;
use std::fmt::Write as _;

/// Proportions over one field's full local vocabulary (zero bins included).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldHistogram {
    pub field_name: String,
    pub proportions: Vec<f64>,
}

impl FieldHistogram {
    /// Histogram of column `col` over the windows' grids. Tokens outside the
    /// column's range ([UNK] from unseen test values) are skipped.
    pub fn from_windows(windows: &[WindowSample], col: usize, layout: &ColumnLayout) -> Self {
        let size = layout.sizes[col] as usize;
        let mut counts = vec![0u64; size];
        for w in windows {
            for r in 0..w.tokens.rows {
                if let Some(local) = layout.local_of_global(col, w.tokens.get(r, col)) {
                    counts[local as usize] += 1;
                }
            }
        }
        let total: u64 = counts.iter().sum();
        let denom = total.max(1) as f64;
        FieldHistogram {
            field_name: layout.names[col].clone(),
            proportions: counts.iter().map(|&c| c as f64 / denom).collect(),
        }
    }

    /// Shannon entropy in nats; zero bins contribute nothing.
    pub fn entropy(&self) -> f64 {
        -self
            .proportions
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

/// Half the sum of squared bin differences over bin sums; in [0,1] for
/// normalized histograms, zero iff identical, symmetric. Empty bins on both
/// sides contribute nothing.
pub fn chi2_distance(h1: &FieldHistogram, h2: &FieldHistogram) -> Result<f64> {
    if h1.field_name != h2.field_name || h1.proportions.len() != h2.proportions.len() {
        return Err(Error::Data(format!(
            "misaligned histograms: {} ({} bins) vs {} ({} bins)",
            h1.field_name,
            h1.proportions.len(),
            h2.field_name,
            h2.proportions.len()
        )));
    }
    let mut total = 0.0;
    for (&a, &b) in h1.proportions.iter().zip(&h2.proportions) {
        let denom = a + b;
        if denom > 0.0 {
            total += (a - b) * (a - b) / denom;
        }
    }
    Ok(0.5 * total)
}

/// Mean and covariance of a set of embedding vectors.
#[derive(Debug, Clone)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub dim: usize,
}

impl GaussianSummary {
    /// Unbiased (n-1) covariance; a small ridge is added when there are
    /// fewer samples than dimensions to keep the matrix well conditioned.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<GaussianSummary> {
        let n = vectors.len();
        if n < 2 {
            return Err(Error::Data(format!(
                "need at least 2 vectors for a Gaussian summary, got {n}"
            )));
        }
        let dim = vectors[0].len();
        for v in vectors {
            if v.len() != dim {
                return Err(Error::Data("embedding dimension mismatch".into()));
            }
        }
        let mut mean = vec![0.0; dim];
        for v in vectors {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; dim * dim];
        for v in vectors {
            for i in 0..dim {
                let di = v[i] - mean[i];
                for j in i..dim {
                    cov[i * dim + j] += di * (v[j] - mean[j]);
                }
            }
        }
        let norm = (n - 1) as f64;
        for i in 0..dim {
            for j in i..dim {
                let x = cov[i * dim + j] / norm;
                cov[i * dim + j] = x;
                cov[j * dim + i] = x;
            }
        }
        if n < dim {
            for i in 0..dim {
                cov[i * dim + i] += 1e-6;
            }
        }
        Ok(GaussianSummary {
            mean,
            covariance: cov,
            dim,
        })
    }

    pub fn check(&self) -> Result<()> {
        let tol = 1e-9 * frobenius(&self.covariance).max(1.0);
        let asym = max_asymmetry(&self.covariance, self.dim);
        if asym > tol {
            return Err(Error::Data(format!("covariance asymmetry {asym:.3e}")));
        }
        Ok(())
    }
}

/// Frechet distance between two Gaussian summaries, computed through the
/// symmetric reformulation tr((S_a^1/2 S_b S_a^1/2)^1/2) for stability.
pub fn fid_from_summaries(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Data(format!(
            "embedding dims differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    let n = a.dim;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    let root_a = psd_sqrt(&a.covariance, n)?;
    let inner = matmul_sq(&root_a, &matmul_sq(&b.covariance, &root_a, n), n);
    let cross = psd_sqrt(&inner, n)?;
    let value =
        mean_term + trace(&a.covariance, n) + trace(&b.covariance, n) - 2.0 * trace(&cross, n);
    // eigenvalue clamping guarantees non-negativity up to rounding dust
    Ok(if value < 0.0 && value > -1e-6 { 0.0 } else { value })
}

/// FID between two sets of embedding vectors.
pub fn fid(d_a: &[Vec<f64>], d_b: &[Vec<f64>]) -> Result<f64> {
    let a = GaussianSummary::from_vectors(d_a)?;
    let b = GaussianSummary::from_vectors(d_b)?;
    fid_from_summaries(&a, &b)
}

/// Embed windows with a frozen TabBert and return f64 vectors for FID.
pub fn embed_windows(model: &TabBert<f32>, windows: &[WindowSample]) -> Result<Vec<Vec<f64>>> {
    windows
        .iter()
        .map(|w| {
            Ok(model
                .extract_features(w)?
                .into_iter()
                .map(|x| x as f64)
                .collect())
        })
        .collect()
}

/// Pairwise FID over named datasets, embedding everything in one shared
/// TabBert space.
pub fn fid_matrix(
    model: &TabBert<f32>,
    datasets: &[(String, &[WindowSample])],
) -> Result<Vec<Vec<f64>>> {
    let summaries: Vec<GaussianSummary> = datasets
        .iter()
        .map(|(_, ws)| GaussianSummary::from_vectors(&embed_windows(model, ws)?))
        .collect::<Result<_>>()?;
    let k = summaries.len();
    let mut matrix = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let v = fid_from_summaries(&summaries[i], &summaries[j])?;
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    Ok(matrix)
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldReportRow {
    pub field: String,
    pub entropy_real: f64,
    pub entropy_gen: f64,
    pub chi2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityReport {
    pub vocab_fingerprint: String,
    pub fields: Vec<FieldReportRow>,
    pub dataset_names: Vec<String>,
    pub fid_matrix: Vec<Vec<f64>>,
}

impl FidelityReport {
    /// Tab-separated companion for external plotting: per-field rows then
    /// the FID matrix block.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("field\tentropy_real\tentropy_gen\tchi2\n");
        for row in &self.fields {
            writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}",
                row.field, row.entropy_real, row.entropy_gen, row.chi2
            )
            .unwrap();
        }
        out.push_str("\nfid\t");
        out.push_str(&self.dataset_names.join("\t"));
        out.push('\n');
        for (name, row) in self.dataset_names.iter().zip(&self.fid_matrix) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{}\t{}", name, cells.join("\t")).unwrap();
        }
        out
    }
}

/// Field-level and embedding-level comparison of real vs generated windows.
/// Both sides must be encoded under the model's vocabulary.
pub fn fidelity_report(
    model: &TabBert<f32>,
    real: &[WindowSample],
    generated: &[WindowSample],
) -> Result<FidelityReport> {
    let layout = &model.layout;
    for w in real.iter().chain(generated) {
        if w.tokens.cols != layout.n_columns() {
            return Err(Error::Fingerprint(
                "window width does not match the model's vocabulary".into(),
            ));
        }
    }
    let mut fields = Vec::with_capacity(layout.n_columns());
    for col in 0..layout.n_columns() {
        let hr = FieldHistogram::from_windows(real, col, layout);
        let hg = FieldHistogram::from_windows(generated, col, layout);
        fields.push(FieldReportRow {
            field: layout.names[col].clone(),
            entropy_real: hr.entropy(),
            entropy_gen: hg.entropy(),
            chi2: chi2_distance(&hr, &hg)?,
        });
    }
    let names = vec!["real".to_string(), "generated".to_string()];
    let matrix = fid_matrix(model, &[("real".into(), real), ("generated".into(), generated)])?;
    Ok(FidelityReport {
        vocab_fingerprint: model.vocab_fingerprint.clone(),
        fields,
        dataset_names: names,
        fid_matrix: matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn hist(name: &str, props: &[f64]) -> FieldHistogram {
        FieldHistogram {
            field_name: name.into(),
            proportions: props.to_vec(),
        }
    }

    #[test]
    fn chi2_identical_zero() {
        let h = hist("f", &[0.2, 0.3, 0.5]);
        assert_eq!(chi2_distance(&h, &h).unwrap(), 0.0);
    }

    #[test]
    fn chi2_disjoint_one() {
        let a = hist("f", &[1.0, 0.0]);
        let b = hist("f", &[0.0, 1.0]);
        assert_eq!(chi2_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn chi2_hand_computed_case() {
        let a = hist("f", &[0.5, 0.5]);
        let b = hist("f", &[0.25, 0.75]);
        // 0.5*(0.0625/0.75 + 0.0625/1.25) = 1/15
        let v = chi2_distance(&a, &b).unwrap();
        assert!((v - 1.0 / 15.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn chi2_symmetric_and_misalignment_rejected() {
        let a = hist("f", &[0.9, 0.1, 0.0]);
        let b = hist("f", &[0.2, 0.4, 0.4]);
        assert_eq!(chi2_distance(&a, &b).unwrap(), chi2_distance(&b, &a).unwrap());
        let short = hist("f", &[1.0]);
        assert!(chi2_distance(&a, &short).is_err());
        let other = hist("g", &[0.5, 0.5, 0.0]);
        assert!(chi2_distance(&a, &other).is_err());
    }

    #[test]
    fn entropy_constant_field_zero() {
        assert_eq!(hist("f", &[1.0, 0.0, 0.0]).entropy(), 0.0);
        let u = hist("f", &[0.25; 4]).entropy();
        assert!((u - 4.0f64.ln()).abs() < 1e-12);
    }

    fn random_cloud(n: usize, dim: usize, shift: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.normal() + shift).collect())
            .collect()
    }

    #[test]
    fn fid_self_is_zero() {
        let mut rng = Rng::from_seed(1);
        let d = random_cloud(50, 6, 0.0, &mut rng);
        let v = fid(&d, &d).unwrap();
        assert!(v.abs() < 1e-6, "FID(D,D) = {v}");
    }

    #[test]
    fn fid_equal_covariance_is_mean_distance() {
        let mut rng = Rng::from_seed(2);
        let d: Vec<Vec<f64>> = random_cloud(60, 4, 0.0, &mut rng);
        let shifted: Vec<Vec<f64>> = d.iter().map(|v| v.iter().map(|x| x + 2.0).collect()).collect();
        let v = fid(&d, &shifted).unwrap();
        // identical covariance: FID = ||mu_a - mu_b||^2 = 4 * 4.0
        assert!((v - 16.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn fid_matches_scalar_closed_form() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..20 {
            let a: Vec<Vec<f64>> = (0..40)
                .map(|_| vec![rng.normal_scaled(1.0, 2.0)])
                .collect();
            let b: Vec<Vec<f64>> = (0..40)
                .map(|_| vec![rng.normal_scaled(-0.5, 0.7)])
                .collect();
            let exact = {
                let stats = |d: &[Vec<f64>]| {
                    let n = d.len() as f64;
                    let mean = d.iter().map(|v| v[0]).sum::<f64>() / n;
                    let var = d.iter().map(|v| (v[0] - mean) * (v[0] - mean)).sum::<f64>() / (n - 1.0);
                    (mean, var.sqrt())
                };
                let (ma, sa) = stats(&a);
                let (mb, sb) = stats(&b);
                (ma - mb) * (ma - mb) + (sa - sb) * (sa - sb)
            };
            let v = fid(&a, &b).unwrap();
            assert!((v - exact).abs() < 1e-6, "fid {v} vs closed form {exact}");
        }
    }

    #[test]
    fn fid_needs_two_vectors_and_equal_dims() {
        assert!(fid(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(fid(
            &[vec![1.0], vec![2.0]],
            &[vec![1.0, 2.0], vec![2.0, 3.0]]
        )
        .is_err());
    }

    #[test]
    fn psd_sqrt_idempotence_on_projections() {
        // sqrt(sqrt(A)^4) == sqrt(A)^2 within tolerance
        let mut rng = Rng::from_seed(5);
        let n = 6;
        let b: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    a[i * n + j] += b[k * n + i] * b[k * n + j];
                }
            }
        }
        let r = psd_sqrt(&a, n).unwrap(); // sqrt(A)
        let r2 = matmul_sq(&r, &r, n); // A
        let r4 = matmul_sq(&r2, &r2, n); // A^2
        let back = psd_sqrt(&r4, n).unwrap(); // should be A
        let err: f64 = back
            .iter()
            .zip(&r2)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
            / frobenius(&r2);
        assert!(err < 1e-6, "idempotence violation {err:.3e}");
    }
}
