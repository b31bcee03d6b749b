//! Equal-frequency quantization of continuous fields.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fitted bin edges for one continuous field. Buckets are
/// (-inf, e0], (e0, e1], ..., (e_last, +inf); `lo`/`hi` record the observed
/// data range so bucket centers are defined for the outer buckets too.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuantizerSpec {
    pub field_name: String,
    pub bin_count: usize,
    pub bin_edges: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// Fit edges at empirical quantiles k/bin_count using midpoints between
/// adjacent order statistics, then deduplicate. With distinct values the
/// resulting bucket populations differ by at most one.
pub fn fit_quantizer(field_name: &str, values: &[f64], bin_count: usize) -> Result<QuantizerSpec> {
    if values.is_empty() {
        return Err(Error::Data(format!(
            "cannot fit quantizer for '{field_name}': no values"
        )));
    }
    if bin_count == 0 {
        return Err(Error::Data("bin_count must be at least 1".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value while fitting quantizer for '{field_name}'"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let lo = sorted[0];
    let hi = sorted[n - 1];

    let mut strict: Vec<f64> = Vec::new();
    if n > 1 {
        for k in 1..bin_count {
            let rank = (((k * n) as f64 / bin_count as f64).round() as usize).clamp(1, n - 1);
            // an edge between tied order statistics separates nothing
            if sorted[rank - 1] >= sorted[rank] {
                continue;
            }
            let edge = 0.5 * (sorted[rank - 1] + sorted[rank]);
            if strict.last().map_or(true, |&last| edge > last) {
                strict.push(edge);
            }
        }
    }
    Ok(QuantizerSpec {
        field_name: field_name.to_string(),
        bin_count: strict.len() + 1,
        bin_edges: strict,
        lo,
        hi,
    })
}

impl QuantizerSpec {
    /// Bucket index of a value: the number of edges strictly below it.
    pub fn quantize(&self, value: f64) -> usize {
        self.bin_edges.partition_point(|&e| e < value)
    }

    /// Representative value for a bucket; quantize(decode_center(b)) == b.
    pub fn decode_center(&self, bucket: usize) -> f64 {
        assert!(bucket < self.bin_count, "bucket {bucket} out of range");
        if self.bin_edges.is_empty() {
            return 0.5 * (self.lo + self.hi);
        }
        if bucket == 0 {
            let e0 = self.bin_edges[0];
            return if self.lo <= e0 { 0.5 * (self.lo + e0) } else { e0 };
        }
        if bucket == self.bin_edges.len() {
            let last = *self.bin_edges.last().unwrap();
            return if self.hi > last {
                0.5 * (last + self.hi)
            } else {
                last + 1.0
            };
        }
        0.5 * (self.bin_edges[bucket - 1] + self.bin_edges[bucket])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_split_of_four() {
        let q = fit_quantizer("x", &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(q.bin_edges, vec![2.5]);
        assert_eq!(q.bin_count, 2);
        assert_eq!(q.quantize(1.0), 0);
        assert_eq!(q.quantize(2.0), 0);
        assert_eq!(q.quantize(3.0), 1);
        assert_eq!(q.quantize(4.0), 1);
    }

    #[test]
    fn constant_field_collapses_to_one_bucket() {
        let q = fit_quantizer("x", &[5.0, 5.0, 5.0], 4).unwrap();
        assert_eq!(q.bin_count, 1);
        assert!(q.bin_edges.is_empty());
        assert_eq!(q.quantize(5.0), 0);
        assert_eq!(q.quantize(-100.0), 0);
    }

    #[test]
    fn nan_rejected() {
        assert!(fit_quantizer("x", &[1.0, f64::NAN], 2).is_err());
    }

    #[test]
    fn binary_search_bucketing() {
        let q = QuantizerSpec {
            field_name: "x".into(),
            bin_count: 3,
            bin_edges: vec![5.0, 10.0],
            lo: 0.0,
            hi: 20.0,
        };
        assert_eq!(q.quantize(7.3), 1);
        assert_eq!(q.quantize(4.9), 0);
        assert_eq!(q.quantize(5.0), 0); // values on an edge fall left
        assert_eq!(q.quantize(10.5), 2);
    }

    #[test]
    fn balanced_buckets_on_uniform_data() {
        let mut rng = crate::rng::Rng::from_seed(77);
        let values: Vec<f64> = (0..10_000).map(|_| rng.next_f64()).collect();
        let q = fit_quantizer("u", &values, 10).unwrap();
        assert_eq!(q.bin_count, 10);
        let mut counts = vec![0usize; 10];
        for &v in &values {
            counts[q.quantize(v)] += 1;
        }
        for (b, &c) in counts.iter().enumerate() {
            assert!(
                (c as i64 - 1000).unsigned_abs() <= 1,
                "bucket {b} holds {c} values"
            );
        }
    }

    #[test]
    fn center_round_trip_every_bucket() {
        let vals: Vec<f64> = (0..257).map(|i| (i as f64 * 0.37).sin() * 50.0).collect();
        let q = fit_quantizer("s", &vals, 16).unwrap();
        for b in 0..q.bin_count {
            assert_eq!(q.quantize(q.decode_center(b)), b, "bucket {b}");
        }
    }
}
