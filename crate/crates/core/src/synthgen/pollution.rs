//! Pollution-style multivariate series: hourly weather drivers plus two
//! lag-1 autoregressive particulate targets, so temporal context carries
//! real predictive signal.

use super::generator_spec_json;
use crate::datapipe::Table;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PollutionConfig {
    pub n_sites: usize,
    pub rows_per_site: usize,
    /// Lag-1 coefficient of the particulate processes.
    pub persistence: f64,
}

impl Default for PollutionConfig {
    fn default() -> Self {
        PollutionConfig {
            n_sites: 4,
            rows_per_site: 3_000,
            persistence: 0.8,
        }
    }
}

pub const POLLUTION_HEADER: [&str; 11] = [
    "site",
    "timestamp",
    "temperature",
    "pressure",
    "dewpoint",
    "humidity",
    "wind_dir",
    "wind_speed",
    "precipitation",
    "pm25",
    "pm10",
];

const WIND_DIRS: [&str; 8] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"];

pub fn gen_pollution(cfg: &PollutionConfig, seed: u64) -> Table {
    assert!(cfg.n_sites > 0 && cfg.rows_per_site > 0);
    let root = Rng::from_seed(seed).substream("pollution");
    let mut rows = Vec::with_capacity(cfg.n_sites * cfg.rows_per_site);
    for site in 0..cfg.n_sites {
        let mut rng = root.substream_n(site as u64);
        let site_id = format!("site_{site:02}");
        let site_level = 30.0 + rng.next_f64() * 40.0; // baseline pm level
        let mut temp = 10.0 + rng.next_f64() * 10.0;
        let mut pressure = 1_013.0 + rng.normal() * 3.0;
        let mut wind = 2.0 + rng.next_f64() * 3.0;
        let mut dir_idx = rng.below(8);
        let mut pm25 = site_level;
        let mut pm10: f64 = site_level * 1.4;
        let start = 15_000 * 86_400 + rng.below(86_400) as i64;
        for t in 0..cfg.rows_per_site {
            let hour = ((start / 3_600 + t as i64) % 24) as f64;
            // slow AR weather with a daily temperature cycle
            let diurnal = 5.0 * ((hour - 14.0) * std::f64::consts::PI / 12.0).cos();
            temp = 0.95 * temp + 0.05 * (12.0 + diurnal) + rng.normal() * 0.4;
            pressure = 0.98 * pressure + 0.02 * 1_013.0 + rng.normal() * 0.5;
            wind = (0.9 * wind + 0.1 * 3.0 + rng.normal() * 0.5).max(0.0);
            if rng.bernoulli(0.05) {
                dir_idx = rng.below(8);
            }
            let dewpoint = temp - (2.0 + rng.next_f64() * 6.0);
            let humidity = (55.0 + (dewpoint - temp) * 3.0 + rng.normal() * 5.0).clamp(10.0, 100.0);
            let rain = if rng.bernoulli(0.07) {
                rng.next_f64() * 4.0
            } else {
                0.0
            };

            // particulates: persistent, fed by weather, washed out by rain
            let drive = site_level * 0.2 + (5.0 - wind).max(0.0) * 2.0 + (humidity - 55.0) * 0.12
                - rain * 4.0;
            pm25 = (cfg.persistence * pm25 + (1.0 - cfg.persistence) * drive.max(0.0)
                + rng.normal() * 2.0)
                .max(1.0);
            pm10 = (cfg.persistence * pm10
                + (1.0 - cfg.persistence) * (drive.max(0.0) * 1.5 + 4.0)
                + rng.normal() * 3.0)
                .max(1.0);

            rows.push(vec![
                site_id.clone(),
                (start + t as i64 * 3_600).to_string(),
                format!("{temp:.2}"),
                format!("{pressure:.2}"),
                format!("{dewpoint:.2}"),
                format!("{humidity:.2}"),
                WIND_DIRS[dir_idx].to_string(),
                format!("{wind:.2}"),
                format!("{rain:.2}"),
                format!("{pm25:.2}"),
                format!("{pm10:.2}"),
            ]);
        }
    }
    Table {
        header: POLLUTION_HEADER.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}

pub fn pollution_sidecar(cfg: &PollutionConfig, seed: u64) -> String {
    generator_spec_json("pollution", cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_columns_and_determinism() {
        let cfg = PollutionConfig {
            n_sites: 2,
            rows_per_site: 500,
            ..Default::default()
        };
        let a = gen_pollution(&cfg, 5);
        assert_eq!(a.header.len(), 11);
        assert_eq!(a.rows.len(), 1_000);
        let b = gen_pollution(&cfg, 5);
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn targets_have_strong_lag1_autocorrelation() {
        let cfg = PollutionConfig {
            n_sites: 1,
            rows_per_site: 2_000,
            ..Default::default()
        };
        let t = gen_pollution(&cfg, 9);
        let pm25: Vec<f64> = t.rows.iter().map(|r| r[9].parse().unwrap()).collect();
        let n = pm25.len();
        let mean = pm25.iter().sum::<f64>() / n as f64;
        let var: f64 = pm25.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let cov: f64 = pm25
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        let rho = cov / var;
        assert!(rho > 0.5, "lag-1 autocorrelation {rho} too small");
    }

    #[test]
    fn hourly_timestamps() {
        let cfg = PollutionConfig {
            n_sites: 1,
            rows_per_site: 10,
            ..Default::default()
        };
        let t = gen_pollution(&cfg, 1);
        let ts: Vec<i64> = t.rows.iter().map(|r| r[1].parse().unwrap()).collect();
        assert!(ts.windows(2).all(|w| w[1] - w[0] == 3_600));
    }
}
