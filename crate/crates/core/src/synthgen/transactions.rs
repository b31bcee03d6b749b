//! Multi-user credit-card transaction generator.
//!
//! Legitimate rows follow per-user habits: a handful of preferred merchants
//! near home, log-normal amounts per merchant, peaked activity hours, and an
//! occasional single high-amount "splurge" so that one expensive row alone
//! is not suspicious. Fraud arrives as bursts of consecutive rows at
//! out-of-profile merchants with inflated amounts at small hours, making the
//! signal visible mainly in multi-row context.

use super::generator_spec_json;
use crate::datapipe::Table;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransactionConfig {
    pub n_users: usize,
    pub rows_per_user: usize,
    /// Expected fraction of rows that are fraudulent.
    pub fraud_row_rate: f64,
    pub n_merchants: usize,
    pub n_cities: usize,
    /// Consecutive fraudulent rows per burst.
    pub burst_len: usize,
    /// Probability a legitimate row is a high-amount splurge.
    pub splurge_rate: f64,
    /// Legitimate shopping sprees: runs of consecutive high-amount rows at
    /// preferred merchants, so a run of large amounts alone is not fraud.
    pub spree_start_rate: f64,
    pub spree_len: usize,
}

impl Default for TransactionConfig {
    fn default() -> Self {
        TransactionConfig {
            n_users: 50,
            rows_per_user: 2_000,
            fraud_row_rate: 0.015,
            n_merchants: 60,
            n_cities: 12,
            burst_len: 3,
            splurge_rate: 0.01,
            spree_start_rate: 0.012,
            spree_len: 3,
        }
    }
}

pub const TRANSACTION_HEADER: [&str; 12] = [
    "user",
    "timestamp",
    "card",
    "merchant",
    "city",
    "state",
    "zip",
    "mcc",
    "amount",
    "chip",
    "errors",
    "isFraud?",
];

struct UserProfile {
    user_id: String,
    cards: Vec<String>,
    merchants: Vec<usize>,
    merchant_weights: Vec<f64>,
    /// Log-space amount location per preferred merchant.
    amount_locs: Vec<f64>,
    /// Habitual shopping weekday per preferred merchant (0..7).
    merchant_dows: Vec<u32>,
    amount_scale: f64,
    peak_hours: Vec<u32>,
    online_rate: f64,
    home_city: usize,
}

const STATES: [&str; 6] = ["NY", "CA", "TX", "WA", "IL", "FL"];

fn city_name(i: usize) -> String {
    format!("city_{i:02}")
}

fn city_state(i: usize) -> &'static str {
    STATES[i % STATES.len()]
}

fn city_zip(i: usize) -> String {
    format!("{:05}", 10_000 + i * 731)
}

fn merchant_name(i: usize) -> String {
    format!("merchant_{i:03}")
}

fn merchant_mcc(i: usize) -> String {
    format!("{}", 5000 + (i * 37) % 600)
}

fn build_profile(cfg: &TransactionConfig, user: usize, rng: &mut Rng) -> UserProfile {
    let user_id = format!("user_{user:03}");
    let n_cards = if rng.bernoulli(0.7) { 1 } else { 2 };
    let cards = (0..n_cards).map(|k| format!("card_{user:03}_{k}")).collect();

    // users 0 and 1 are contrast users with deliberately divergent profiles
    let (merchants, base_amount, peak_hours, home_city): (Vec<usize>, f64, Vec<u32>, usize) =
        match user {
            0 => (vec![0, 1, 2, 3, 4], 12.0, vec![8, 12], 0),
            1 => (
                (cfg.n_merchants - 5..cfg.n_merchants).collect(),
                420.0,
                vec![20, 22],
                cfg.n_cities - 1,
            ),
            _ => {
                let count = 4 + rng.below(3);
                let merchants: Vec<usize> =
                    (0..count).map(|_| rng.below(cfg.n_merchants)).collect();
                let base = 8.0 + rng.next_f64() * 120.0;
                let first_peak = 7 + rng.below(12) as u32;
                let peaks = vec![first_peak, (first_peak + 5 + rng.below(5) as u32) % 24];
                (merchants, base, peaks, rng.below(cfg.n_cities))
            }
        };
    let merchant_weights: Vec<f64> = (0..merchants.len())
        .map(|i| 1.0 / (1.0 + i as f64).powi(2)) // sharply peaked preference
        .collect();
    let amount_locs: Vec<f64> = merchants
        .iter()
        .map(|_| (base_amount * (0.5 + rng.next_f64())).ln())
        .collect();
    let merchant_dows: Vec<u32> = merchants.iter().map(|_| rng.below(7) as u32).collect();
    UserProfile {
        user_id,
        cards,
        merchants,
        merchant_weights,
        amount_locs,
        merchant_dows,
        amount_scale: 0.0,
        peak_hours,
        online_rate: 0.05,
        home_city,
    }
}

/// Generate the corpus. Rows come out chronologically ordered per user,
/// users concatenated in id order; byte-identical for identical seeds.
pub fn gen_transactions(cfg: &TransactionConfig, seed: u64) -> Table {
    assert!(cfg.n_users > 0 && cfg.rows_per_user > 0);
    assert!(cfg.burst_len >= 1);
    let root = Rng::from_seed(seed).substream("transactions");
    let burst_start_rate = cfg.fraud_row_rate / cfg.burst_len as f64;

    let mut rows = Vec::with_capacity(cfg.n_users * cfg.rows_per_user);
    let profiles: Vec<UserProfile> = (0..cfg.n_users)
        .map(|user| build_profile(cfg, user, &mut root.substream_n(user as u64)))
        .collect();
    // merchants that are legitimate somewhere in the corpus; fraud draws
    // from these so a fraudulent merchant is only unusual relative to the
    // cardholder, never globally novel
    let mut known_merchants: Vec<usize> = profiles
        .iter()
        .flat_map(|p| p.merchants.iter().copied())
        .collect();
    known_merchants.sort_unstable();
    known_merchants.dedup();
    for user in 0..cfg.n_users {
        let mut rng = root.substream_n(user as u64).substream("rows");
        let profile = &profiles[user];
        let mut foreign: Vec<usize> = known_merchants
            .iter()
            .copied()
            .filter(|m| !profile.merchants.contains(m))
            .collect();
        if foreign.is_empty() {
            // single-user corpora: fall back to the global pool
            foreign = (0..cfg.n_merchants)
                .filter(|m| !profile.merchants.contains(m))
                .collect();
        }
        let mut epoch_day: i64 = 18_000 + rng.below(300) as i64;
        let mut last_secs: i64 = 0;
        let mut burst_left = 0usize;
        let mut spree_left = 0usize;
        let mut spree_city = profile.home_city;

        let mut emitted = 0usize;
        while emitted < cfg.rows_per_user {
            let fraud = if burst_left > 0 {
                true
            } else if spree_left == 0
                && rng.bernoulli(burst_start_rate)
                && emitted + cfg.burst_len <= cfg.rows_per_user
            {
                burst_left = cfg.burst_len;
                true
            } else {
                false
            };

            if fraud {
                burst_left -= 1;
                // a stolen-card burst: card-not-present purchases at
                // merchants outside this user's habits (each legitimate for
                // some other user), spree-sized amounts at the user's usual
                // hour, and spoofed geography whose zip/state do not match
                // the city column
                let merchant = foreign[rng.below(foreign.len())];
                let pref = rng.below(profile.merchants.len());
                let amount =
                    profile.amount_locs[pref].exp() * (3.0 + rng.next_f64() * 2.0);
                let city = rng.below(cfg.n_cities);
                let geo = (city + 1 + rng.below(cfg.n_cities - 1)) % cfg.n_cities;
                epoch_day += 1;
                let hour = profile.peak_hours[0];
                let secs_in_day = (hour as i64) * 3_600 + rng.below(3_600) as i64;
                last_secs = last_secs.max(epoch_day * 86_400 + secs_in_day) + 60;
                rows.push(vec![
                    profile.user_id.clone(),
                    last_secs.to_string(),
                    profile.cards[0].clone(),
                    merchant_name(merchant),
                    city_name(city),
                    city_state(geo).to_string(),
                    city_zip(geo),
                    merchant_mcc(merchant),
                    format!("{amount:.2}"),
                    "online".to_string(),
                    "none".to_string(),
                    "1".to_string(),
                ]);
                emitted += 1;
                continue;
            }

            if spree_left == 0
                && rng.bernoulli(cfg.spree_start_rate)
                && emitted + cfg.spree_len <= cfg.rows_per_user
            {
                spree_left = cfg.spree_len;
                // sprees are online shopping trips away from home, so a
                // burst-shaped online/high-amount run is exactly as
                // legitimate as it is fraudulent
                spree_city = rng.below(cfg.n_cities);
            }
            let spree = spree_left > 0;
            if spree {
                spree_left -= 1;
            }
            let pick = rng.weighted(&profile.merchant_weights);
            let merchant = profile.merchants[pick];
            let loc = profile.amount_locs[pick];
            let mut amount = rng.log_normal(loc, profile.amount_scale);
            if spree || rng.bernoulli(cfg.splurge_rate) {
                amount *= 3.0 + rng.next_f64() * 2.0;
            }
            // each preferred merchant has a habitual hour and weekday;
            // spree rows cluster like fraud bursts do
            let hour = profile.peak_hours[pick % profile.peak_hours.len()];
            let dow = (!spree).then_some(profile.merchant_dows[pick]);
            let chip = if spree || rng.bernoulli(profile.online_rate) {
                "online"
            } else if rng.bernoulli(0.05) {
                "swipe"
            } else {
                "chip"
            };
            // occasional travel so an away-from-home city alone is not a
            // fraud marker
            let city = if spree {
                spree_city
            } else if rng.bernoulli(0.03) {
                rng.below(cfg.n_cities)
            } else {
                profile.home_city
            };
            let continuing = spree && spree_left + 1 < cfg.spree_len;

            // spree continuations cluster within an hour; ordinary rows
            // jump to the merchant's habitual weekday (1..=7 days on)
            if continuing {
                last_secs += 60 + rng.below(600) as i64;
            } else {
                match dow {
                    Some(d) => loop {
                        epoch_day += 1;
                        if ((epoch_day + 3).rem_euclid(7)) as u32 == d {
                            break;
                        }
                    },
                    None => epoch_day += 1,
                }
                let secs_in_day = (hour as i64) * 3_600 + rng.below(3_600) as i64;
                let candidate = epoch_day * 86_400 + secs_in_day;
                last_secs = if candidate <= last_secs {
                    epoch_day += 7; // stay on the same weekday
                    epoch_day * 86_400 + secs_in_day
                } else {
                    candidate
                };
            }

            let errors = if rng.bernoulli(0.005) { "err_decline" } else { "none" };
            let card = profile.cards
                [if profile.cards.len() > 1 && rng.bernoulli(0.15) { 1 } else { 0 }]
            .clone();
            rows.push(vec![
                profile.user_id.clone(),
                last_secs.to_string(),
                card.clone(),
                merchant_name(merchant),
                city_name(city),
                city_state(city).to_string(),
                city_zip(city),
                merchant_mcc(merchant),
                format!("{amount:.2}"),
                chip.to_string(),
                errors.to_string(),
                "0".to_string(),
            ]);
            emitted += 1;
        }
    }
    Table {
        header: TRANSACTION_HEADER.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}


pub fn transactions_sidecar(cfg: &TransactionConfig, seed: u64) -> String {
    generator_spec_json("transactions", cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TransactionConfig {
        TransactionConfig {
            n_users: 6,
            rows_per_user: 400,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_transactions(&small_cfg(), 7);
        let b = gen_transactions(&small_cfg(), 7);
        assert_eq!(a.rows, b.rows);
        let c = gen_transactions(&small_cfg(), 8);
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn twelve_columns_and_count() {
        let t = gen_transactions(&small_cfg(), 1);
        assert_eq!(t.header.len(), 12);
        assert_eq!(t.rows.len(), 6 * 400);
        assert!(t.rows.iter().all(|r| r.len() == 12));
    }

    #[test]
    fn chronological_per_user() {
        let t = gen_transactions(&small_cfg(), 2);
        let mut last: Option<(String, i64)> = None;
        for row in &t.rows {
            let ts: i64 = row[1].parse().unwrap();
            if let Some((user, prev)) = &last {
                if user == &row[0] {
                    assert!(ts > *prev, "timestamps must strictly increase per user");
                }
            }
            last = Some((row[0].clone(), ts));
        }
    }

    #[test]
    fn fraud_rate_near_configured() {
        let cfg = TransactionConfig {
            n_users: 20,
            rows_per_user: 2_000,
            ..Default::default()
        };
        let t = gen_transactions(&cfg, 3);
        let frauds = t.rows.iter().filter(|r| r[11] == "1").count();
        let rate = frauds as f64 / t.rows.len() as f64;
        let lo = cfg.fraud_row_rate * 0.8;
        let hi = cfg.fraud_row_rate * 1.2;
        assert!(rate > lo && rate < hi, "fraud row rate {rate} outside [{lo},{hi}]");
    }

    #[test]
    fn bursts_are_consecutive() {
        let t = gen_transactions(&small_cfg(), 4);
        // every fraud run has length >= burst_len within a user
        let mut run = 0usize;
        let mut prev_user = String::new();
        for row in &t.rows {
            if row[0] != prev_user {
                run = 0;
                prev_user = row[0].clone();
            }
            if row[11] == "1" {
                run += 1;
            } else {
                if run > 0 {
                    assert!(run >= 3, "fraud run of {run} shorter than burst");
                }
                run = 0;
            }
        }
    }

    #[test]
    fn sidecar_mentions_seed_and_params() {
        let s = transactions_sidecar(&small_cfg(), 42);
        assert!(s.contains("\"seed\": 42"));
        assert!(s.contains("fraud_row_rate"));
    }
}
