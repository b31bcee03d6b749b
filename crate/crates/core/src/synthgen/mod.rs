//! Rule-based stochastic data generators producing desk-scale corpora:
//! multi-user card transactions with rare temporal fraud bursts, and a
//! pollution-like multivariate series with two autoregressive targets.
//!
//! Every distributional choice lives in the config structs and is echoed
//! into a generator-spec sidecar next to each corpus, together with the
//! seed, so a corpus is fully described by its sidecar.

mod pollution;
mod transactions;

pub use pollution::{gen_pollution, pollution_sidecar, PollutionConfig, POLLUTION_HEADER};
pub use transactions::{
    gen_transactions, transactions_sidecar, TransactionConfig, TRANSACTION_HEADER,
};

use serde::Serialize;

/// Sidecar describing how a corpus was produced.
pub fn generator_spec_json<C: Serialize>(kind: &str, config: &C, seed: u64) -> String {
    #[derive(Serialize)]
    struct Sidecar<'a, C: Serialize> {
        generator: &'a str,
        seed: u64,
        config: &'a C,
    }
    serde_json::to_string_pretty(&Sidecar {
        generator: kind,
        seed,
        config,
    })
    .expect("sidecar serialization")
}
