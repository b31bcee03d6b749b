//! Per-command run configs. Files are JSON; unknown keys are rejected and
//! every stochastic command requires a seed (CLI `--seed` overrides it).

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use tabseq::datapipe::{BinConfig, TypeHints};
use tabseq::heads::DownstreamConfig;
use tabseq::synthgen::{PollutionConfig, TransactionConfig};
use tabseq::tabbert::{PretrainConfig, TabBertConfig};
use tabseq::tabgpt::{GptTrainConfig, Sampling, TabGptConfig};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Transactions,
    Pollution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub seed: u64,
    pub kind: DataKind,
    #[serde(default)]
    pub transactions: TransactionConfig,
    #[serde(default)]
    pub pollution: PollutionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildVocabConfig {
    pub input: PathBuf,
    pub hints: TypeHints,
    #[serde(default)]
    pub bins: BinConfig,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
}

fn default_train_frac() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub t: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { t: 10, stride: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainBertConfig {
    pub seed: u64,
    pub input: PathBuf,
    pub codec_dir: PathBuf,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub model: TabBertConfig,
    #[serde(default)]
    pub train: PretrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractFeaturesConfig {
    pub input: PathBuf,
    pub codec_dir: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub window: WindowConfig,
    /// Which split of each entity's rows to featurize.
    #[serde(default)]
    pub split: SplitChoice,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    #[default]
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamRunConfig {
    pub seed: u64,
    pub input: PathBuf,
    pub codec_dir: PathBuf,
    /// Required when the feature source is tabbert.
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_downstream_window")]
    pub window: WindowConfig,
    #[serde(default)]
    pub task: DownstreamConfig,
}

fn default_downstream_window() -> WindowConfig {
    WindowConfig { t: 10, stride: 10 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainGptConfig {
    pub seed: u64,
    pub input: PathBuf,
    pub codec_dir: PathBuf,
    pub user: String,
    #[serde(default = "default_gpt_window_t")]
    pub window_t: usize,
    #[serde(default)]
    pub model: TabGptConfig,
    #[serde(default)]
    pub train: GptTrainConfig,
}

fn default_gpt_window_t() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub input: PathBuf,
    pub codec_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub user: String,
    #[serde(default = "default_gpt_window_t")]
    pub window_t: usize,
    #[serde(default)]
    pub sampling: SamplingConfig,
    /// Also write token grids for exact-space evaluation.
    #[serde(default = "default_true")]
    pub emit_grids: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub temperature: f64,
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Greedy,
    Temperature,
    TopK,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            mode: SamplingMode::Temperature,
            temperature: 1.0,
            top_k: 10,
        }
    }
}

impl SamplingConfig {
    pub fn to_sampling(&self) -> Sampling {
        match self.mode {
            SamplingMode::Greedy => Sampling::Greedy,
            SamplingMode::Temperature => Sampling::Temperature {
                temperature: self.temperature,
            },
            SamplingMode::TopK => Sampling::TopK {
                k: self.top_k,
                temperature: self.temperature,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub real: PathBuf,
    /// Generated token grids (.grids.jsonl) or a CSV to re-encode.
    pub generated: PathBuf,
    pub codec_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Restrict the real side to one entity.
    pub user: Option<String>,
    #[serde(default)]
    pub window: WindowConfig,
}
