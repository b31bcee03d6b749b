//! Downstream task harness: MLP and LSTM heads over raw embedded features
//! or frozen TabBert features, for binary classification (F1) and two-target
//! regression (combined RMSE), with minority upsampling for imbalanced data.
//!
//! The raw path trains its embedding table end-to-end with the head; the
//! TabBert path precomputes features with the backbone frozen and never
//! touches backbone weights.

use crate::datapipe::WindowSample;
use crate::error::{Error, Result};
use crate::nn::{Embedding, Linear, Lstm, LstmConfig, Mlp};
use crate::rng::Rng;
use crate::tabbert::TabBert;
use crate::tensor::{no_grad, Adam, AdamConfig, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Raw,
    Tabbert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Mlp,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    pub feature_source: FeatureSource,
    pub head: HeadKind,
    pub task: TaskKind,
    pub upsample: bool,
    /// Hidden widths of the head (MLP hidden layers / LSTM hidden size).
    pub head_dims: Vec<usize>,
    /// Embedding dim for the raw path.
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            feature_source: FeatureSource::Raw,
            head: HeadKind::Mlp,
            task: TaskKind::Classification,
            upsample: true,
            head_dims: vec![64, 32],
            embed_dim: 64,
            epochs: 4,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub f1_binary: Option<f64>,
    pub rmse_combined: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl TaskMetrics {
    pub fn from_confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> TaskMetrics {
        let precision = tp as f64 / (tp + fp).max(1) as f64;
        let recall = tp as f64 / (tp + fn_).max(1) as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        TaskMetrics {
            f1_binary: Some(f1),
            rmse_combined: None,
            tp,
            fp,
            fn_,
            tn,
        }
    }

    /// RMSE over the concatenated error vector of all targets.
    pub fn from_regression(errors: &[f64]) -> TaskMetrics {
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len().max(1) as f64;
        TaskMetrics {
            f1_binary: None,
            rmse_combined: Some(mse.sqrt()),
            ..Default::default()
        }
    }
}

/// Structured result of one downstream run.
#[derive(Debug, Clone, Serialize)]
pub struct DownstreamReport {
    pub config: DownstreamConfig,
    pub seed: u64,
    pub train_size: usize,
    pub train_size_after_upsampling: usize,
    pub test_size: usize,
    pub metrics: TaskMetrics,
}

/// Duplicate minority-class samples (with replacement) until class counts
/// are equal. The input is never mutated; the test split never goes through
/// here.
pub fn upsample_minority(windows: &[WindowSample], rng: &mut Rng) -> Result<Vec<WindowSample>> {
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        match w.label {
            Some(1) => pos.push(i),
            Some(0) => neg.push(i),
            _ => return Err(Error::Data("window without a binary label".into())),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data(
            "single-class training set cannot be upsampled".into(),
        ));
    }
    let (minority, majority_count) = if pos.len() < neg.len() {
        (pos, neg.len())
    } else {
        (neg, pos.len())
    };
    let mut out: Vec<WindowSample> = windows.to_vec();
    let deficit = majority_count - minority.len();
    for _ in 0..deficit {
        let pick = minority[rng.below(minority.len())];
        out.push(windows[pick].clone());
    }
    Ok(out)
}

/// Frozen or trainable per-window inputs for the head.
enum WindowInput {
    /// Raw path: grid token ids, embedded on the fly.
    Grid(Vec<u32>, usize, usize), // flat ids, rows, cols
    /// TabBert path: precomputed row features [t, d].
    Features(Tensor<f32>),
}

struct DownstreamModel {
    raw_embedding: Option<Embedding<f32>>,
    head: HeadModel,
    out_dim: usize,
}

enum HeadModel {
    Mlp(Mlp<f32>),
    Lstm { lstm: Lstm<f32>, out: Linear<f32> },
}

impl DownstreamModel {
    fn new(cfg: &DownstreamConfig, feature_dim: usize, global_vocab: usize, rng: &mut Rng) -> Self {
        let out_dim = match cfg.task {
            TaskKind::Classification => 1,
            TaskKind::Regression => 2,
        };
        let raw_embedding = match cfg.feature_source {
            FeatureSource::Raw => Some(Embedding::new(global_vocab, cfg.embed_dim, rng)),
            FeatureSource::Tabbert => None,
        };
        let head = match cfg.head {
            HeadKind::Mlp => {
                let mut dims = vec![feature_dim];
                dims.extend_from_slice(&cfg.head_dims);
                dims.push(out_dim);
                HeadModel::Mlp(Mlp::new(&dims, rng))
            }
            HeadKind::Lstm => {
                let hidden = cfg.head_dims.first().copied().unwrap_or(64);
                HeadModel::Lstm {
                    lstm: Lstm::new(
                        LstmConfig {
                            input_dim: feature_dim,
                            hidden_dim: hidden,
                        },
                        rng,
                    ),
                    out: Linear::new(hidden, out_dim, true, rng),
                }
            }
        };
        DownstreamModel {
            raw_embedding,
            head,
            out_dim,
        }
    }

    /// Per-row feature sequence [t, d] for one window.
    fn row_features(&self, input: &WindowInput) -> Result<Tensor<f32>> {
        match input {
            WindowInput::Features(f) => Ok(f.clone()),
            WindowInput::Grid(ids, rows, cols) => {
                let emb = self
                    .raw_embedding
                    .as_ref()
                    .expect("raw path without embedding")
                    .lookup(ids)?; // [t*n, e]
                let e = emb.shape()[1];
                // per-row mean pooling of field embeddings
                Ok(emb.reshape(&[*rows, *cols, e]).mean_axis(1))
            }
        }
    }

    /// Head output, shape [out_dim].
    fn forward(&self, input: &WindowInput) -> Result<Tensor<f32>> {
        let rows = self.row_features(input)?; // [t, d]
        Ok(match &self.head {
            HeadModel::Mlp(mlp) => {
                let pooled = rows.mean_axis(0); // order-free summary
                let d = pooled.numel();
                mlp.forward(&pooled.reshape(&[1, d])).reshape(&[self.out_dim])
            }
            HeadModel::Lstm { lstm, out } => {
                let (_, last) = lstm.forward(&rows);
                out.forward(&last).reshape(&[self.out_dim])
            }
        })
    }

    fn params(&self) -> Vec<Tensor<f32>> {
        let mut out = Vec::new();
        if let Some(e) = &self.raw_embedding {
            e.params(&mut out);
        }
        match &self.head {
            HeadModel::Mlp(m) => m.params(&mut out),
            HeadModel::Lstm { lstm, out: o } => {
                lstm.params(&mut out);
                o.params(&mut out);
            }
        }
        out
    }
}

/// Per-dimension standardization fitted on training features, applied to
/// both splits; frozen features arrive at whatever scale pretraining left
/// them, so the head benefits from a normalized view.
struct FeatureScaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureScaler {
    fn fit(rows: &[Vec<f32>]) -> FeatureScaler {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0f64; d];
        for r in rows {
            for (m, &x) in mean.iter_mut().zip(r) {
                *m += x as f64;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0f64; d];
        for r in rows {
            for (k, &x) in r.iter().enumerate() {
                let dx = x as f64 - mean[k];
                var[k] += dx * dx;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(1e-6)).collect();
        FeatureScaler { mean, std }
    }

    fn apply(&self, row: &mut [f32]) {
        for (k, x) in row.iter_mut().enumerate() {
            *x = ((*x as f64 - self.mean[k]) / self.std[k]) as f32;
        }
    }
}

fn extract_feature_rows(
    model: &TabBert<f32>,
    windows: &[WindowSample],
) -> Result<Vec<Vec<Vec<f32>>>> {
    windows.iter().map(|w| model.extract_row_features(w)).collect()
}

fn prepare_inputs(
    cfg: &DownstreamConfig,
    windows: &[WindowSample],
    backbone: Option<&TabBert<f32>>,
    scaler: Option<&FeatureScaler>,
) -> Result<Vec<WindowInput>> {
    match cfg.feature_source {
        FeatureSource::Raw => Ok(windows
            .iter()
            .map(|w| WindowInput::Grid(w.tokens.ids.clone(), w.tokens.rows, w.tokens.cols))
            .collect()),
        FeatureSource::Tabbert => {
            let model = backbone.ok_or_else(|| {
                Error::Config("tabbert feature source requires a backbone checkpoint".into())
            })?;
            let d = model.config.seq_dim;
            extract_feature_rows(model, windows)?
                .into_iter()
                .zip(windows)
                .map(|(mut rows, w)| {
                    if let Some(s) = scaler {
                        for r in rows.iter_mut() {
                            s.apply(r);
                        }
                    }
                    let flat: Vec<f32> = rows.into_iter().flatten().collect();
                    Ok(WindowInput::Features(Tensor::from_vec(
                        &[w.tokens.rows, d],
                        flat,
                    )))
                })
                .collect()
        }
    }
}

/// Train a head and evaluate on the test split. Backbone weights are never
/// updated (the TabBert path reads features through `no_grad`).
pub fn train_downstream(
    cfg: &DownstreamConfig,
    train: &[WindowSample],
    test: &[WindowSample],
    backbone: Option<&TabBert<f32>>,
    seed: u64,
) -> Result<DownstreamReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("empty train or test split".into()));
    }
    let root = Rng::from_seed(seed);
    let mut init_rng = root.substream("head-init");
    let mut order_rng = root.substream("head-order");

    // upsampling applies to the training split only
    let train_owned: Vec<WindowSample> =
        if cfg.upsample && cfg.task == TaskKind::Classification {
            upsample_minority(train, &mut root.substream("upsample"))?
        } else {
            train.to_vec()
        };

    // regression targets are standardized for training, reported raw
    let (t_mean, t_std) = match cfg.task {
        TaskKind::Regression => target_stats(&train_owned)?,
        TaskKind::Classification => (Vec::new(), Vec::new()),
    };

    let feature_dim = match cfg.feature_source {
        FeatureSource::Raw => cfg.embed_dim,
        FeatureSource::Tabbert => {
            backbone
                .ok_or_else(|| {
                    Error::Config("tabbert feature source requires a backbone checkpoint".into())
                })?
                .config
                .seq_dim
        }
    };
    let global_vocab = backbone.map(|b| b.layout.global_size as usize).unwrap_or(0);
    let global_vocab = if cfg.feature_source == FeatureSource::Raw {
        train
            .iter()
            .chain(test.iter())
            .flat_map(|w| w.tokens.ids.iter())
            .max()
            .map(|&m| m as usize + 1)
            .unwrap_or(global_vocab.max(1))
    } else {
        global_vocab
    };

    let model = DownstreamModel::new(cfg, feature_dim, global_vocab, &mut init_rng);
    let params = model.params();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));

    let scaler = match cfg.feature_source {
        FeatureSource::Tabbert => {
            let rows = extract_feature_rows(backbone.unwrap(), train)?;
            let flat: Vec<Vec<f32>> = rows.into_iter().flatten().collect();
            Some(FeatureScaler::fit(&flat))
        }
        FeatureSource::Raw => None,
    };
    let inputs = prepare_inputs(cfg, &train_owned, backbone, scaler.as_ref())?;
    let mut indices: Vec<usize> = (0..train_owned.len()).collect();
    for _epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut indices);
        for batch in indices.chunks(cfg.batch_size) {
            let mut outputs = Vec::with_capacity(batch.len());
            for &i in batch {
                outputs.push(model.forward(&inputs[i])?);
            }
            let refs: Vec<&Tensor<f32>> = outputs.iter().collect();
            let stacked = Tensor::stack(&refs); // [b, out_dim]
            let loss = match cfg.task {
                TaskKind::Classification => {
                    let targets: Vec<f32> = batch
                        .iter()
                        .map(|&i| train_owned[i].label.unwrap() as f32)
                        .collect();
                    Tensor::bce_with_logits(&stacked.reshape(&[batch.len()]), &targets)?
                }
                TaskKind::Regression => {
                    let mut targets = Vec::with_capacity(batch.len() * 2);
                    for &i in batch {
                        let t = train_owned[i].targets.as_ref().unwrap();
                        for (k, &v) in t.iter().enumerate() {
                            targets.push(((v - t_mean[k]) / t_std[k]) as f32);
                        }
                    }
                    let target_t = Tensor::from_vec(&[batch.len(), t_mean.len()], targets);
                    let diff = stacked.sub(&target_t);
                    diff.mul(&diff).mean_all()
                }
            };
            loss.backward()?;
            opt.step(&params);
        }
    }

    // evaluation on the raw test distribution
    let test_inputs = prepare_inputs(cfg, test, backbone, scaler.as_ref())?;
    let metrics = no_grad(|| -> Result<TaskMetrics> {
        match cfg.task {
            TaskKind::Classification => {
                let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
                for (input, w) in test_inputs.iter().zip(test) {
                    let logit = model.forward(input)?.item();
                    let prob = 1.0 / (1.0 + (-logit as f64).exp());
                    let pred = (prob >= 0.5) as u8;
                    match (pred, w.label.unwrap()) {
                        (1, 1) => tp += 1,
                        (1, 0) => fp += 1,
                        (0, 1) => fn_ += 1,
                        (0, 0) => tn += 1,
                        _ => unreachable!(),
                    }
                }
                Ok(TaskMetrics::from_confusion(tp, fp, fn_, tn))
            }
            TaskKind::Regression => {
                let mut errors = Vec::with_capacity(test.len() * 2);
                for (input, w) in test_inputs.iter().zip(test) {
                    let pred = model.forward(input)?.to_vec();
                    let truth = w.targets.as_ref().unwrap();
                    for (k, (&p, &t)) in pred.iter().zip(truth).enumerate() {
                        let denorm = p as f64 * t_std[k] + t_mean[k];
                        errors.push(denorm - t);
                    }
                }
                Ok(TaskMetrics::from_regression(&errors))
            }
        }
    })?;

    Ok(DownstreamReport {
        config: cfg.clone(),
        seed,
        train_size: train.len(),
        train_size_after_upsampling: train_owned.len(),
        test_size: test.len(),
        metrics,
    })
}

fn target_stats(windows: &[WindowSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = windows
        .first()
        .and_then(|w| w.targets.as_ref())
        .map(|t| t.len())
        .ok_or_else(|| Error::Data("regression windows lack targets".into()))?;
    let n = windows.len() as f64;
    let mut mean = vec![0.0; dim];
    for w in windows {
        for (m, &v) in mean.iter_mut().zip(w.targets.as_ref().unwrap()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for w in windows {
        for (k, &v) in w.targets.as_ref().unwrap().iter().enumerate() {
            var[k] += (v - mean[k]) * (v - mean[k]);
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(1e-9)).collect();
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::TokenGrid;

    fn window(label: u8, fill: u32) -> WindowSample {
        WindowSample {
            entity_id: "e".into(),
            tokens: TokenGrid::new(4, 3, vec![fill; 12]),
            start_index: 0,
            label: Some(label),
            targets: None,
        }
    }

    #[test]
    fn f1_formula_by_hand() {
        // TP=2, FP=1, FN=1 -> P=2/3, R=2/3, F1=2/3
        let m = TaskMetrics::from_confusion(2, 1, 1, 10);
        assert!((m.f1_binary.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_regression_rmse_zero() {
        let m = TaskMetrics::from_regression(&[0.0, 0.0, 0.0]);
        assert_eq!(m.rmse_combined, Some(0.0));
    }

    #[test]
    fn rmse_concatenates_both_targets() {
        // errors (3,4) -> rmse = sqrt((9+16)/2) = sqrt(12.5)
        let m = TaskMetrics::from_regression(&[3.0, 4.0]);
        assert!((m.rmse_combined.unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn upsampling_equalizes_and_preserves_unique_values() {
        let mut windows: Vec<WindowSample> = (0..99).map(|i| window(0, 4 + i % 3)).collect();
        windows.push(window(1, 99));
        let mut rng = Rng::from_seed(1);
        let up = upsample_minority(&windows, &mut rng).unwrap();
        let pos = up.iter().filter(|w| w.label == Some(1)).count();
        let neg = up.iter().filter(|w| w.label == Some(0)).count();
        assert_eq!(pos, neg);
        assert!((pos as f64 - neg as f64).abs() / neg as f64 <= 0.01);
        // only multiplicities changed: every duplicated grid equals the original
        for w in &up {
            if w.label == Some(1) {
                assert_eq!(w.tokens.ids, vec![99; 12]);
            }
        }
        // input untouched
        assert_eq!(windows.iter().filter(|w| w.label == Some(1)).count(), 1);
    }

    #[test]
    fn balanced_input_unchanged() {
        let windows: Vec<WindowSample> =
            (0..10).map(|i| window((i % 2) as u8, 4)).collect();
        let mut rng = Rng::from_seed(2);
        let up = upsample_minority(&windows, &mut rng).unwrap();
        assert_eq!(up.len(), windows.len());
    }

    #[test]
    fn single_class_rejected() {
        let windows: Vec<WindowSample> = (0..5).map(|_| window(0, 4)).collect();
        let mut rng = Rng::from_seed(3);
        assert!(upsample_minority(&windows, &mut rng).is_err());
    }

    #[test]
    fn raw_mlp_learns_separable_toy_task() {
        // class 1 windows use token 5, class 0 use token 4
        let mut train = Vec::new();
        for i in 0..40 {
            train.push(window((i % 2) as u8, 4 + (i % 2) as u32));
        }
        let test: Vec<WindowSample> = (0..10).map(|i| window((i % 2) as u8, 4 + (i % 2) as u32)).collect();
        let cfg = DownstreamConfig {
            epochs: 30,
            batch_size: 8,
            head_dims: vec![8],
            embed_dim: 8,
            ..Default::default()
        };
        let report = train_downstream(&cfg, &train, &test, None, 7).unwrap();
        assert!(
            report.metrics.f1_binary.unwrap() > 0.99,
            "separable task should be solved, got {:?}",
            report.metrics
        );
    }
}
