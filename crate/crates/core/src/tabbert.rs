//! Hierarchical encoder for tabular time series.
//!
//! A field transformer processes each row's tokens independently and pools
//! them into a row embedding E_i (intra-row, local structure); a sequence
//! transformer mixes the row embeddings across time into SE_t (inter-row,
//! global structure). Pretraining masks a fraction of fields and predicts
//! the original token of each masked cell through a per-field head over that
//! field's local vocabulary. A trained model doubles as a frozen feature
//! extractor: the window feature is the mean of the SE_t.

use crate::datapipe::{TokenGrid, VocabSet, WindowSample, MASK};
use crate::error::{Error, Result};
use crate::nn::{Embedding, Encoder, Linear, TransformerConfig};
use crate::rng::Rng;
use crate::tensor::{no_grad, Adam, AdamConfig, Checkpoint, CheckpointMeta, Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Column geometry of the global id space, detached from token strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub names: Vec<String>,
    pub offsets: Vec<u32>,
    pub sizes: Vec<u32>,
    pub global_size: u32,
}

impl ColumnLayout {
    pub fn from_vocabs(vocabs: &VocabSet) -> Self {
        ColumnLayout {
            names: vocabs.columns.iter().map(|c| c.field_name.clone()).collect(),
            offsets: vocabs.columns.iter().map(|c| c.offset).collect(),
            sizes: vocabs.columns.iter().map(|c| c.len() as u32).collect(),
            global_size: vocabs.global_size(),
        }
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    /// Local id of a global id under column `col`, if it belongs there.
    pub fn local_of_global(&self, col: usize, gid: u32) -> Option<u32> {
        let off = self.offsets[col];
        if gid >= off && gid < off + self.sizes[col] {
            Some(gid - off)
        } else {
            None
        }
    }

    pub fn global_of_local(&self, col: usize, local: u32) -> u32 {
        self.offsets[col] + local
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabBertConfig {
    pub field_layers: usize,
    pub field_heads: usize,
    pub field_dim: usize,
    pub seq_layers: usize,
    pub seq_heads: usize,
    pub seq_dim: usize,
    /// Feed-forward width as a multiple of the hidden dim.
    pub ffn_mult: usize,
    pub max_rows: usize,
    pub max_cols: usize,
}

impl Default for TabBertConfig {
    fn default() -> Self {
        TabBertConfig {
            field_layers: 2,
            field_heads: 2,
            field_dim: 64,
            seq_layers: 2,
            seq_heads: 2,
            seq_dim: 64,
            ffn_mult: 2,
            max_rows: 16,
            max_cols: 32,
        }
    }
}

impl TabBertConfig {
    fn field_encoder_config(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.field_layers,
            heads: self.field_heads,
            hidden_dim: self.field_dim,
            ffn_dim: self.field_dim * self.ffn_mult,
            max_positions: self.max_cols,
            causal: false,
        }
    }

    fn seq_encoder_config(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.seq_layers,
            heads: self.seq_heads,
            hidden_dim: self.seq_dim,
            ffn_dim: self.seq_dim * self.ffn_mult,
            max_positions: self.max_rows,
            causal: false,
        }
    }
}

/// Which cells of a window are masked, with the replaced originals.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    /// (row, column) pairs, sorted.
    pub positions: Vec<(usize, usize)>,
    /// Original global ids, aligned with `positions`.
    pub originals: Vec<u32>,
    pub rate: f64,
}

/// Replace round(rate * cells) positions (at least one) with [MASK].
/// Selection is uniform without replacement and reproducible from the rng.
pub fn mask_fields(grid: &TokenGrid, rate: f64, rng: &mut Rng) -> Result<(TokenGrid, MaskPlan)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!("mask rate {rate} outside (0,1)")));
    }
    let cells = grid.rows * grid.cols;
    let count = ((rate * cells as f64).round() as usize).clamp(1, cells);
    let picked = rng.sample_indices(cells, count);
    let mut masked = grid.clone();
    let mut positions = Vec::with_capacity(count);
    let mut originals = Vec::with_capacity(count);
    for &flat in &picked {
        let (r, c) = (flat / grid.cols, flat % grid.cols);
        positions.push((r, c));
        originals.push(grid.get(r, c));
        masked.set(r, c, MASK);
    }
    Ok((masked, MaskPlan { positions, originals, rate }))
}

pub struct TabBertOutput<T: Scalar> {
    /// Row embeddings E, shape [t, seq_dim], before sequence mixing.
    pub row_embeddings: Tensor<T>,
    /// Time-wise embeddings SE, shape [t, seq_dim].
    pub sequence_embeddings: Tensor<T>,
}

pub struct TabBert<T: Scalar> {
    pub config: TabBertConfig,
    pub layout: ColumnLayout,
    pub vocab_fingerprint: String,
    pub field_embeddings: Embedding<T>,
    pub field_encoder: Encoder<T>,
    pub row_projection: Linear<T>,
    pub sequence_encoder: Encoder<T>,
    pub mlm_heads: Vec<Linear<T>>,
}

impl<T: Scalar> TabBert<T> {
    pub fn new(
        config: TabBertConfig,
        layout: ColumnLayout,
        vocab_fingerprint: &str,
        rng: &mut Rng,
    ) -> Self {
        assert!(layout.n_columns() <= config.max_cols, "too many token columns");
        let mut init = rng.substream("tabbert-init");
        let field_embeddings =
            Embedding::new(layout.global_size as usize, config.field_dim, &mut init);
        let field_encoder = Encoder::new(config.field_encoder_config(), &mut init);
        let row_projection = Linear::new(config.field_dim, config.seq_dim, true, &mut init);
        let sequence_encoder = Encoder::new(config.seq_encoder_config(), &mut init);
        let mlm_heads = layout
            .sizes
            .iter()
            .map(|&sz| Linear::new(config.seq_dim, sz as usize, true, &mut init))
            .collect();
        TabBert {
            config,
            layout,
            vocab_fingerprint: vocab_fingerprint.to_string(),
            field_embeddings,
            field_encoder,
            row_projection,
            sequence_encoder,
            mlm_heads,
        }
    }

    /// Hierarchical forward pass. Each row runs through the field encoder in
    /// isolation, so E_r depends only on row r's tokens.
    pub fn forward(&self, grid: &TokenGrid) -> Result<TabBertOutput<T>> {
        if grid.cols != self.layout.n_columns() {
            return Err(Error::Model(format!(
                "grid has {} columns, model expects {}",
                grid.cols,
                self.layout.n_columns()
            )));
        }
        let mut pooled_rows = Vec::with_capacity(grid.rows);
        for r in 0..grid.rows {
            let emb = self.field_embeddings.lookup(grid.row(r))?; // [n, fd]
            let enc = self.field_encoder.forward(&emb)?;
            pooled_rows.push(enc.mean_axis(0)); // [fd]
        }
        let refs: Vec<&Tensor<T>> = pooled_rows.iter().collect();
        let row_embeddings = self.row_projection.forward(&Tensor::stack(&refs)); // [t, sd]
        let sequence_embeddings = self.sequence_encoder.forward(&row_embeddings)?;
        Ok(TabBertOutput {
            row_embeddings,
            sequence_embeddings,
        })
    }

    /// Per-column logits for the plan's masked cells, each over that
    /// column's local vocabulary: (column, logits [k, |vocab|], local ids).
    pub fn mlm_logits(
        &self,
        output: &TabBertOutput<T>,
        plan: &MaskPlan,
    ) -> Result<Vec<(usize, Tensor<T>, Vec<u32>)>> {
        let mut per_column: Vec<(Vec<u32>, Vec<u32>)> =
            vec![(Vec::new(), Vec::new()); self.layout.n_columns()];
        for (&(row, col), &orig) in plan.positions.iter().zip(&plan.originals) {
            let local = self.layout.local_of_global(col, orig).ok_or_else(|| {
                Error::Data(format!(
                    "original id {orig} at ({row},{col}) outside column range"
                ))
            })?;
            per_column[col].0.push(row as u32);
            per_column[col].1.push(local);
        }
        let mut out = Vec::new();
        for (col, (rows, locals)) in per_column.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let se_rows = Tensor::embedding_lookup(&output.sequence_embeddings, &rows)?;
            let logits = self.mlm_heads[col].forward(&se_rows);
            out.push((col, logits, locals));
        }
        Ok(out)
    }

    /// Mean cross entropy over exactly the masked cells.
    pub fn mlm_loss(&self, output: &TabBertOutput<T>, plan: &MaskPlan) -> Result<Tensor<T>> {
        if plan.positions.is_empty() {
            return Err(Error::Data("empty mask plan".into()));
        }
        let groups = self.mlm_logits(output, plan)?;
        let total: usize = groups.iter().map(|(_, _, l)| l.len()).sum();
        let mut acc: Option<Tensor<T>> = None;
        for (_, logits, locals) in &groups {
            let ce = Tensor::cross_entropy(logits, locals, None)?;
            let weighted = ce.scale(T::from_f64(locals.len() as f64));
            acc = Some(match acc {
                Some(a) => a.add(&weighted),
                None => weighted,
            });
        }
        Ok(acc.unwrap().scale(T::from_f64(1.0 / total as f64)))
    }

    /// Fraction of masked cells whose argmax prediction recovers the
    /// original local id.
    pub fn mlm_accuracy(&self, output: &TabBertOutput<T>, plan: &MaskPlan) -> Result<f64> {
        let groups = self.mlm_logits(output, plan)?;
        let mut correct = 0usize;
        let mut total = 0usize;
        for (_, logits, locals) in &groups {
            let classes = logits.shape()[1];
            let data = logits.data();
            for (i, &target) in locals.iter().enumerate() {
                let row = &data[i * classes..(i + 1) * classes];
                let mut best = 0usize;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                correct += (best == target as usize) as usize;
                total += 1;
            }
        }
        Ok(correct as f64 / total as f64)
    }

    /// Window feature: mean of the time-wise embeddings, length seq_dim.
    pub fn extract_features(&self, window: &WindowSample) -> Result<Vec<T>> {
        no_grad(|| {
            let out = self.forward(&window.tokens)?;
            Ok(out.sequence_embeddings.mean_axis(0).to_vec())
        })
    }

    /// Per-row features SE_t, shape [t, seq_dim], for sequence heads.
    pub fn extract_row_features(&self, window: &WindowSample) -> Result<Vec<Vec<T>>> {
        no_grad(|| {
            let out = self.forward(&window.tokens)?;
            let d = self.config.seq_dim;
            let data = out.sequence_embeddings.to_vec();
            Ok(data.chunks(d).map(|c| c.to_vec()).collect())
        })
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.field_embeddings.params(&mut out);
        self.field_encoder.params(&mut out);
        self.row_projection.params(&mut out);
        self.sequence_encoder.params(&mut out);
        for head in &self.mlm_heads {
            head.params(&mut out);
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.field_embeddings.named("field_emb", &mut out);
        self.field_encoder.named("field_enc", &mut out);
        self.row_projection.named("row_proj", &mut out);
        self.sequence_encoder.named("seq_enc", &mut out);
        for (i, head) in self.mlm_heads.iter().enumerate() {
            head.named(&format!("mlm_head{i}"), &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine-decay floor as a fraction of the peak rate (1.0 = constant).
    pub lr_final_fraction: f64,
    pub mask_rate: f64,
    /// Stop early once eval accuracy reaches this level.
    pub target_accuracy: Option<f64>,
    pub eval_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2_000,
            batch_size: 16,
            learning_rate: 2e-3,
            lr_final_fraction: 0.05,
            mask_rate: 0.15,
            target_accuracy: None,
            eval_every: 100,
        }
    }
}

/// Cosine schedule from `peak` down to `peak * floor_frac`.
pub(crate) fn cosine_lr(peak: f64, floor_frac: f64, step: usize, total: usize) -> f64 {
    let floor = peak * floor_frac;
    if total <= 1 {
        return peak;
    }
    let progress = step as f64 / (total - 1) as f64;
    floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One training-log line. Accuracy is measured on a fixed held-in probe set
/// every `eval_every` steps and repeated between evaluations.
#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub masked_accuracy: f64,
    pub wall_ms: u128,
}

impl TabBert<f32> {
    /// Masked-field pretraining over windowed samples. Deterministic for a
    /// given seed: batches, masks and init all derive from named substreams.
    pub fn pretrain(
        &mut self,
        windows: &[WindowSample],
        cfg: &PretrainConfig,
        seed: u64,
    ) -> Result<Vec<StepLog>> {
        if windows.is_empty() {
            return Err(Error::Data("pretraining corpus is empty".into()));
        }
        for w in windows {
            if w.tokens.cols != self.layout.n_columns() {
                return Err(Error::Fingerprint(
                    "window grid width does not match model vocabulary".into(),
                ));
            }
        }
        let root = Rng::from_seed(seed);
        let mut batch_rng = root.substream("batch");
        let mut mask_rng = root.substream("mask");
        let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
        let params = self.params();
        let start = std::time::Instant::now();
        let mut log = Vec::with_capacity(cfg.steps);
        let mut last_acc = 0.0;

        let probe_count = windows.len().min(32);
        for step in 0..cfg.steps {
            opt.set_learning_rate(cosine_lr(
                cfg.learning_rate,
                cfg.lr_final_fraction,
                step,
                cfg.steps,
            ));
            let mut losses = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let w = &windows[batch_rng.below(windows.len())];
                let (masked, plan) = mask_fields(&w.tokens, cfg.mask_rate, &mut mask_rng)?;
                let out = self.forward(&masked)?;
                losses.push(self.mlm_loss(&out, &plan)?);
            }
            let refs: Vec<&Tensor<f32>> = losses.iter().collect();
            let loss = Tensor::stack(&refs).mean_all();
            let loss_val = loss.item() as f64;
            loss.backward()?;
            opt.step(&params);

            if step % cfg.eval_every == 0 || step + 1 == cfg.steps {
                last_acc = self.probe_accuracy(&windows[..probe_count], cfg.mask_rate)?;
            }
            log.push(StepLog {
                step,
                loss: loss_val,
                masked_accuracy: last_acc,
                wall_ms: start.elapsed().as_millis(),
            });
            if let Some(target) = cfg.target_accuracy {
                if last_acc >= target {
                    break;
                }
            }
        }
        Ok(log)
    }

    /// Masked accuracy over a fixed probe set with a fixed mask stream.
    pub fn probe_accuracy(&self, windows: &[WindowSample], mask_rate: f64) -> Result<f64> {
        no_grad(|| {
            let mut probe_rng = Rng::from_seed(0xACC);
            let mut correct_weighted = 0.0;
            let mut total = 0usize;
            for w in windows {
                let (masked, plan) = mask_fields(&w.tokens, mask_rate, &mut probe_rng)?;
                let out = self.forward(&masked)?;
                let acc = self.mlm_accuracy(&out, &plan)?;
                correct_weighted += acc * plan.positions.len() as f64;
                total += plan.positions.len();
            }
            Ok(correct_weighted / total as f64)
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta::new("tabbert", &self.vocab_fingerprint)
            .with_param("config", serde_json::to_value(self.config).unwrap())
            .with_param("layout", serde_json::to_value(&self.layout).unwrap());
        let mut ckpt = Checkpoint::new(meta);
        for (name, t) in self.named_params() {
            ckpt.insert(&name, &t);
        }
        ckpt
    }

    /// Rebuild a model from a checkpoint. The layout and config come from
    /// the checkpoint metadata; the caller provides the expected vocab
    /// fingerprint, which must match.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected_fingerprint: &str) -> Result<TabBert<f32>> {
        ckpt.check_fingerprint(expected_fingerprint)?;
        if ckpt.meta.kind != "tabbert" {
            return Err(Error::Model(format!(
                "checkpoint kind '{}' is not tabbert",
                ckpt.meta.kind
            )));
        }
        let config: TabBertConfig = serde_json::from_value(
            ckpt.meta
                .hyperparams
                .get("config")
                .ok_or_else(|| Error::Model("checkpoint missing config".into()))?
                .clone(),
        )?;
        let layout: ColumnLayout = serde_json::from_value(
            ckpt.meta
                .hyperparams
                .get("layout")
                .ok_or_else(|| Error::Model("checkpoint missing layout".into()))?
                .clone(),
        )?;
        let mut rng = Rng::from_seed(0);
        let mut model = TabBert::new(config, layout, expected_fingerprint, &mut rng);
        model.load_state(ckpt)?;
        Ok(model)
    }

    pub fn load_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (name, tensor) in self.named_params() {
            let (shape, data) = ckpt.get(&name)?;
            if shape != tensor.shape() {
                return Err(Error::Model(format!(
                    "tensor '{name}' shape {:?} does not match checkpoint {:?}",
                    tensor.shape(),
                    shape
                )));
            }
            tensor.set_data(data.clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_layout() -> ColumnLayout {
        // 3 columns with sizes 3, 2, 4 after the 4 specials
        ColumnLayout {
            names: vec!["a".into(), "b".into(), "c".into()],
            offsets: vec![4, 7, 9],
            sizes: vec![3, 2, 4],
            global_size: 13,
        }
    }

    fn tiny_config() -> TabBertConfig {
        TabBertConfig {
            field_layers: 1,
            field_heads: 2,
            field_dim: 8,
            seq_layers: 1,
            seq_heads: 2,
            seq_dim: 8,
            ffn_mult: 2,
            max_rows: 8,
            max_cols: 8,
        }
    }

    fn grid(rows: usize) -> TokenGrid {
        let layout = tiny_layout();
        let mut ids = Vec::new();
        for r in 0..rows {
            for c in 0..3 {
                let local = (r + c) as u32 % layout.sizes[c];
                ids.push(layout.offsets[c] + local);
            }
        }
        TokenGrid::new(rows, 3, ids)
    }

    #[test]
    fn mask_budget_exact() {
        let g = TokenGrid::new(10, 12, vec![4; 120]);
        let mut rng = Rng::from_seed(1);
        let (_, plan) = mask_fields(&g, 0.15, &mut rng).unwrap();
        assert_eq!(plan.positions.len(), 18); // round(0.15 * 120)
    }

    #[test]
    fn mask_floor_to_one_and_range_check() {
        let g = TokenGrid::new(2, 3, vec![4; 6]);
        let mut rng = Rng::from_seed(2);
        let (_, plan) = mask_fields(&g, 0.01, &mut rng).unwrap(); // rounds to 0 -> 1
        assert_eq!(plan.positions.len(), 1);
        assert!(mask_fields(&g, 0.0, &mut rng).is_err());
        assert!(mask_fields(&g, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mask_deterministic_per_seed() {
        let g = grid(5);
        let (m1, p1) = mask_fields(&g, 0.3, &mut Rng::from_seed(9)).unwrap();
        let (m2, p2) = mask_fields(&g, 0.3, &mut Rng::from_seed(9)).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
        // masked cells actually carry [MASK] and originals are retained
        for (&(r, c), &orig) in p1.positions.iter().zip(&p1.originals) {
            assert_eq!(m1.get(r, c), MASK);
            assert_eq!(g.get(r, c), orig);
        }
    }

    #[test]
    fn forward_shapes_and_head_dims() {
        let mut rng = Rng::from_seed(3);
        let model = TabBert::<f32>::new(tiny_config(), tiny_layout(), "fp", &mut rng);
        let g = grid(4);
        let out = model.forward(&g).unwrap();
        assert_eq!(out.row_embeddings.shape(), &[4, 8]);
        assert_eq!(out.sequence_embeddings.shape(), &[4, 8]);
        // logits for a masked cell in column c have that column's vocab size
        let plan = MaskPlan {
            positions: vec![(1, 0), (2, 2)],
            originals: vec![g.get(1, 0), g.get(2, 2)],
            rate: 0.15,
        };
        let groups = model.mlm_logits(&out, &plan).unwrap();
        for (col, logits, _) in groups {
            assert_eq!(logits.shape()[1], tiny_layout().sizes[col] as usize);
        }
    }

    #[test]
    fn row_embedding_ignores_other_rows() {
        let mut rng = Rng::from_seed(4);
        let model = TabBert::<f32>::new(tiny_config(), tiny_layout(), "fp", &mut rng);
        let g1 = grid(5);
        let mut g2 = g1.clone();
        // perturb row 3, column 1
        let layout = tiny_layout();
        let new_id = layout.offsets[1] + (layout.local_of_global(1, g1.get(3, 1)).unwrap() + 1) % layout.sizes[1];
        g2.set(3, 1, new_id);
        let out1 = no_grad(|| model.forward(&g1)).unwrap();
        let out2 = no_grad(|| model.forward(&g2)).unwrap();
        let d = model.config.seq_dim;
        let e1 = out1.row_embeddings.to_vec();
        let e2 = out2.row_embeddings.to_vec();
        for r in [0usize, 1, 2, 4] {
            assert_eq!(e1[r * d..(r + 1) * d], e2[r * d..(r + 1) * d], "row {r}");
        }
        assert_ne!(e1[3 * d..4 * d], e2[3 * d..4 * d]);
        // sequence embeddings of unperturbed rows change (global mixing)
        let s1 = out1.sequence_embeddings.to_vec();
        let s2 = out2.sequence_embeddings.to_vec();
        assert_ne!(s1[0..d], s2[0..d]);
    }

    #[test]
    fn single_row_window_feature_is_se1() {
        let mut rng = Rng::from_seed(5);
        let model = TabBert::<f32>::new(tiny_config(), tiny_layout(), "fp", &mut rng);
        let w = WindowSample {
            entity_id: "e".into(),
            tokens: grid(1),
            start_index: 0,
            label: None,
            targets: None,
        };
        let v = model.extract_features(&w).unwrap();
        let out = no_grad(|| model.forward(&w.tokens)).unwrap();
        assert_eq!(v, out.sequence_embeddings.to_vec());
    }

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let mut rng = Rng::from_seed(6);
        let model = TabBert::<f32>::new(tiny_config(), tiny_layout(), "fp", &mut rng);
        // zero every mlm head so logits are uniform
        for head in &model.mlm_heads {
            head.weight.set_data(vec![0.0; head.weight.numel()]);
            if let Some(b) = &head.bias {
                b.set_data(vec![0.0; b.numel()]);
            }
        }
        let g = grid(3);
        let out = model.forward(&g).unwrap();
        // mask one cell in column 2 (vocab size 4): loss must be ln 4
        let plan = MaskPlan {
            positions: vec![(0, 2)],
            originals: vec![g.get(0, 2)],
            rate: 0.15,
        };
        let loss = model.mlm_loss(&out, &plan).unwrap().item() as f64;
        assert!((loss - 4.0f64.ln()).abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn checkpoint_round_trip_restores_outputs() {
        let mut rng = Rng::from_seed(7);
        let model = TabBert::<f32>::new(tiny_config(), tiny_layout(), "fp", &mut rng);
        let ckpt = model.to_checkpoint();
        let restored = TabBert::from_checkpoint(&ckpt, "fp").unwrap();
        let g = grid(4);
        let a = no_grad(|| model.forward(&g)).unwrap().sequence_embeddings.to_vec();
        let b = no_grad(|| restored.forward(&g)).unwrap().sequence_embeddings.to_vec();
        assert_eq!(a, b);
        assert!(TabBert::from_checkpoint(&ckpt, "other-fp").is_err());
    }
}
