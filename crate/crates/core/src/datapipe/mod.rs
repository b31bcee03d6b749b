//! Data pipeline: CSV ingestion, schema inference, quantization, local
//! vocabularies, token-grid windows.
//!
//! All operations are pure functions over immutable inputs. The `Codec`
//! (schema + vocabularies + quantizers) is fitted on the training split only
//! and identified by a content fingerprint that downstream artifacts embed.

mod encode;
mod quantizer;
mod schema;
mod vocab;
mod window;

pub use encode::{
    column_token, day_of_week, decode_row, encode_row, hour_of_day, parse_epoch_seconds,
    token_columns, DecodeClock, TokenColumn, TokenColumnKind,
};
pub use quantizer::{fit_quantizer, QuantizerSpec};
pub use schema::{infer_schema, FieldKind, FieldSpec, OrderingKey, TableSchema, TypeHints};
pub use vocab::{content_fingerprint, FieldVocab, VocabSet, MASK, NUM_SPECIALS, PAD, SEP, UNK};
pub use window::{
    attach_labels, make_windows, validate_grid, EntitySeries, TargetAggregation, TokenGrid,
    WindowSample,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Raw CSV contents: header plus string rows.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok(Table { header, rows })
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Quantile bin counts: one default, overridable per field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinConfig {
    pub default_bins: usize,
    #[serde(default)]
    pub per_field: BTreeMap<String, usize>,
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig {
            default_bins: 32,
            per_field: BTreeMap::new(),
        }
    }
}

impl BinConfig {
    pub fn bins_for(&self, field: &str) -> usize {
        self.per_field.get(field).copied().unwrap_or(self.default_bins)
    }
}

/// Schema + token columns + vocabularies + quantizers, fitted together and
/// identified by one fingerprint.
#[derive(Debug, Clone)]
pub struct Codec {
    pub schema: TableSchema,
    pub columns: Vec<TokenColumn>,
    pub vocabs: VocabSet,
    pub quantizers: BTreeMap<String, QuantizerSpec>,
}

#[derive(Serialize, Deserialize)]
struct QuantizerFile {
    format_version: u32,
    quantizers: Vec<QuantizerSpec>,
}

impl Codec {
    /// Fit vocabularies and quantizers from the given training rows.
    pub fn fit(table: &Table, schema: TableSchema, bins: &BinConfig, train_rows: &[usize]) -> Result<Codec> {
        let columns = token_columns(&schema);

        // quantizers first: quantized columns' tokens depend on bucket count
        let mut quantizers = BTreeMap::new();
        for col in &columns {
            if col.kind != TokenColumnKind::Quantized {
                continue;
            }
            let src = schema
                .column_index(&col.source)
                .ok_or_else(|| Error::Schema(format!("missing column '{}'", col.source)))?;
            let mut values = Vec::with_capacity(train_rows.len());
            for &r in train_rows {
                let raw = &table.rows[r][src];
                let v: f64 = raw.trim().parse().map_err(|_| {
                    Error::Data(format!("non-numeric value '{raw}' in continuous column '{}'", col.source))
                })?;
                values.push(v);
            }
            quantizers.insert(col.name.clone(), fit_quantizer(&col.name, &values, bins.bins_for(&col.name))?);
        }

        let mut column_tokens: Vec<(String, Vec<String>)> = Vec::with_capacity(columns.len());
        for col in &columns {
            let toks = match col.kind {
                TokenColumnKind::Quantized => {
                    let q = &quantizers[&col.name];
                    (0..q.bin_count).map(|b| format!("b{b}")).collect()
                }
                _ => {
                    let src = schema.column_index(&col.source).unwrap();
                    let mut toks = Vec::with_capacity(train_rows.len());
                    for &r in train_rows {
                        if let Some(t) = column_token(col, &table.rows[r][src], &quantizers) {
                            toks.push(t);
                        }
                    }
                    toks
                }
            };
            column_tokens.push((col.name.clone(), toks));
        }
        let vocabs = VocabSet::build(column_tokens)?;
        vocabs.check_disjoint()?;
        Ok(Codec {
            schema,
            columns,
            vocabs,
            quantizers,
        })
    }

    pub fn encode_row(&self, row: &[String]) -> Result<Vec<u32>> {
        encode_row(row, &self.schema, &self.columns, &self.vocabs, &self.quantizers)
    }

    pub fn decode_row(&self, tokens: &[u32], clock: &mut DecodeClock) -> Result<Vec<String>> {
        decode_row(tokens, &self.schema, &self.columns, &self.vocabs, &self.quantizers, clock)
    }

    pub fn quantizer_file_string(&self) -> Result<String> {
        let file = QuantizerFile {
            format_version: 1,
            quantizers: self.quantizers.values().cloned().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Fingerprint over the canonical serialized vocab, quantizers and schema.
    pub fn fingerprint(&self) -> String {
        let vocab = self.vocabs.to_file_string();
        let quant = self.quantizer_file_string().unwrap_or_default();
        let schema = serde_json::to_string(&self.schema).unwrap_or_default();
        content_fingerprint(&[vocab.as_bytes(), quant.as_bytes(), schema.as_bytes()])
    }

    /// Write vocab.tsv, quantizers.json and schema.json into a directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("vocab.tsv"), self.vocabs.to_file_string())?;
        std::fs::write(dir.join("quantizers.json"), self.quantizer_file_string()?)?;
        std::fs::write(dir.join("schema.json"), serde_json::to_string_pretty(&self.schema)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Codec> {
        let vocab_text = std::fs::read_to_string(dir.join("vocab.tsv"))?;
        let quant_text = std::fs::read_to_string(dir.join("quantizers.json"))?;
        let schema_text = std::fs::read_to_string(dir.join("schema.json"))?;
        let vocabs = VocabSet::from_file_string(&vocab_text)?;
        let qf: QuantizerFile = serde_json::from_str(&quant_text)?;
        if qf.format_version != 1 {
            return Err(Error::Format(format!(
                "unsupported quantizer file version {}",
                qf.format_version
            )));
        }
        let schema: TableSchema = serde_json::from_str(&schema_text)?;
        let quantizers: BTreeMap<String, QuantizerSpec> = qf
            .quantizers
            .into_iter()
            .map(|q| (q.field_name.clone(), q))
            .collect();
        let columns = token_columns(&schema);
        if columns.len() != vocabs.columns.len() {
            return Err(Error::Vocab(format!(
                "schema expands to {} token columns but vocab file has {}",
                columns.len(),
                vocabs.columns.len()
            )));
        }
        Ok(Codec {
            schema,
            columns,
            vocabs,
            quantizers,
        })
    }
}

/// Row indices of one entity, chronologically sorted.
#[derive(Debug, Clone)]
pub struct EntityRows {
    pub entity_id: String,
    pub row_indices: Vec<usize>,
}

/// Group and sort the table's rows per entity. Entities come out in sorted
/// id order; rows are sorted by the ordering key (stable for ties).
pub fn group_by_entity(table: &Table, schema: &TableSchema) -> Result<Vec<EntityRows>> {
    let entity_col = match &schema.entity {
        Some(name) => Some(
            schema
                .column_index(name)
                .ok_or_else(|| Error::Schema(format!("entity column '{name}' missing")))?,
        ),
        None => None,
    };
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (r, row) in table.rows.iter().enumerate() {
        let key = match entity_col {
            Some(c) => row[c].clone(),
            None => "all".to_string(),
        };
        groups.entry(key).or_default().push(r);
    }
    let order_col = match &schema.ordering {
        OrderingKey::Column(name) => Some(
            schema
                .column_index(name)
                .ok_or_else(|| Error::Schema(format!("ordering column '{name}' missing")))?,
        ),
        OrderingKey::RowIndex => None,
    };
    let mut out = Vec::with_capacity(groups.len());
    for (entity_id, mut rows) in groups {
        if let Some(c) = order_col {
            let mut keyed: Vec<(i64, usize)> = Vec::with_capacity(rows.len());
            for &r in &rows {
                let raw = &table.rows[r][c];
                let k = parse_epoch_seconds(raw).ok_or_else(|| {
                    Error::Data(format!("unparseable ordering value '{raw}' in row {r}"))
                })?;
                keyed.push((k, r));
            }
            keyed.sort_by_key(|&(k, r)| (k, r));
            rows = keyed.into_iter().map(|(_, r)| r).collect();
        }
        out.push(EntityRows {
            entity_id,
            row_indices: rows,
        });
    }
    Ok(out)
}

/// Encode the given rows of one entity into a token series with per-row
/// labels and targets.
pub fn encode_series(
    table: &Table,
    codec: &Codec,
    entity_id: &str,
    row_indices: &[usize],
) -> Result<EntitySeries> {
    let label_col = codec
        .schema
        .label_field()
        .and_then(|f| codec.schema.column_index(&f.name));
    let target_cols: Vec<usize> = codec
        .schema
        .target_fields()
        .iter()
        .filter_map(|f| codec.schema.column_index(&f.name))
        .collect();

    let mut token_rows = Vec::with_capacity(row_indices.len());
    let mut row_labels = Vec::with_capacity(row_indices.len());
    let mut row_targets = Vec::with_capacity(row_indices.len());
    for &r in row_indices {
        let row = &table.rows[r];
        token_rows.push(codec.encode_row(row)?);
        row_labels.push(match label_col {
            Some(c) => {
                let raw = row[c].trim();
                match raw {
                    "0" => Some(0),
                    "1" => Some(1),
                    other => {
                        return Err(Error::Data(format!(
                            "label value '{other}' is not 0/1 in row {r}"
                        )))
                    }
                }
            }
            None => None,
        });
        row_targets.push(if target_cols.is_empty() {
            None
        } else {
            let mut vals = Vec::with_capacity(target_cols.len());
            for &c in &target_cols {
                let raw = row[c].trim();
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Data(format!("target value '{raw}' is not numeric in row {r}"))
                })?;
                vals.push(v);
            }
            Some(vals)
        });
    }
    Ok(EntitySeries {
        entity_id: entity_id.to_string(),
        token_rows,
        row_labels,
        row_targets,
    })
}

/// Chronological per-entity split plus fitted codec and encoded series.
#[derive(Debug)]
pub struct PreparedData {
    pub codec: Codec,
    pub fingerprint: String,
    pub train: Vec<EntitySeries>,
    pub test: Vec<EntitySeries>,
}

/// End-to-end preparation: infer schema, split each entity's rows
/// chronologically (first `train_frac` to train), fit the codec on training
/// rows only, encode both splits.
pub fn prepare(
    table: &Table,
    hints: &TypeHints,
    bins: &BinConfig,
    train_frac: f64,
) -> Result<PreparedData> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::Config(format!(
            "train_frac {train_frac} outside [0,1]"
        )));
    }
    let schema = infer_schema(&table.header, hints)?;
    let groups = group_by_entity(table, &schema)?;
    let mut train_rows: Vec<usize> = Vec::new();
    let mut split: Vec<(String, Vec<usize>, Vec<usize>)> = Vec::new();
    for g in &groups {
        let m = g.row_indices.len();
        let k = ((m as f64) * train_frac).floor() as usize;
        let (tr, te) = g.row_indices.split_at(k.min(m));
        train_rows.extend_from_slice(tr);
        split.push((g.entity_id.clone(), tr.to_vec(), te.to_vec()));
    }
    if train_rows.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let codec = Codec::fit(table, schema, bins, &train_rows)?;
    let fingerprint = codec.fingerprint();
    let mut train = Vec::with_capacity(split.len());
    let mut test = Vec::with_capacity(split.len());
    for (entity_id, tr, te) in &split {
        if !tr.is_empty() {
            train.push(encode_series(table, &codec, entity_id, tr)?);
        }
        if !te.is_empty() {
            test.push(encode_series(table, &codec, entity_id, te)?);
        }
    }
    Ok(PreparedData {
        codec,
        fingerprint,
        train,
        test,
    })
}
