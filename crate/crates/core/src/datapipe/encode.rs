//! Row <-> token-grid encoding.
//!
//! Each model field contributes token columns: categoricals and quantized
//! continuous fields one column each, timestamps two (hour of day and day of
//! week), so every grid cell is a token from one local vocabulary.

use super::quantizer::QuantizerSpec;
use super::schema::{FieldKind, TableSchema};
use super::vocab::{VocabSet, UNK};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenColumnKind {
    Categorical,
    Quantized,
    TimestampHour,
    TimestampDow,
}

#[derive(Debug, Clone)]
pub struct TokenColumn {
    /// Vocab key, e.g. "merchant" or "timestamp.hour".
    pub name: String,
    /// Source schema column.
    pub source: String,
    pub kind: TokenColumnKind,
}

/// Expand model fields into token columns, in schema order.
pub fn token_columns(schema: &TableSchema) -> Vec<TokenColumn> {
    let mut cols = Vec::new();
    for field in schema.model_fields() {
        match field.kind {
            FieldKind::Categorical => cols.push(TokenColumn {
                name: field.name.clone(),
                source: field.name.clone(),
                kind: TokenColumnKind::Categorical,
            }),
            FieldKind::Continuous => cols.push(TokenColumn {
                name: field.name.clone(),
                source: field.name.clone(),
                kind: TokenColumnKind::Quantized,
            }),
            FieldKind::Timestamp => {
                cols.push(TokenColumn {
                    name: format!("{}.hour", field.name),
                    source: field.name.clone(),
                    kind: TokenColumnKind::TimestampHour,
                });
                cols.push(TokenColumn {
                    name: format!("{}.dow", field.name),
                    source: field.name.clone(),
                    kind: TokenColumnKind::TimestampDow,
                });
            }
            FieldKind::Label | FieldKind::Target => unreachable!("not model fields"),
        }
    }
    cols
}

pub fn parse_epoch_seconds(raw: &str) -> Option<i64> {
    raw.trim().parse::<i64>().ok()
}

pub fn hour_of_day(epoch_secs: i64) -> u32 {
    (epoch_secs.rem_euclid(86_400) / 3_600) as u32
}

/// Day of week with 0 = Monday (epoch day zero was a Thursday).
pub fn day_of_week(epoch_secs: i64) -> u32 {
    ((epoch_secs.div_euclid(86_400) + 3).rem_euclid(7)) as u32
}

/// Token string a raw field value maps to in one token column, or None when
/// the value does not parse (encoded as [UNK]).
pub fn column_token(
    col: &TokenColumn,
    raw: &str,
    quantizers: &BTreeMap<String, QuantizerSpec>,
) -> Option<String> {
    match col.kind {
        TokenColumnKind::Categorical => Some(raw.to_string()),
        TokenColumnKind::Quantized => {
            let v: f64 = raw.trim().parse().ok()?;
            if !v.is_finite() {
                return None;
            }
            let q = quantizers.get(&col.name)?;
            Some(format!("b{}", q.quantize(v)))
        }
        TokenColumnKind::TimestampHour => parse_epoch_seconds(raw).map(|s| hour_of_day(s).to_string()),
        TokenColumnKind::TimestampDow => parse_epoch_seconds(raw).map(|s| day_of_week(s).to_string()),
    }
}

/// Encode one raw row (full schema arity) into global token ids, one per
/// token column. Total given the schema: unknown values become [UNK].
pub fn encode_row(
    row: &[String],
    schema: &TableSchema,
    columns: &[TokenColumn],
    vocabs: &VocabSet,
    quantizers: &BTreeMap<String, QuantizerSpec>,
) -> Result<Vec<u32>> {
    if row.len() != schema.fields.len() {
        return Err(Error::Data(format!(
            "row arity {} does not match schema arity {}",
            row.len(),
            schema.fields.len()
        )));
    }
    let mut ids = Vec::with_capacity(columns.len());
    for (ci, col) in columns.iter().enumerate() {
        let src = schema
            .column_index(&col.source)
            .ok_or_else(|| Error::Schema(format!("missing source column '{}'", col.source)))?;
        let vocab = vocabs
            .columns
            .get(ci)
            .filter(|v| v.field_name == col.name)
            .ok_or_else(|| Error::Vocab(format!("vocab misaligned at column '{}'", col.name)))?;
        let id = match column_token(col, &row[src], quantizers) {
            Some(tok) => vocab.encode(&tok),
            None => UNK,
        };
        ids.push(id);
    }
    Ok(ids)
}

/// Decode one token row back to a full schema row. Quantized cells become
/// bucket centers, timestamp cells are resynthesized from (dow, hour) via
/// `clock`, labels default to "0" and targets to "".
pub fn decode_row(
    tokens: &[u32],
    schema: &TableSchema,
    columns: &[TokenColumn],
    vocabs: &VocabSet,
    quantizers: &BTreeMap<String, QuantizerSpec>,
    clock: &mut DecodeClock,
) -> Result<Vec<String>> {
    if tokens.len() != columns.len() {
        return Err(Error::Data(format!(
            "token row width {} does not match {} columns",
            tokens.len(),
            columns.len()
        )));
    }
    let mut hour: Option<u32> = None;
    let mut dow: Option<u32> = None;
    let mut by_source: BTreeMap<&str, String> = BTreeMap::new();
    for ((col, &id), ci) in columns.iter().zip(tokens).zip(0..) {
        let tok = vocabs
            .decode_in_column(ci, id)
            .unwrap_or("")
            .to_string();
        match col.kind {
            TokenColumnKind::Categorical => {
                by_source.insert(col.source.as_str(), if tok.is_empty() { "[UNK]".into() } else { tok });
            }
            TokenColumnKind::Quantized => {
                let bucket: usize = tok
                    .strip_prefix('b')
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(0);
                let q = quantizers
                    .get(&col.name)
                    .ok_or_else(|| Error::Vocab(format!("no quantizer for '{}'", col.name)))?;
                let center = q.decode_center(bucket.min(q.bin_count - 1));
                by_source.insert(col.source.as_str(), format!("{center}"));
            }
            TokenColumnKind::TimestampHour => hour = tok.parse().ok(),
            TokenColumnKind::TimestampDow => dow = tok.parse().ok(),
        }
    }
    if let (Some(h), Some(d)) = (hour, dow) {
        let ts = clock.next(h, d);
        for field in schema.fields.iter().filter(|f| f.kind == FieldKind::Timestamp) {
            by_source.insert(field.name.as_str(), ts.to_string());
        }
    }
    let mut out = Vec::with_capacity(schema.fields.len());
    for field in &schema.fields {
        let cell = match field.kind {
            FieldKind::Label => "0".to_string(),
            FieldKind::Target => String::new(),
            _ => by_source.get(field.name.as_str()).cloned().unwrap_or_default(),
        };
        out.push(cell);
    }
    Ok(out)
}

/// Produces strictly increasing epoch timestamps that land on a requested
/// (hour, day-of-week) pair, so decoded rows re-encode to the same tokens.
pub struct DecodeClock {
    epoch_day: i64,
}

impl DecodeClock {
    pub fn new() -> Self {
        // day 4 is a Monday under the 0=Monday convention
        DecodeClock { epoch_day: 4 }
    }

    pub fn next(&mut self, hour: u32, dow: u32) -> i64 {
        // advance at least one day per row, to the next matching weekday
        loop {
            self.epoch_day += 1;
            if ((self.epoch_day + 3).rem_euclid(7)) as u32 == dow % 7 {
                break;
            }
        }
        self.epoch_day * 86_400 + (hour as i64 % 24) * 3_600
    }
}

impl Default for DecodeClock {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::schema::{infer_schema, TypeHints};

    fn setup() -> (TableSchema, Vec<TokenColumn>, VocabSet, BTreeMap<String, QuantizerSpec>) {
        let header: Vec<String> = ["user", "timestamp", "merchant", "amount", "isFraud?"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let hints = TypeHints {
            label: Some("isFraud?".into()),
            entity: Some("user".into()),
            continuous: vec!["amount".into()],
            ..Default::default()
        };
        let schema = infer_schema(&header, &hints).unwrap();
        let columns = token_columns(&schema);
        let q = super::super::quantizer::fit_quantizer("amount", &[1.0, 5.0, 9.0, 20.0], 2).unwrap();
        let mut quantizers = BTreeMap::new();
        quantizers.insert("amount".to_string(), q);
        let vocabs = VocabSet::build(vec![
            ("user".into(), vec!["u0".into(), "u1".into()]),
            ("timestamp.hour".into(), vec!["0".into(), "12".into()]),
            ("timestamp.dow".into(), vec!["0".into(), "3".into()]),
            ("merchant".into(), vec!["acme".into(), "bistro".into()]),
            ("amount".into(), vec!["b0".into(), "b1".into()]),
        ])
        .unwrap();
        (schema, columns, vocabs, quantizers)
    }

    #[test]
    fn token_columns_expand_timestamp() {
        let (schema, columns, ..) = setup();
        assert_eq!(schema.model_fields().count(), 4);
        assert_eq!(columns.len(), 5); // user, ts.hour, ts.dow, merchant, amount
        assert_eq!(columns[1].name, "timestamp.hour");
        assert_eq!(columns[2].name, "timestamp.dow");
    }

    #[test]
    fn encode_known_unknown_and_continuous() {
        let (schema, columns, vocabs, quantizers) = setup();
        // Thursday 1970-01-01 12:00 -> hour "12", dow "3"
        let row: Vec<String> = ["u1", "43200", "acme", "7.3", "0"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let ids = encode_row(&row, &schema, &columns, &vocabs, &quantizers).unwrap();
        let user = vocabs.column("user").unwrap();
        let merchant = vocabs.column("merchant").unwrap();
        let amount = vocabs.column("amount").unwrap();
        assert_eq!(ids[0], user.encode("u1"));
        assert_eq!(ids[3], merchant.encode("acme"));
        // 7.3 with edge at (5+9)/2=7 -> bucket 1
        assert_eq!(ids[4], amount.offset + 1);

        let unseen: Vec<String> = ["u9", "43200", "nope", "2.0", "0"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let ids = encode_row(&unseen, &schema, &columns, &vocabs, &quantizers).unwrap();
        assert_eq!(ids[0], UNK);
        assert_eq!(ids[3], UNK);
    }

    #[test]
    fn decode_round_trips_through_reencoding() {
        let (schema, columns, vocabs, quantizers) = setup();
        let row: Vec<String> = ["u0", "43200", "bistro", "3.0", "0"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let ids = encode_row(&row, &schema, &columns, &vocabs, &quantizers).unwrap();
        let mut clock = DecodeClock::new();
        let decoded = decode_row(&ids, &schema, &columns, &vocabs, &quantizers, &mut clock).unwrap();
        let ids2 = encode_row(&decoded, &schema, &columns, &vocabs, &quantizers).unwrap();
        assert_eq!(ids, ids2, "decode then re-encode must be stable");
    }

    #[test]
    fn arity_mismatch_rejected() {
        let (schema, columns, vocabs, quantizers) = setup();
        let short: Vec<String> = vec!["u0".into()];
        assert!(encode_row(&short, &schema, &columns, &vocabs, &quantizers).is_err());
    }

    #[test]
    fn hour_dow_helpers() {
        assert_eq!(hour_of_day(43_200), 12);
        assert_eq!(day_of_week(0), 3); // Thursday with 0=Monday
        assert_eq!(day_of_week(4 * 86_400), 0); // Monday
    }
}
