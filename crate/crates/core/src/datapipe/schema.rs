//! Column schema: field kinds, model-input roles, ordering and grouping.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Categorical,
    Continuous,
    Timestamp,
    Label,
    Target,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub include_in_model: bool,
}

/// How rows are ordered within an entity: a timestamp column, or the row
/// order of the input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderingKey {
    Column(String),
    RowIndex,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSchema {
    pub fields: Vec<FieldSpec>,
    /// Column that groups rows into entities (users, sites). None = one
    /// global entity.
    pub entity: Option<String>,
    pub ordering: OrderingKey,
}

/// Hints resolving column roles that a bare header cannot determine.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TypeHints {
    pub label: Option<String>,
    pub targets: Vec<String>,
    pub entity: Option<String>,
    pub continuous: Vec<String>,
    pub categorical: Vec<String>,
    pub timestamp: Option<String>,
    /// Order rows as they appear in the file instead of by a timestamp.
    pub row_index_ordering: bool,
}

impl TableSchema {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn model_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.include_in_model)
    }

    pub fn label_field(&self) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.kind == FieldKind::Label)
    }

    pub fn target_fields(&self) -> Vec<&FieldSpec> {
        self.fields
            .iter()
            .filter(|f| f.kind == FieldKind::Target)
            .collect()
    }
}

/// Assign a `FieldSpec` to every header column.
///
/// Unhinted columns default to categorical; continuous and timestamp columns
/// must be named by hints (or by the conventional name "timestamp"). Exactly
/// one ordering key must result: a single timestamp column, or explicit
/// row-index ordering with no timestamp column at all.
pub fn infer_schema(csv_header: &[String], hints: &TypeHints) -> Result<TableSchema> {
    if csv_header.is_empty() {
        return Err(Error::Schema("empty header".into()));
    }
    let mut seen = BTreeSet::new();
    for name in csv_header {
        if !seen.insert(name.as_str()) {
            return Err(Error::Schema(format!("duplicate column name '{name}'")));
        }
    }
    for hinted in hints
        .label
        .iter()
        .chain(hints.targets.iter())
        .chain(hints.entity.iter())
        .chain(hints.continuous.iter())
        .chain(hints.categorical.iter())
        .chain(hints.timestamp.iter())
    {
        if !seen.contains(hinted.as_str()) {
            return Err(Error::Schema(format!(
                "hint references unknown column '{hinted}'"
            )));
        }
    }

    let mut fields = Vec::with_capacity(csv_header.len());
    for name in csv_header {
        let kind = if hints.label.as_deref() == Some(name) {
            FieldKind::Label
        } else if hints.targets.iter().any(|t| t == name) {
            FieldKind::Target
        } else if hints.timestamp.as_deref() == Some(name)
            || (hints.timestamp.is_none() && name == "timestamp")
        {
            FieldKind::Timestamp
        } else if hints.continuous.iter().any(|c| c == name) {
            FieldKind::Continuous
        } else {
            FieldKind::Categorical
        };
        // labels and targets are never model inputs
        let include = !matches!(kind, FieldKind::Label | FieldKind::Target);
        fields.push(FieldSpec {
            name: name.clone(),
            kind,
            include_in_model: include,
        });
    }

    let timestamps: Vec<&FieldSpec> = fields
        .iter()
        .filter(|f| f.kind == FieldKind::Timestamp)
        .collect();
    let ordering = match (timestamps.len(), hints.row_index_ordering) {
        (1, false) => OrderingKey::Column(timestamps[0].name.clone()),
        (0, true) => OrderingKey::RowIndex,
        (0, false) => {
            return Err(Error::Schema(
                "no ordering key: provide a timestamp column or set row_index_ordering".into(),
            ))
        }
        (1, true) => {
            return Err(Error::Schema(
                "both a timestamp column and row_index_ordering given".into(),
            ))
        }
        (n, _) => {
            return Err(Error::Schema(format!(
                "{n} timestamp columns; exactly one ordering key required"
            )))
        }
    };

    Ok(TableSchema {
        fields,
        entity: hints.entity.clone(),
        ordering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn transaction_header_eleven_model_fields_one_label() {
        let cols = header(&[
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
        ]);
        let hints = TypeHints {
            label: Some("isFraud?".into()),
            entity: Some("user".into()),
            continuous: vec!["amount".into()],
            ..Default::default()
        };
        let schema = infer_schema(&cols, &hints).unwrap();
        assert_eq!(schema.fields.len(), 12);
        assert_eq!(schema.model_fields().count(), 11);
        assert_eq!(schema.label_field().unwrap().name, "isFraud?");
        assert!(!schema.label_field().unwrap().include_in_model);
        assert_eq!(schema.ordering, OrderingKey::Column("timestamp".into()));
    }

    #[test]
    fn pollution_header_nine_model_fields_two_targets() {
        let cols = header(&[
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
        ]);
        let hints = TypeHints {
            targets: vec!["pm25".into(), "pm10".into()],
            entity: Some("site".into()),
            continuous: vec![
                "temperature".into(),
                "pressure".into(),
                "dewpoint".into(),
                "humidity".into(),
                "wind_speed".into(),
                "precipitation".into(),
            ],
            ..Default::default()
        };
        let schema = infer_schema(&cols, &hints).unwrap();
        assert_eq!(schema.fields.len(), 11);
        assert_eq!(schema.model_fields().count(), 9);
        assert_eq!(schema.target_fields().len(), 2);
    }

    #[test]
    fn missing_ordering_key_is_error() {
        let cols = header(&["value"]);
        assert!(infer_schema(&cols, &TypeHints::default()).is_err());
    }

    #[test]
    fn row_index_ordering_accepted() {
        let cols = header(&["value"]);
        let hints = TypeHints {
            row_index_ordering: true,
            ..Default::default()
        };
        let schema = infer_schema(&cols, &hints).unwrap();
        assert_eq!(schema.ordering, OrderingKey::RowIndex);
    }

    #[test]
    fn duplicate_columns_rejected() {
        let cols = header(&["a", "timestamp", "a"]);
        assert!(infer_schema(&cols, &TypeHints::default()).is_err());
    }

    #[test]
    fn unknown_hint_rejected() {
        let cols = header(&["timestamp", "x"]);
        let hints = TypeHints {
            label: Some("nope".into()),
            ..Default::default()
        };
        assert!(infer_schema(&cols, &hints).is_err());
    }
}
