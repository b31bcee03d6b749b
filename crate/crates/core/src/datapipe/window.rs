//! Sliding windows over per-entity token rows, plus label/target attachment.

use super::vocab::{VocabSet, NUM_SPECIALS};
use crate::error::{Error, Result};

/// Row-major T x N grid of global token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<u32>,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, ids: Vec<u32>) -> Self {
        assert_eq!(ids.len(), rows * cols);
        TokenGrid { rows, cols, ids }
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.ids[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, id: u32) {
        self.ids[r * self.cols + c] = id;
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.cols..(r + 1) * self.cols]
    }
}

/// One windowed sample: T contiguous rows of one entity.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub entity_id: String,
    pub tokens: TokenGrid,
    /// Row offset of the window start within the entity's series.
    pub start_index: usize,
    pub label: Option<u8>,
    pub targets: Option<Vec<f64>>,
}

/// All rows of one entity in chronological order, with per-row supervision.
#[derive(Debug, Clone)]
pub struct EntitySeries {
    pub entity_id: String,
    pub token_rows: Vec<Vec<u32>>,
    pub row_labels: Vec<Option<u8>>,
    pub row_targets: Vec<Option<Vec<f64>>>,
}

/// Window count is floor((M-T)/stride)+1 for M >= T, else zero; window k
/// starts at row k*stride.
pub fn make_windows(series: &EntitySeries, t: usize, stride: usize) -> Vec<WindowSample> {
    assert!(t >= 1, "window length must be at least 1");
    assert!(stride >= 1, "stride must be at least 1");
    let m = series.token_rows.len();
    if m < t {
        return Vec::new();
    }
    let count = (m - t) / stride + 1;
    let cols = series.token_rows.first().map_or(0, |r| r.len());
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * stride;
        let mut ids = Vec::with_capacity(t * cols);
        for row in &series.token_rows[start..start + t] {
            debug_assert_eq!(row.len(), cols);
            ids.extend_from_slice(row);
        }
        out.push(WindowSample {
            entity_id: series.entity_id.clone(),
            tokens: TokenGrid::new(t, cols, ids),
            start_index: start,
            label: None,
            targets: None,
        });
    }
    out
}

/// How a window's regression targets are summarized from its rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetAggregation {
    LastRow,
    Mean,
}

/// Fill window labels (any fraudulent row makes the window fraudulent) and
/// regression targets (last row by default, mean optionally).
pub fn attach_labels(
    windows: &mut [WindowSample],
    series: &EntitySeries,
    aggregation: TargetAggregation,
) -> Result<()> {
    let has_labels = series.row_labels.iter().any(|l| l.is_some());
    let has_targets = series.row_targets.iter().any(|t| t.is_some());
    if !has_labels && !has_targets {
        return Err(Error::Data(
            "attach_labels: series has neither labels nor targets".into(),
        ));
    }
    for w in windows.iter_mut() {
        let range = w.start_index..w.start_index + w.tokens.rows;
        if has_labels {
            let mut any = 0u8;
            for r in range.clone() {
                match series.row_labels.get(r).copied().flatten() {
                    Some(l) => any |= (l != 0) as u8,
                    None => {
                        return Err(Error::Data(format!(
                            "missing label on row {r} of entity {}",
                            w.entity_id
                        )))
                    }
                }
            }
            w.label = Some(any);
        }
        if has_targets {
            let rows: Vec<&Vec<f64>> = range
                .clone()
                .map(|r| {
                    series.row_targets[r]
                        .as_ref()
                        .ok_or_else(|| Error::Data(format!("missing targets on row {r}")))
                })
                .collect::<Result<_>>()?;
            let dim = rows[0].len();
            let agg = match aggregation {
                TargetAggregation::LastRow => rows.last().unwrap().to_vec(),
                TargetAggregation::Mean => {
                    let mut acc = vec![0.0; dim];
                    for row in &rows {
                        for (a, &v) in acc.iter_mut().zip(row.iter()) {
                            *a += v;
                        }
                    }
                    acc.iter().map(|v| v / rows.len() as f64).collect()
                }
            };
            w.targets = Some(agg);
        }
    }
    Ok(())
}

/// Check that every grid token is legal for its column: inside that column's
/// global range or the reserved special range.
pub fn validate_grid(grid: &TokenGrid, vocabs: &VocabSet) -> Result<()> {
    if grid.cols != vocabs.columns.len() {
        return Err(Error::Data(format!(
            "grid has {} columns but vocab has {}",
            grid.cols,
            vocabs.columns.len()
        )));
    }
    for r in 0..grid.rows {
        for (c, vocab) in vocabs.columns.iter().enumerate() {
            let id = grid.get(r, c);
            if id >= NUM_SPECIALS && !vocab.global_range().contains(&id) {
                return Err(Error::Data(format!(
                    "token {id} at ({r},{c}) outside range {:?} of column '{}'",
                    vocab.global_range(),
                    vocab.field_name
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(m: usize, cols: usize) -> EntitySeries {
        EntitySeries {
            entity_id: "e0".into(),
            token_rows: (0..m).map(|r| vec![r as u32; cols]).collect(),
            row_labels: vec![Some(0); m],
            row_targets: vec![None; m],
        }
    }

    #[test]
    fn window_count_formula() {
        assert_eq!(make_windows(&series(100, 3), 10, 5).len(), 19);
        assert_eq!(make_windows(&series(10, 3), 10, 10).len(), 1);
        assert_eq!(make_windows(&series(9, 3), 10, 5).len(), 0);
    }

    #[test]
    fn windows_start_at_stride_multiples_and_are_contiguous() {
        let s = series(23, 2);
        let ws = make_windows(&s, 4, 3);
        for (k, w) in ws.iter().enumerate() {
            assert_eq!(w.start_index, k * 3);
            for r in 0..4 {
                assert_eq!(w.tokens.row(r), &s.token_rows[w.start_index + r][..]);
            }
        }
    }

    #[test]
    fn stride_equal_t_reconstructs_rows_exactly() {
        let s = series(20, 3);
        let ws = make_windows(&s, 5, 5);
        let mut rebuilt: Vec<Vec<u32>> = Vec::new();
        for w in &ws {
            for r in 0..w.tokens.rows {
                rebuilt.push(w.tokens.row(r).to_vec());
            }
        }
        assert_eq!(rebuilt, s.token_rows);
    }

    #[test]
    fn any_row_fraud_labels_window() {
        let mut s = series(10, 2);
        s.row_labels[7] = Some(1);
        let mut ws = make_windows(&s, 10, 10);
        attach_labels(&mut ws, &s, TargetAggregation::LastRow).unwrap();
        assert_eq!(ws[0].label, Some(1));

        let clean = series(10, 2);
        let mut ws = make_windows(&clean, 10, 10);
        attach_labels(&mut ws, &clean, TargetAggregation::LastRow).unwrap();
        assert_eq!(ws[0].label, Some(0));
    }

    #[test]
    fn regression_targets_last_row_and_mean() {
        let mut s = series(4, 2);
        s.row_labels = vec![None; 4];
        s.row_targets = (0..4).map(|r| Some(vec![r as f64, 10.0 + r as f64])).collect();
        let mut ws = make_windows(&s, 4, 4);
        attach_labels(&mut ws, &s, TargetAggregation::LastRow).unwrap();
        assert_eq!(ws[0].targets, Some(vec![3.0, 13.0]));
        let mut ws = make_windows(&s, 4, 4);
        attach_labels(&mut ws, &s, TargetAggregation::Mean).unwrap();
        assert_eq!(ws[0].targets, Some(vec![1.5, 11.5]));
    }

    #[test]
    fn missing_labels_is_error() {
        let mut s = series(3, 1);
        s.row_labels[1] = None;
        let mut ws = make_windows(&s, 3, 3);
        assert!(attach_labels(&mut ws, &s, TargetAggregation::LastRow).is_err());
    }
}
