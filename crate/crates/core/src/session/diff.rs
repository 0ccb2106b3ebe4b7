//! Structural comparison of two versions of a dataset for the dashboard.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tools::frame::Frame;

/// Above this many compared cells, changes are estimated from a sample.
pub const EXACT_CELL_LIMIT: usize = 2_000_000;
const SAMPLE_ROWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingDelta {
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataDiff {
    pub columns_added: Vec<String>,
    pub columns_removed: Vec<String>,
    pub columns_type_changed: Vec<String>,
    pub rows_before: usize,
    pub rows_after: usize,
    /// Changed cells in shared columns. Only defined when the row count is
    /// unchanged, since rows cannot be aligned otherwise.
    pub cells_changed: Option<u64>,
    #[serde(default)]
    pub cells_changed_estimated: bool,
    /// Shared columns whose missing-value count changed.
    #[serde(default)]
    pub missing_changed: BTreeMap<String, MissingDelta>,
}

impl DataDiff {
    pub fn is_empty(&self) -> bool {
        self.columns_added.is_empty()
            && self.columns_removed.is_empty()
            && self.columns_type_changed.is_empty()
            && self.rows_before == self.rows_after
            && self.cells_changed.unwrap_or(0) == 0
            && self.missing_changed.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.columns_removed.is_empty() {
            parts.push(format!("Columns {:?} were dropped", self.columns_removed));
        }
        if !self.columns_added.is_empty() {
            parts.push(format!("Columns {:?} were added", self.columns_added));
        }
        if !self.columns_type_changed.is_empty() {
            parts.push(format!("Columns {:?} changed type", self.columns_type_changed));
        }
        if self.rows_before != self.rows_after {
            parts.push(format!("{} rows -> {} rows", self.rows_before, self.rows_after));
        }
        if let Some(c) = self.cells_changed.filter(|c| *c > 0) {
            parts.push(format!("{}{c} cells changed", if self.cells_changed_estimated { "about " } else { "" }));
        }
        let filled: usize = self.missing_changed.values().map(|d| d.before.saturating_sub(d.after)).sum();
        if filled > 0 {
            parts.push(format!("{filled} missing values filled"));
        }
        if parts.is_empty() {
            "No changes.".into()
        } else {
            parts.join("; ") + "."
        }
    }
}

pub fn compute_data_diff(before: &Frame, after: &Frame) -> DataDiff {
    let bn = before.names();
    let an = after.names();
    let columns_removed: Vec<String> = bn.iter().filter(|c| !after.has_column(c)).cloned().collect();
    let columns_added: Vec<String> = an.iter().filter(|c| !before.has_column(c)).cloned().collect();
    let shared: Vec<&String> = bn.iter().filter(|c| after.has_column(c)).collect();
    let mut columns_type_changed = Vec::new();
    let mut missing_changed = BTreeMap::new();
    for c in &shared {
        let (b, a) = (before.column(c).expect("shared"), after.column(c).expect("shared"));
        if b.dtype() != a.dtype() {
            columns_type_changed.push((*c).clone());
        }
        let (mb, ma) = (b.missing_count(), a.missing_count());
        if mb != ma {
            missing_changed.insert((*c).clone(), MissingDelta { before: mb, after: ma });
        }
    }
    let (mut cells_changed, mut estimated) = (None, false);
    if before.n_rows() == after.n_rows() {
        let n = before.n_rows();
        let rows: Vec<usize> = if n * shared.len() > EXACT_CELL_LIMIT {
            estimated = true;
            let stride = n.div_ceil(SAMPLE_ROWS);
            (0..n).step_by(stride).collect()
        } else {
            (0..n).collect()
        };
        let mut changed = 0u64;
        for c in &shared {
            let (b, a) = (before.column(c).expect("shared"), after.column(c).expect("shared"));
            changed += rows.iter().filter(|&&r| b.values[r].trim() != a.values[r].trim()).count() as u64;
        }
        cells_changed = Some(if estimated && !rows.is_empty() { (changed as f64 * n as f64 / rows.len() as f64).round() as u64 } else { changed });
    }
    DataDiff {
        columns_added,
        columns_removed,
        columns_type_changed,
        rows_before: before.n_rows(),
        rows_after: after.n_rows(),
        cells_changed,
        cells_changed_estimated: estimated,
        missing_changed,
    }
}
