//! Recorded data-engineering steps. Each step keeps the parameters it was
//! fitted with so it can be replayed on new data at prediction time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::frame::{is_missing_token, Column, Frame, FrameError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeStrategy {
    Mean,
    Median,
    Mode,
    Hotdeck,
}

impl ImputeStrategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Some(Self::Mean),
            "median" => Some(Self::Median),
            "mode" | "most_frequent" => Some(Self::Mode),
            "hotdeck" | "hot_deck" | "hot-deck" => Some(Self::Hotdeck),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformStep {
    DropColumns {
        columns: Vec<String>,
    },
    NormalizeMissing {
        placeholders: Vec<String>,
        columns: Vec<String>,
    },
    /// Rows with a gap in any of `columns` were removed. Only a target gap
    /// removes a row at prediction time.
    DropRows {
        columns: Vec<String>,
        rows_removed: usize,
    },
    Impute {
        strategy: ImputeStrategy,
        /// Fill text per column used when replaying the step.
        fills: BTreeMap<String, String>,
    },
    OneHot {
        column: String,
        levels: Vec<String>,
        output_columns: Vec<String>,
        unknown_column: String,
    },
}

pub fn one_hot_name(column: &str, level: &str) -> String {
    format!("{column}_{level}")
}

pub fn unknown_name(column: &str) -> String {
    format!("{column}__unknown")
}

impl TransformStep {
    pub fn describe(&self) -> String {
        match self {
            TransformStep::DropColumns { columns } => format!("drop columns {}", columns.join(", ")),
            TransformStep::NormalizeMissing { placeholders, columns } => {
                format!("mark {} as missing in {} column(s)", placeholders.join("/"), columns.len())
            }
            TransformStep::DropRows { columns, rows_removed } => {
                format!("drop {rows_removed} row(s) with gaps in {}", columns.join(", "))
            }
            TransformStep::Impute { strategy, fills } => format!("{strategy:?} imputation of {} column(s)", fills.len()).to_lowercase(),
            TransformStep::OneHot { column, levels, .. } => format!("one-hot encode {column} ({} levels + unknown)", levels.len()),
        }
    }

    /// Replays the step on new data. `target` rows are only dropped for a
    /// gap in the target itself; the target is never filled.
    pub fn apply_inference(&self, frame: &Frame, target: Option<&str>) -> Result<Frame, FrameError> {
        match self {
            TransformStep::DropColumns { columns } => {
                let present: Vec<String> = columns.iter().filter(|c| frame.has_column(c)).cloned().collect();
                frame.drop_columns(&present)
            }
            TransformStep::NormalizeMissing { placeholders, columns } => {
                let mut out = frame.clone();
                for name in columns {
                    if let Some(c) = out.column_mut(name) {
                        for v in c.values.iter_mut() {
                            if placeholders.iter().any(|p| p == v.trim()) {
                                v.clear();
                            }
                        }
                    }
                }
                Ok(out)
            }
            TransformStep::DropRows { columns, .. } => match target {
                Some(t) if columns.iter().any(|c| c == t) && frame.has_column(t) => {
                    let col = frame.require(t)?.clone();
                    Ok(frame.filter_rows(|r| !col.is_missing(r)))
                }
                _ => Ok(frame.clone()),
            },
            TransformStep::Impute { fills, .. } => {
                let mut out = frame.clone();
                for (name, fill) in fills {
                    if Some(name.as_str()) == target {
                        continue;
                    }
                    if let Some(c) = out.column_mut(name) {
                        for v in c.values.iter_mut() {
                            if is_missing_token(v) {
                                *v = fill.clone();
                            }
                        }
                    }
                }
                Ok(out)
            }
            TransformStep::OneHot { column, levels, output_columns, unknown_column } => {
                let Some(src) = frame.column(column) else {
                    return Ok(frame.clone());
                };
                let cols = encode_with_levels(src, levels, output_columns, unknown_column);
                let mut out = frame.clone();
                out.splice_column(column, cols)?;
                Ok(out)
            }
        }
    }
}

/// Indicator columns for `levels` plus the unknown bucket.
pub fn encode_with_levels(src: &Column, levels: &[String], output_columns: &[String], unknown_column: &str) -> Vec<Column> {
    let n = src.len();
    let mut cols: Vec<Column> = output_columns.iter().map(|name| Column::new(name.clone(), vec!["0".to_string(); n])).collect();
    let mut unknown = Column::new(unknown_column.to_string(), vec!["0".to_string(); n]);
    for (r, v) in src.values.iter().enumerate() {
        let t = v.trim();
        match levels.iter().position(|l| l == t) {
            Some(i) => cols[i].values[r] = "1".into(),
            None => unknown.values[r] = "1".into(),
        }
    }
    cols.push(unknown);
    cols
}

/// Replays a recipe in order.
pub fn apply_recipe(recipe: &[TransformStep], frame: &Frame, target: Option<&str>) -> Result<Frame, FrameError> {
    let mut cur = frame.clone();
    for step in recipe {
        cur = step.apply_inference(&cur, target)?;
    }
    Ok(cur)
}
