//! A small column-oriented table that keeps every cell's original text, so
//! columns a transformation does not touch are written back unchanged.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

/// Cell texts read as missing.
pub const MISSING_TOKENS: &[&str] = &["", "NA", "NaN", "nan", "N/A", "null", "None"];

pub fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    MISSING_TOKENS.contains(&t)
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("cannot read `{path}`: {message}")]
    Read { path: String, message: String },
    #[error("cannot write `{path}`: {message}")]
    Write { path: String, message: String },
    #[error("row {row} has {found} fields, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("no such column `{0}`")]
    NoColumn(String),
    #[error("the file has no header row")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Int,
    Float,
    Text,
}

impl DType {
    /// Labels as commonly printed by dataframe libraries.
    pub fn label(self) -> &'static str {
        match self {
            DType::Int => "int64",
            DType::Float => "float64",
            DType::Text => "object",
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, DType::Text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<String>,
}

pub fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Formats a float so it reads back exactly and integral values keep a
/// decimal point ("2.0").
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Self {
        Column { name: name.into(), values }
    }

    pub fn from_f64(name: impl Into<String>, values: &[f64]) -> Self {
        Column { name: name.into(), values: values.iter().map(|v| format_float(*v)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_missing(&self, i: usize) -> bool {
        is_missing_token(&self.values[i])
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| is_missing_token(v)).count()
    }

    /// Non-missing cell texts.
    pub fn present(&self) -> impl Iterator<Item = &str> {
        self.values.iter().map(String::as_str).filter(|v| !is_missing_token(v))
    }

    pub fn dtype(&self) -> DType {
        let mut any = false;
        let mut all_int = true;
        for v in self.present() {
            any = true;
            let t = v.trim();
            if t.parse::<i64>().is_ok() {
                continue;
            }
            if parse_number(t).is_some() {
                all_int = false;
            } else {
                return DType::Text;
            }
        }
        if !any {
            // An all-missing column reads as float, like NaN-only columns.
            return DType::Float;
        }
        if all_int && self.missing_count() == 0 {
            DType::Int
        } else {
            DType::Float
        }
    }

    /// Integer-valued (possibly with gaps).
    pub fn is_integer_valued(&self) -> bool {
        let mut any = false;
        for v in self.present() {
            any = true;
            match parse_number(v) {
                Some(x) if x.fract() == 0.0 => {}
                _ => return false,
            }
        }
        any
    }

    /// Numeric view; `None` if some present cell is not a number.
    pub fn numeric(&self) -> Option<Vec<Option<f64>>> {
        let mut out = Vec::with_capacity(self.values.len());
        for v in &self.values {
            if is_missing_token(v) {
                out.push(None);
            } else {
                out.push(Some(parse_number(v)?));
            }
        }
        Some(out)
    }

    /// Numeric values of present cells; `None` if the column is not numeric.
    pub fn numeric_present(&self) -> Option<Vec<f64>> {
        self.numeric().map(|v| v.into_iter().flatten().collect())
    }

    pub fn unique_count(&self) -> usize {
        let mut seen: Vec<&str> = self.present().map(str::trim).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Level counts of present cells, most frequent first, ties by text.
    pub fn level_counts(&self) -> Vec<(String, usize)> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for v in self.present() {
            *counts.entry(v.trim()).or_default() += 1;
        }
        let mut out: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| level_order(&a.0, &b.0)));
        out
    }
}

/// Orders levels numerically when both parse as numbers, else by text.
pub fn level_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (parse_number(a), parse_number(b)) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    columns: Vec<Column>,
    n_rows: usize,
}

fn sniff_delimiter(first_line: &str) -> u8 {
    let mut best = b',';
    let mut best_count = 0;
    for d in [b',', b';', b'\t'] {
        let c = first_line.bytes().filter(|b| *b == d).count();
        if c > best_count {
            best = d;
            best_count = c;
        }
    }
    best
}

impl Frame {
    pub fn new(columns: Vec<Column>) -> Result<Frame, FrameError> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut names = std::collections::HashSet::new();
        for (i, c) in columns.iter().enumerate() {
            if !names.insert(c.name.clone()) {
                return Err(FrameError::DuplicateColumn(c.name.clone()));
            }
            if c.len() != n_rows {
                return Err(FrameError::Ragged { row: i, found: c.len(), expected: n_rows });
            }
        }
        Ok(Frame { columns, n_rows })
    }

    pub fn parse(text: &str) -> Result<Frame, FrameError> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let first = text.lines().next().ok_or(FrameError::Empty)?;
        if first.trim().is_empty() {
            return Err(FrameError::Empty);
        }
        let delimiter = sniff_delimiter(first);
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(true)
            .from_reader(text.as_bytes());
        let err = |e: csv::Error| FrameError::Read { path: "<text>".into(), message: e.to_string() };
        let headers: Vec<String> = reader.headers().map_err(err)?.iter().map(|h| h.trim().to_string()).collect();
        let mut columns: Vec<Column> = headers.iter().map(|h| Column::new(h.clone(), Vec::new())).collect();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(err)?;
            if rec.len() == 1 && rec.get(0) == Some("") && headers.len() > 1 {
                continue;
            }
            if rec.len() != headers.len() {
                return Err(FrameError::Ragged { row: i + 1, found: rec.len(), expected: headers.len() });
            }
            for (c, field) in columns.iter_mut().zip(rec.iter()) {
                c.values.push(field.to_string());
            }
        }
        Frame::new(columns)
    }

    pub fn read(path: &Path) -> Result<Frame, FrameError> {
        let bytes = std::fs::read(path).map_err(|e| FrameError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let text = String::from_utf8_lossy(&bytes);
        Frame::parse(&text).map_err(|e| match e {
            FrameError::Read { message, .. } => FrameError::Read { path: path.display().to_string(), message },
            other => other,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str())).expect("in-memory write");
        for r in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| c.values[r].as_str())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 input")
    }

    pub fn write(&self, path: &Path) -> Result<(), FrameError> {
        std::fs::write(path, self.to_csv()).map_err(|e| FrameError::Write { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Column, FrameError> {
        self.column(name).ok_or_else(|| FrameError::NoColumn(name.to_string()))
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_some()
    }

    pub fn total_missing(&self) -> usize {
        self.columns.iter().map(Column::missing_count).sum()
    }

    pub fn row_has_missing(&self, r: usize) -> bool {
        self.columns.iter().any(|c| c.is_missing(r))
    }

    pub fn rows_with_missing(&self) -> usize {
        (0..self.n_rows).filter(|r| self.row_has_missing(*r)).count()
    }

    pub fn row(&self, r: usize) -> Vec<&str> {
        self.columns.iter().map(|c| c.values[r].as_str()).collect()
    }

    pub fn duplicate_rows(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        (0..self.n_rows).filter(|r| !seen.insert(self.row(*r))).count()
    }

    pub fn drop_columns(&self, names: &[String]) -> Result<Frame, FrameError> {
        for n in names {
            self.require(n)?;
        }
        let columns = self.columns.iter().filter(|c| !names.contains(&c.name)).cloned().collect();
        Frame::new(columns)
    }

    pub fn select_columns(&self, names: &[String]) -> Result<Frame, FrameError> {
        let columns = names.iter().map(|n| self.require(n).cloned()).collect::<Result<Vec<_>, _>>()?;
        Frame::new(columns)
    }

    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Frame {
        let idx: Vec<usize> = (0..self.n_rows).filter(|r| keep(*r)).collect();
        self.take_rows(&idx)
    }

    pub fn take_rows(&self, idx: &[usize]) -> Frame {
        let columns = self
            .columns
            .iter()
            .map(|c| Column::new(c.name.clone(), idx.iter().map(|&r| c.values[r].clone()).collect()))
            .collect();
        Frame { columns, n_rows: idx.len() }
    }

    pub fn replace_column(&mut self, column: Column) -> Result<(), FrameError> {
        if column.len() != self.n_rows {
            return Err(FrameError::Ragged { row: 0, found: column.len(), expected: self.n_rows });
        }
        match self.columns.iter_mut().find(|c| c.name == column.name) {
            Some(slot) => *slot = column,
            None => return Err(FrameError::NoColumn(column.name)),
        }
        Ok(())
    }

    /// Replaces `name` by `replacement` columns at the same position.
    pub fn splice_column(&mut self, name: &str, replacement: Vec<Column>) -> Result<(), FrameError> {
        let pos = self.columns.iter().position(|c| c.name == name).ok_or_else(|| FrameError::NoColumn(name.to_string()))?;
        for c in &replacement {
            if c.len() != self.n_rows {
                return Err(FrameError::Ragged { row: 0, found: c.len(), expected: self.n_rows });
            }
            if c.name != name && self.has_column(&c.name) {
                return Err(FrameError::DuplicateColumn(c.name.clone()));
            }
        }
        self.columns.splice(pos..=pos, replacement);
        Ok(())
    }

    pub fn push_column(&mut self, column: Column) -> Result<(), FrameError> {
        if self.has_column(&column.name) {
            return Err(FrameError::DuplicateColumn(column.name));
        }
        if !self.columns.is_empty() && column.len() != self.n_rows {
            return Err(FrameError::Ragged { row: 0, found: column.len(), expected: self.n_rows });
        }
        if self.columns.is_empty() {
            self.n_rows = column.len();
        }
        self.columns.push(column);
        Ok(())
    }

    /// Numeric matrix (row-major) of `features`, or the first offending column.
    pub fn numeric_matrix(&self, features: &[String]) -> Result<Vec<Vec<f64>>, String> {
        let mut cols = Vec::with_capacity(features.len());
        for f in features {
            let c = self.column(f).ok_or_else(|| format!("missing column `{f}`"))?;
            let v = c.numeric().ok_or_else(|| format!("column `{f}` is not numeric"))?;
            let v: Option<Vec<f64>> = v.into_iter().collect();
            cols.push(v.ok_or_else(|| format!("column `{f}` has missing values"))?);
        }
        Ok((0..self.n_rows).map(|r| cols.iter().map(|c| c[r]).collect()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sniffs_semicolons_and_types() {
        let f = Frame::parse("a;b;c\n1;x;1.5\n2;y;NA\n").unwrap();
        assert_eq!(f.n_cols(), 3);
        assert_eq!(f.column("a").unwrap().dtype(), DType::Int);
        assert_eq!(f.column("b").unwrap().dtype(), DType::Text);
        assert_eq!(f.column("c").unwrap().dtype(), DType::Float);
        assert_eq!(f.total_missing(), 1);
    }

    #[test]
    fn round_trip_preserves_text() {
        let src = "id,note\n001,\"hello, world\"\n002,plain\n";
        let f = Frame::parse(src).unwrap();
        assert_eq!(f.to_csv(), src);
        assert_eq!(f.column("id").unwrap().values[0], "001");
    }

    #[test]
    fn duplicates_and_ragged() {
        let f = Frame::parse("a,b\n1,2\n1,2\n3,4\n1,2\n").unwrap();
        assert_eq!(f.duplicate_rows(), 2);
        assert!(matches!(Frame::parse("a,b\n1\n"), Err(FrameError::Ragged { .. })));
        assert!(matches!(Frame::parse("a,a\n1,2\n"), Err(FrameError::DuplicateColumn(_))));
    }

    #[test]
    fn float_format_keeps_point() {
        assert_eq!(format_float(2.0), "2.0");
        assert_eq!(format_float(0.1 + 0.2), "0.30000000000000004");
    }
}
