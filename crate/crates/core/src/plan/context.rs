//! Project memory: the typed facts the engine has learned about the study.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PlanError;

/// Declared type of a context key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    Text,
    Number,
    Bool,
}

/// The documented vocabulary of context keys and their types.
pub const VOCABULARY: &[(&str, ValueType)] = &[
    ("problem_type", ValueType::Text),
    ("target_column", ValueType::Text),
    ("dataset_path", ValueType::Text),
    ("original_dataset_path", ValueType::Text),
    ("research_question", ValueType::Text),
    ("clinical_background", ValueType::Text),
    ("has_time_event_columns", ValueType::Bool),
    ("time_column", ValueType::Text),
    ("event_column", ValueType::Text),
    ("missing_fraction", ValueType::Number),
    ("n_rows", ValueType::Number),
    ("n_cols", ValueType::Number),
    ("group_column", ValueType::Text),
    ("model_path", ValueType::Text),
    ("cv_folds", ValueType::Number),
    ("high_missing_columns", ValueType::Text),
    ("leakage_candidates", ValueType::Text),
    ("identifier_candidates", ValueType::Text),
    ("selected_features", ValueType::Text),
    ("exclude_columns", ValueType::Text),
    ("missing_placeholders", ValueType::Text),
];

pub fn value_type(key: &str) -> Option<ValueType> {
    VOCABULARY.iter().find(|(k, _)| *k == key).map(|(_, t)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CtxValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl CtxValue {
    pub fn value_type(&self) -> ValueType {
        match self {
            CtxValue::Bool(_) => ValueType::Bool,
            CtxValue::Number(_) => ValueType::Number,
            CtxValue::Text(_) => ValueType::Text,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            CtxValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CtxValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    /// Parses free text (a user answer, a tool field) into the type the key declares.
    pub fn parse_for(key: &str, raw: &str) -> Result<CtxValue, PlanError> {
        let ty = value_type(key).ok_or_else(|| PlanError::UnknownContextKey(key.to_string()))?;
        let raw = raw.trim();
        match ty {
            ValueType::Text => Ok(CtxValue::Text(raw.to_string())),
            ValueType::Number => raw
                .parse::<f64>()
                .map(CtxValue::Number)
                .map_err(|_| PlanError::ContextType { key: key.to_string(), value: raw.to_string() }),
            ValueType::Bool => match raw.to_ascii_lowercase().as_str() {
                "true" | "yes" | "y" | "1" => Ok(CtxValue::Bool(true)),
                "false" | "no" | "n" | "0" => Ok(CtxValue::Bool(false)),
                _ => Err(PlanError::ContextType { key: key.to_string(), value: raw.to_string() }),
            },
        }
    }

    /// Converts a JSON value, checking it against the declared type.
    pub fn from_json(key: &str, value: &serde_json::Value) -> Result<CtxValue, PlanError> {
        let ty = value_type(key).ok_or_else(|| PlanError::UnknownContextKey(key.to_string()))?;
        let mismatch = || PlanError::ContextType { key: key.to_string(), value: value.to_string() };
        match (ty, value) {
            (ValueType::Text, serde_json::Value::String(s)) => Ok(CtxValue::Text(s.clone())),
            (ValueType::Number, serde_json::Value::Number(n)) => n.as_f64().map(CtxValue::Number).ok_or_else(mismatch),
            (ValueType::Bool, serde_json::Value::Bool(b)) => Ok(CtxValue::Bool(*b)),
            (_, serde_json::Value::String(s)) => CtxValue::parse_for(key, s),
            _ => Err(mismatch()),
        }
    }
}

impl fmt::Display for CtxValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CtxValue::Bool(b) => write!(f, "{b}"),
            CtxValue::Number(n) => write!(f, "{n}"),
            CtxValue::Text(s) => f.write_str(s),
        }
    }
}

/// Key/value facts checked by plan conditions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProjectContext {
    facts: BTreeMap<String, CtxValue>,
}

impl ProjectContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&CtxValue> {
        self.facts.get(key)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.facts.get(key).and_then(CtxValue::as_text)
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.facts.get(key).and_then(CtxValue::as_number)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.facts.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: CtxValue) -> Result<(), PlanError> {
        let ty = value_type(key).ok_or_else(|| PlanError::UnknownContextKey(key.to_string()))?;
        if ty != value.value_type() {
            return Err(PlanError::ContextType { key: key.to_string(), value: value.to_string() });
        }
        self.facts.insert(key.to_string(), value);
        Ok(())
    }

    pub fn set_text(&mut self, key: &str, value: impl Into<String>) -> Result<(), PlanError> {
        self.set(key, CtxValue::Text(value.into()))
    }

    pub fn set_number(&mut self, key: &str, value: f64) -> Result<(), PlanError> {
        self.set(key, CtxValue::Number(value))
    }

    pub fn remove(&mut self, key: &str) -> Option<CtxValue> {
        self.facts.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &CtxValue)> {
        self.facts.iter()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_keys_outside_vocabulary() {
        let mut ctx = ProjectContext::new();
        assert!(matches!(ctx.set_text("favourite_colour", "blue"), Err(PlanError::UnknownContextKey(_))));
    }

    #[test]
    fn enforces_declared_types() {
        let mut ctx = ProjectContext::new();
        assert!(ctx.set_text("n_rows", "many").is_err());
        ctx.set_number("n_rows", 200.0).unwrap();
        assert_eq!(ctx.number("n_rows"), Some(200.0));
    }

    #[test]
    fn parses_answers_by_type() {
        assert_eq!(CtxValue::parse_for("has_time_event_columns", "Yes").unwrap(), CtxValue::Bool(true));
        assert_eq!(CtxValue::parse_for("n_rows", " 12 ").unwrap(), CtxValue::Number(12.0));
        assert_eq!(CtxValue::parse_for("problem_type", "regression").unwrap(), CtxValue::Text("regression".into()));
    }
}
