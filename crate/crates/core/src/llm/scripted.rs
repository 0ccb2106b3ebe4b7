//! Deterministic policy driven by a script, for tests and the harness.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{grammar, ActionPolicy, PolicyError, PolicyInput, Proposal, ReflectionSubject};
use crate::reasoning::{Action, StateText};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum ScriptEntry {
    Action {
        action: Action,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rationale: Option<String>,
    },
    /// Generated text to be parsed with the action grammar.
    Raw { text: String },
    /// The next self-reflection text, used verbatim.
    Reflection { text: String },
}

impl ScriptEntry {
    pub fn action(a: Action) -> Self {
        ScriptEntry::Action { action: a, rationale: None }
    }

    fn label(&self) -> &'static str {
        match self {
            ScriptEntry::Action { .. } => "action",
            ScriptEntry::Raw { .. } => "raw",
            ScriptEntry::Reflection { .. } => "reflection",
        }
    }
}

/// Entries are consumed in order. A lane keyed by subtask id is used while
/// it has entries; the default queue serves everything else.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    default: VecDeque<ScriptEntry>,
    #[serde(default)]
    lanes: BTreeMap<String, VecDeque<ScriptEntry>>,
    #[serde(default)]
    consumed: usize,
    #[serde(skip)]
    last_subtask: String,
}

impl ScriptedPolicy {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedPolicy { default: entries.into(), lanes: BTreeMap::new(), consumed: 0, last_subtask: String::new() }
    }

    pub fn from_actions(actions: Vec<Action>) -> Self {
        Self::new(actions.into_iter().map(ScriptEntry::action).collect())
    }

    pub fn with_lane(mut self, subtask_id: &str, entries: Vec<ScriptEntry>) -> Self {
        self.lanes.entry(subtask_id.to_string()).or_default().extend(entries);
        self
    }

    pub fn push_lane(&mut self, subtask_id: &str, entries: impl IntoIterator<Item = ScriptEntry>) {
        self.lanes.entry(subtask_id.to_string()).or_default().extend(entries);
    }

    pub fn remaining(&self) -> usize {
        self.default.len() + self.lanes.values().map(VecDeque::len).sum::<usize>()
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    fn queue(&mut self, subtask: &str) -> &mut VecDeque<ScriptEntry> {
        match self.lanes.get(subtask) {
            Some(q) if !q.is_empty() => self.lanes.get_mut(subtask).expect("present"),
            _ => &mut self.default,
        }
    }

    fn next_proposal_entry(&mut self, subtask: &str) -> Result<ScriptEntry, PolicyError> {
        let q = self.queue(subtask);
        match q.front() {
            None => Err(PolicyError::ScriptExhausted),
            Some(ScriptEntry::Reflection { .. }) => {
                Err(PolicyError::ScriptMismatch { expected: "action".into(), found: "reflection".into() })
            }
            Some(_) => {
                let e = q.pop_front().expect("front");
                self.consumed += 1;
                Ok(e)
            }
        }
    }

    fn proposal_from(entry: ScriptEntry) -> Result<Proposal, grammar::ParseError> {
        match entry {
            ScriptEntry::Action { action, rationale } => Ok(Proposal { action, rationale, raw: None }),
            ScriptEntry::Raw { text } => {
                let (action, rationale) = grammar::parse_action(&text)?;
                Ok(Proposal { action, rationale, raw: Some(text) })
            }
            ScriptEntry::Reflection { .. } => unreachable!("filtered by next_proposal_entry"),
        }
    }

    pub fn peek_label(&self, subtask: &str) -> Option<&'static str> {
        match self.lanes.get(subtask) {
            Some(q) if !q.is_empty() => q.front().map(ScriptEntry::label),
            _ => self.default.front().map(ScriptEntry::label),
        }
    }
}

impl ActionPolicy for ScriptedPolicy {
    fn propose(&mut self, input: &PolicyInput<'_>) -> Result<Proposal, PolicyError> {
        let subtask = input.subtask_id().to_string();
        self.last_subtask = subtask.clone();
        let first = self.next_proposal_entry(&subtask)?;
        match Self::proposal_from(first.clone()) {
            Ok(p) => Ok(p),
            Err(e) => {
                // One repair: the next entry answers the repair prompt.
                let raw = if let ScriptEntry::Raw { text } = &first { text.clone() } else { String::new() };
                let retry = self.next_proposal_entry(&subtask).map_err(|_| PolicyError::Parse { message: e.message.clone(), raw: raw.clone() })?;
                Self::proposal_from(retry).map_err(|e2| PolicyError::Parse { message: e2.message, raw })
            }
        }
    }

    fn reflect(&mut self, _state: &StateText, _subject: &ReflectionSubject) -> Result<String, PolicyError> {
        // Only a reflection at the head of the active queue is taken;
        // otherwise the mechanical fallback applies.
        let subtask = self.last_subtask.clone();
        let q = self.queue(&subtask);
        if let Some(ScriptEntry::Reflection { .. }) = q.front() {
            if let Some(ScriptEntry::Reflection { text }) = q.pop_front() {
                self.consumed += 1;
                return Ok(text);
            }
        }
        Err(PolicyError::Unsupported)
    }
}
