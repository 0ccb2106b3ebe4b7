//! Scripted stand-in for the clinician: knows the field, the variables and
//! the goal, but nothing about data science.

use std::collections::{BTreeMap, BTreeSet};

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};

use crate::engine::{UserChannel, UserReply};
use crate::session::{SessionRecord, UserRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaTurn {
    /// Case-insensitive regex matched against the prompt.
    pub pattern: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaScript {
    #[serde(default)]
    pub assumptions: Vec<String>,
    /// Tried in order; the first match answers.
    pub turns: Vec<PersonaTurn>,
    /// Answers to context requests, by key.
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    /// Used when no turn matches. Without it the session is aborted.
    #[serde(default)]
    pub default_answer: Option<String>,
    /// Subtasks whose first validation is a rejection.
    #[serde(default)]
    pub reject_once: BTreeSet<String>,
    /// Answer to "skip or retry" once a subtask ran out of attempts.
    #[serde(default = "default_exhausted")]
    pub on_exhausted: String,
}

fn default_exhausted() -> String {
    "skip".into()
}

impl PersonaScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Answer for a prompt, if the script has one.
    pub fn answer_for(&self, prompt: &str) -> Option<String> {
        for t in &self.turns {
            let Ok(re) = RegexBuilder::new(&t.pattern).case_insensitive(true).build() else {
                continue;
            };
            if re.is_match(prompt) {
                return Some(t.answer.clone());
            }
        }
        self.default_answer.clone()
    }
}

/// The persona for the bundled synthetic cohort.
pub fn default_persona() -> PersonaScript {
    let turn = |p: &str, a: &str| PersonaTurn { pattern: p.into(), answer: a.into() };
    PersonaScript {
        assumptions: vec![
            "No data-science knowledge.".into(),
            "Knows the clinical field, the variables and the research goal.".into(),
        ],
        turns: vec![
            turn("confirm|correct|right", "yes"),
            turn("research question|goal|background", "We want to predict the outcome score y from baseline measurements of each patient."),
            turn("target", "y"),
            turn("classification|regression|problem type|kind of problem", "regression"),
            turn("subgroup|group", "site"),
            turn("exclude|keep|remove", "Keep all clinical columns; patient_id is only a record number."),
            turn("column|variable|feature", "patient_id is a record number and followup_score is measured after baseline."),
            turn("satisf|happy|iterate|improve", "yes, this is good enough"),
            turn("anything else|finish|final", "No, thank you."),
        ],
        context: BTreeMap::from([
            ("target_column".to_string(), "y".to_string()),
            ("problem_type".to_string(), "regression".to_string()),
            ("group_column".to_string(), "site".to_string()),
            ("research_question".to_string(), "Predict y from baseline measurements.".to_string()),
        ]),
        default_answer: None,
        reject_once: BTreeSet::new(),
        on_exhausted: default_exhausted(),
    }
}

/// A [`UserChannel`] that answers from a persona script.
#[derive(Debug, Clone)]
pub struct PersonaUser {
    pub script: PersonaScript,
    rejected: BTreeSet<String>,
    /// Prompts the persona answered, in order.
    pub answered: Vec<String>,
}

impl PersonaUser {
    pub fn new(script: PersonaScript) -> Self {
        PersonaUser { script, rejected: BTreeSet::new(), answered: Vec::new() }
    }
}

impl UserChannel for PersonaUser {
    fn reply(&mut self, request: &UserRequest, _record: &SessionRecord) -> UserReply {
        match request {
            UserRequest::Validation { subtask_id, .. } => {
                if self.script.reject_once.contains(subtask_id) && self.rejected.insert(subtask_id.clone()) {
                    UserReply::Validate { approved: false, comment: Some("Please try again.".into()) }
                } else {
                    UserReply::Validate { approved: true, comment: None }
                }
            }
            UserRequest::AttemptsExhausted { .. } => UserReply::Answer(self.script.on_exhausted.clone()),
            UserRequest::Context { key, prompt, .. } => {
                let answer = self.script.context.get(key).cloned().or_else(|| self.script.answer_for(prompt));
                match answer {
                    Some(a) => {
                        self.answered.push(prompt.clone());
                        UserReply::Answer(a)
                    }
                    None => UserReply::Abort(format!("persona has no answer for: {prompt}")),
                }
            }
            UserRequest::Question { prompt, .. } => match self.script.answer_for(prompt) {
                Some(a) => {
                    self.answered.push(prompt.clone());
                    UserReply::Answer(a)
                }
                None => UserReply::Abort(format!("persona has no answer for: {prompt}")),
            },
        }
    }
}
