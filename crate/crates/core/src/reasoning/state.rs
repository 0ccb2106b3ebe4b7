use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::plan::Reward;

/// Characters per estimated token.
pub const CHARS_PER_TOKEN: usize = 4;

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

/// Origin of post-action information. Only the user costs anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Tool,
    SelfReflection,
    User,
}

impl FeedbackSource {
    pub fn cost(self) -> u32 {
        match self {
            FeedbackSource::User => 1,
            _ => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackSource::Tool => "tool",
            FeedbackSource::SelfReflection => "self_reflection",
            FeedbackSource::User => "user",
        }
    }
}

impl fmt::Display for FeedbackSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub source: FeedbackSource,
    pub text: String,
    pub cost: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl Feedback {
    /// Builds feedback, truncating non-user text longer than `max_chars`.
    /// User answers are never shortened.
    pub fn new(source: FeedbackSource, text: impl Into<String>, max_chars: usize) -> Self {
        let text = text.into();
        let (text, truncated) = if source == FeedbackSource::User {
            (text, false)
        } else {
            truncate_middle(&text, max_chars)
        };
        Feedback { source, cost: source.cost(), text, truncated }
    }
}

/// Keeps the head and tail of `text` so that the result is at most
/// `max_chars` characters, inserting a marker stating how much was cut.
pub fn truncate_middle(text: &str, max_chars: usize) -> (String, bool) {
    let n = text.chars().count();
    if n <= max_chars {
        return (text.to_string(), false);
    }
    let marker = format!("\n... [truncated {} characters] ...\n", n.saturating_sub(max_chars));
    let marker_len = marker.chars().count();
    if max_chars <= marker_len + 2 {
        return (text.chars().take(max_chars).collect(), true);
    }
    let keep = max_chars - marker_len;
    let head = keep / 2;
    let tail = keep - head;
    let mut out: String = text.chars().take(head).collect();
    out.push_str(&marker);
    out.extend(text.chars().skip(n - tail));
    (out, true)
}

/// Keeps the tail of `text` within `max_chars`, prefixed by a marker.
pub fn truncate_tail(text: &str, max_chars: usize) -> (String, bool) {
    let n = text.chars().count();
    if n <= max_chars {
        return (text.to_string(), false);
    }
    let marker = format!("[truncated {} earlier characters]\n", n - max_chars);
    let marker_len = marker.chars().count();
    if max_chars <= marker_len {
        return (text.chars().skip(n - max_chars).collect(), true);
    }
    let keep = max_chars - marker_len;
    let mut out = marker;
    out.extend(text.chars().skip(n - keep));
    (out, true)
}

/// Textual state: a pinned header (problem statement and dataset profile)
/// followed by a rolling window of step and reward blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateText {
    header: String,
    blocks: VecDeque<String>,
    window_chars: usize,
    #[serde(default)]
    dropped_blocks: u64,
}

pub const BLOCK_SEPARATOR: &str = "\n\n";

impl StateText {
    pub fn initial(problem_statement: &str, dataset_profile: &str, window_chars: usize) -> Self {
        let mut header = String::from("## Problem statement\n");
        header.push_str(problem_statement.trim());
        header.push_str("\n\n## Dataset profile\n");
        header.push_str(dataset_profile.trim());
        StateText { header, blocks: VecDeque::new(), window_chars, dropped_blocks: 0 }
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    pub fn blocks(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(String::as_str)
    }

    pub fn last_block(&self) -> Option<&str> {
        self.blocks.back().map(String::as_str)
    }

    pub fn dropped_blocks(&self) -> u64 {
        self.dropped_blocks
    }

    pub fn serialized(&self) -> String {
        let mut out = self.header.clone();
        for b in &self.blocks {
            out.push_str(BLOCK_SEPARATOR);
            out.push_str(b);
        }
        out
    }

    pub fn token_estimate(&self) -> usize {
        estimate_tokens(&self.serialized())
    }

    /// Appends a block verbatim without trimming.
    pub fn with_block(&self, block: String) -> StateText {
        let mut s = self.clone();
        s.blocks.push_back(block);
        s
    }

    /// Reward record carried into the next episode's initial state.
    pub fn reward_block(episode_index: u64, subtask_name: &str, reward: Reward) -> String {
        format!("[episode {episode_index} · {subtask_name}] reward={}", reward.value())
    }

    pub fn step_block(step: usize, action_line: &str, feedback: &Feedback) -> String {
        format!("[step {step}] {action_line}\n[feedback: {}]\n{}", feedback.source, feedback.text)
    }

    /// The transition: appends the step block then drops the oldest blocks
    /// while the window is over budget. The newest block always survives.
    pub fn transition(&self, step: usize, action_line: &str, feedback: &Feedback) -> StateText {
        let mut s = self.with_block(Self::step_block(step, action_line, feedback));
        let mut body: usize = s.blocks.iter().map(|b| b.chars().count() + BLOCK_SEPARATOR.len()).sum();
        while s.blocks.len() > 1 && body > s.window_chars {
            let b = s.blocks.pop_front().expect("non-empty");
            body -= b.chars().count() + BLOCK_SEPARATOR.len();
            s.dropped_blocks += 1;
        }
        s
    }
}

impl fmt::Display for StateText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_costs_follow_source() {
        assert_eq!(Feedback::new(FeedbackSource::User, "yes", 10).cost, 1);
        assert_eq!(Feedback::new(FeedbackSource::Tool, "ok", 10).cost, 0);
        assert_eq!(Feedback::new(FeedbackSource::SelfReflection, "ok", 10).cost, 0);
    }

    #[test]
    fn long_tool_feedback_is_cut_in_the_middle() {
        let text = format!("{}{}", "a".repeat(9000), "b".repeat(9000));
        let f = Feedback::new(FeedbackSource::Tool, text, 8000);
        assert!(f.truncated);
        assert!(f.text.chars().count() <= 8000);
        assert!(f.text.starts_with('a') && f.text.ends_with('b'));
        assert!(f.text.contains("[truncated 10000 characters]"));
        let long_answer = "x".repeat(9000);
        assert_eq!(Feedback::new(FeedbackSource::User, long_answer.clone(), 8000).text, long_answer);
    }

    #[test]
    fn transition_keeps_feedback_as_suffix() {
        let s = StateText::initial("predict y", "200 rows", 100);
        let mut cur = s;
        for t in 0..20 {
            let fb = Feedback::new(FeedbackSource::Tool, format!("result number {t}"), 8000);
            cur = cur.transition(t, "invoke_tool eda", &fb);
            assert!(cur.serialized().ends_with(&fb.text));
            assert!(cur.serialized().starts_with("## Problem statement\npredict y"));
        }
        assert!(cur.dropped_blocks() > 0);
    }

    #[test]
    fn tail_truncation() {
        let (t, cut) = truncate_tail(&"z".repeat(50_000), 2000);
        assert!(cut);
        assert!(t.chars().count() <= 2000);
        assert!(t.starts_with("[truncated"));
    }
}
