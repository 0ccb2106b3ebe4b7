//! The final report: a markdown summary rendered only from the session log
//! and its blobs, so the same log always gives the same bytes.

use std::fmt::Write;

use serde_json::Value;

use super::store::Blobs;
use super::{EventBody, SessionRecord};
use crate::plan::SubtaskStatus;
use crate::tools::{ModelArtifact, ToolReport, ToolStatus};

pub const REPORT_FILE: &str = "final_report.md";

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "n/a".into()
    }
}

fn json_num(v: &Value) -> String {
    v.as_f64().map_or_else(|| "n/a".into(), num)
}

/// Successful reports of one tool, in log order.
fn tool_reports(record: &SessionRecord, blobs: &dyn Blobs, tool: &str) -> Vec<ToolReport> {
    record
        .events()
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ToolReportRef { tool: t, status: ToolStatus::Success, hash, .. } if t == tool => Some(hash),
            _ => None,
        })
        .filter_map(|h| blobs.get_blob(h))
        .filter_map(|b| serde_json::from_slice(&b).ok())
        .collect()
}

pub fn render_report(record: &SessionRecord, blobs: &dyn Blobs) -> String {
    let mut s = String::from("# Final report\n\n");
    let Some(header) = record.header() else {
        return s;
    };
    s.push_str("## Problem statement\n\n");
    let ps = header.problem_statement.trim();
    let _ = writeln!(s, "{}\n", if ps.is_empty() { "(none given)" } else { ps });
    let _ = writeln!(s, "Mode: {}. Plan policy: {}. Seed: {}.\n", header.mode.as_str(), header.policy, header.seed);
    s.push_str("## Dataset\n\n```\n");
    s.push_str(header.dataset_profile.trim_end());
    s.push_str("\n```\n\n");
    let ctx = record.context();
    if !ctx.is_empty() {
        s.push_str("Recorded project facts:\n\n");
        for (k, v) in ctx.iter() {
            let _ = writeln!(s, "- {k}: {v}");
        }
        s.push('\n');
    }

    if let Some(plan) = record.plan() {
        let progress = plan.progress_snapshot();
        for stage in &progress.stages {
            let _ = writeln!(s, "## Stage: {}\n", stage.name);
            if stage.completed == 0 {
                s.push_str("Stage not performed.\n\n");
            }
            for sub in &stage.subtasks {
                let mark = match sub.status {
                    SubtaskStatus::Completed => "[x]",
                    SubtaskStatus::Skipped => "[-]",
                    SubtaskStatus::Failed | SubtaskStatus::Pending => "[ ]",
                };
                let rec = plan.record(&sub.id);
                let reward = rec.and_then(|r| r.last_reward).map_or("-".to_string(), |r| r.value().to_string());
                let _ = writeln!(s, "- {mark} {} (`{}`): attempts {}, last reward {reward}", sub.name, sub.id, sub.attempts);
            }
            s.push('\n');
        }
    }

    s.push_str("## Data transformations\n\n");
    if record.recipe().is_empty() {
        s.push_str("No transformations were recorded.\n\n");
    } else {
        for (i, step) in record.recipe().iter().enumerate() {
            let _ = writeln!(s, "{}. {}", i + 1, step.describe());
        }
        s.push('\n');
    }
    let diffs: Vec<_> = record
        .events()
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::DataDiff { before, after, diff, .. } => Some((before, after, diff)),
            _ => None,
        })
        .collect();
    if !diffs.is_empty() {
        s.push_str("Dataset versions:\n\n");
        for (before, after, diff) in diffs {
            let _ = writeln!(s, "- `{before}` -> `{after}`: {}", diff.summary());
        }
        s.push('\n');
    }

    s.push_str("## Findings\n\n");
    if record.findings().is_empty() {
        s.push_str("No findings were recorded.\n\n");
    } else {
        for (_, f) in record.findings() {
            let _ = writeln!(s, "- {} [{}]: {}", f.kind, f.columns.join(", "), f.message.trim());
        }
        s.push('\n');
    }

    s.push_str("## Models\n\n");
    match record.models().last() {
        None => s.push_str("No model was trained.\n\n"),
        Some(m) => {
            let _ = writeln!(
                s,
                "Selected model `{}`: {} {} model, cross-validated {} = {}.\n",
                m.path,
                m.problem_type,
                m.family,
                m.metric,
                num(m.cv_score)
            );
            let folds: Vec<String> = m.cv_fold_scores.iter().map(|v| num(*v)).collect();
            let _ = writeln!(s, "Fold scores: {}.\n", folds.join(", "));
            let artifact = blobs.get_blob(&m.hash).and_then(|b| serde_json::from_slice::<ModelArtifact>(&b).ok());
            if let Some(a) = artifact.filter(|a| !a.candidates.is_empty()) {
                let _ = writeln!(s, "| candidate | family | mean {} | sd |\n|---|---|---|---|", a.metric);
                for c in &a.candidates {
                    let _ = writeln!(s, "| {} | {} | {} | {} |", c.name, c.family, num(c.mean), num(c.sd));
                }
                s.push('\n');
            }
        }
    }

    s.push_str("## Feature importance\n\n");
    match tool_reports(record, blobs, "permutation_importance").last() {
        None => s.push_str("Not computed.\n\n"),
        Some(r) => {
            let _ = writeln!(s, "Permutation importance ({}), baseline {}.\n", r.output["metric"].as_str().unwrap_or("?"), json_num(&r.output["baseline"]));
            s.push_str("| feature | importance |\n|---|---|\n");
            for imp in r.output["importances"].as_array().into_iter().flatten() {
                let _ = writeln!(s, "| {} | {} |", imp["feature"].as_str().unwrap_or("?"), json_num(&imp["mean"]));
            }
            s.push('\n');
        }
    }

    s.push_str("## Subgroup analysis\n\n");
    let groups = tool_reports(record, blobs, "subgroup_analysis");
    if groups.is_empty() {
        s.push_str("Not performed.\n\n");
    }
    for r in &groups {
        let _ = writeln!(
            s,
            "By `{}` ({}; overall {}):\n",
            r.output["group_column"].as_str().unwrap_or("?"),
            r.output["metric"].as_str().unwrap_or("?"),
            json_num(&r.output["overall"])
        );
        s.push_str("| group | n | value | small sample |\n|---|---|---|---|\n");
        for g in r.output["groups"].as_array().into_iter().flatten() {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |",
                g["group"].as_str().unwrap_or("?"),
                g["n"].as_u64().unwrap_or(0),
                json_num(&g["value"]),
                if g["small_sample"].as_bool().unwrap_or(false) { "yes" } else { "no" }
            );
        }
        s.push('\n');
    }
    if let Some(r) = tool_reports(record, blobs, "confidence_stratify").last() {
        s.push_str("## Confidence strata\n\n");
        for name in ["easy", "ambiguous", "hard"] {
            let _ = writeln!(s, "- {name}: {}", r.output["counts"][name].as_u64().unwrap_or(0));
        }
        s.push('\n');
    }

    s.push_str("## User effort\n\n");
    let ledger = record.ledger();
    let _ = writeln!(s, "{} episode(s); {} user interaction(s) in total.\n", record.episodes().len(), ledger.total);
    for t in record.episodes() {
        let reward = t.reward.map_or("-".to_string(), |r| r.value().to_string());
        let _ = writeln!(s, "- episode {} `{}`: cost {}, reward {reward}", t.episode_index, t.episode_type.subtask_id, ledger.episode(t.episode_index));
    }
    s
}
