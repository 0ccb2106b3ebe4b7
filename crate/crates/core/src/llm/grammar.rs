//! Turning generated text into an action. The policy answers with a short
//! rationale and one fenced block holding the action's JSON form.

use crate::reasoning::Action;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct ParseError {
    pub message: String,
}

fn err(message: impl Into<String>) -> ParseError {
    ParseError { message: message.into() }
}

/// Fenced blocks as (info string, body).
fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let t = line.trim_start();
        if let Some(info) = t.strip_prefix("```") {
            let info = info.trim().to_ascii_lowercase();
            let mut body = Vec::new();
            for inner in lines.by_ref() {
                if inner.trim_start().starts_with("```") {
                    break;
                }
                body.push(inner);
            }
            out.push((info, body.join("\n")));
        }
    }
    out
}

/// Parses the action and returns it with the rationale (the text outside
/// the block). An `action` block wins; a `json` block or bare JSON object
/// with a `kind` field is accepted as a fallback.
pub fn parse_action(text: &str) -> Result<(Action, Option<String>), ParseError> {
    let blocks = fenced_blocks(text);
    let body = blocks
        .iter()
        .find(|(info, _)| info == "action")
        .or_else(|| blocks.iter().find(|(info, b)| (info == "json" || info.is_empty()) && b.contains("\"kind\"")))
        .map(|(_, b)| b.clone());
    let (json, rationale) = match body {
        Some(b) => {
            let rationale = strip_blocks(text);
            (b, rationale)
        }
        None => {
            let t = text.trim();
            if t.starts_with('{') && t.ends_with('}') {
                (t.to_string(), String::new())
            } else {
                return Err(err("no ```action block found"));
            }
        }
    };
    let value: serde_json::Value = serde_json::from_str(json.trim()).map_err(|e| err(format!("invalid action JSON: {e}")))?;
    // Unknown fields on a unit variant slip through serde's check.
    if value.get("kind").and_then(|k| k.as_str()) == Some("stop") && value.as_object().is_some_and(|o| o.len() > 1) {
        return Err(err("invalid action JSON: stop takes no fields"));
    }
    let action: Action = serde_json::from_value(value).map_err(|e| err(format!("invalid action JSON: {e}")))?;
    let rationale = rationale.trim();
    Ok((action, if rationale.is_empty() { None } else { Some(rationale.to_string()) }))
}

fn strip_blocks(text: &str) -> String {
    let mut out = Vec::new();
    let mut inside = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            inside = !inside;
            continue;
        }
        if !inside {
            out.push(line);
        }
    }
    out.join("\n")
}

/// Renders an action in the grammar, the inverse of `parse_action`.
pub fn render_action(action: &Action, rationale: Option<&str>) -> String {
    let json = serde_json::to_string(action).expect("actions serialize");
    match rationale {
        Some(r) if !r.trim().is_empty() => format!("{}\n\n```action\n{json}\n```", r.trim()),
        _ => format!("```action\n{json}\n```"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_fenced_action_and_rationale() {
        let t = "Load the data first.\n```action\n{\"kind\": \"invoke_tool\", \"tool\": \"eda\", \"params\": {}}\n```\n";
        let (a, r) = parse_action(t).unwrap();
        assert_eq!(a, Action::tool("eda", json!({})));
        assert_eq!(r.as_deref(), Some("Load the data first."));
    }

    #[test]
    fn stop_and_bare_json() {
        assert_eq!(parse_action("```action\n{\"kind\":\"stop\"}\n```").unwrap().0, Action::Stop);
        assert_eq!(parse_action("{\"kind\":\"stop\"}").unwrap().0, Action::Stop);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_action("I think we should stop").is_err());
        assert!(parse_action("```action\n{\"kind\":\"fly\"}\n```").is_err());
        assert!(parse_action("```action\n{\"kind\":\"stop\",\"extra\":1}\n```").is_err());
    }

    #[test]
    fn render_roundtrips() {
        let a = Action::code("print(1)\nprint('```')");
        let (b, r) = parse_action(&render_action(&a, Some("why"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(r.as_deref(), Some("why"));
    }
}
