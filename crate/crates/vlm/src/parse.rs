//! Extraction of a plan from free-form model output.

use harmony_core::harmonizer::HarmonizationPlan;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message} (near: {fragment:?})")]
pub struct ParseError {
    pub message: String,
    /// The offending part of the response, truncated.
    pub fragment: String,
}

fn truncate(s: &str) -> String {
    const MAX: usize = 200;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// First JSON object embedded in `text`, with its byte offset.
fn first_object(text: &str) -> Option<(usize, Value)> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v @ Value::Object(_))) => Some((i, v)),
            _ => None,
        }
    })
}

/// Parses the first JSON object in a model response as a plan.
///
/// Prose and code fences around the object are ignored. The plan's shape is
/// checked here; its constraints are not.
pub fn parse_plan(text: &str) -> Result<HarmonizationPlan, ParseError> {
    let (offset, value) = first_object(text).ok_or_else(|| ParseError {
        message: "no JSON object in response".into(),
        fragment: truncate(text),
    })?;
    serde_json::from_value(value.clone()).map_err(|e| ParseError {
        message: format!("plan has the wrong shape: {e}"),
        fragment: truncate(&text[offset..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_object() {
        let p = parse_plan(r#"{"groups":[{"ids":[1,2],"target_category":"paragraph"}]}"#).unwrap();
        assert_eq!(p.groups.len(), 1);
        assert_eq!(p.groups[0].ids, vec![1, 2]);
        assert_eq!(p.groups[0].bbox_override, None);
    }

    #[test]
    fn fenced_with_prose() {
        let text = "Sure! Here is the plan {as requested}:\n```json\n{\"groups\":[{\"ids\":[1,2],\"target_category\":\"paragraph\"}]}\n```\nLet me know.";
        let p = parse_plan(text).unwrap();
        assert_eq!(p.groups[0].ids, vec![1, 2]);
    }

    #[test]
    fn override_box_parsed() {
        let p = parse_plan(r#"{"groups":[{"ids":[1],"target_category":"title","bbox":[1,2,3,4.5]}]}"#).unwrap();
        assert_eq!(p.groups[0].bbox_override.unwrap().y1, 4.5);
    }

    #[test]
    fn shape_errors() {
        assert!(parse_plan(r#"{"groups":"oops"}"#)
            .unwrap_err()
            .message
            .contains("wrong shape"));
        assert!(parse_plan("no json here").is_err());
        let e = parse_plan(r#"{"groups":[{"ids":[1],"target_category":"x","bbox":["a",2,3,4]}]}"#).unwrap_err();
        assert!(e.fragment.starts_with("{\"groups\""));
    }
}
