//! Prompt rendering and the chat-completions request body.

use std::fmt::Write as _;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use harmony_core::harmonizer::{remap_category, AgentError, RuleSet};
use harmony_core::taxonomy::TaxonomyMapping;
use harmony_core::PageRecord;
use serde::Serialize;

use crate::AgentConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageUrl {
    pub url: String,
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// The text part of the request: page facts, numbered annotations, target
/// conventions, output contract, and any feedback from rejected attempts.
pub fn render_prompt(
    page: &PageRecord,
    mapping: &TaxonomyMapping,
    rules: &RuleSet,
    feedback: &[String],
) -> Result<String, AgentError> {
    let mut p = String::new();
    let _ = writeln!(
        p,
        "You are harmonizing the layout annotations of one document page to a target annotation standard."
    );
    let _ = writeln!(
        p,
        "Page {} ({}), {} x {} pixels, origin top-left.\n",
        page.image_id,
        page.file_name,
        fmt_num(page.width),
        fmt_num(page.height)
    );
    let _ = writeln!(
        p,
        "Source annotations (id, source category -> suggested target, bbox [x0, y0, x1, y1]):"
    );
    for (i, a) in page.annotations.iter().enumerate() {
        let target = remap_category(mapping, rules, &a.category)?;
        let b = a.bbox;
        let _ = writeln!(
            p,
            "{}. id={} category=\"{}\" -> \"{}\" bbox=[{}, {}, {}, {}]",
            i + 1,
            a.id,
            a.category,
            target,
            fmt_num(b.x0),
            fmt_num(b.y0),
            fmt_num(b.x1),
            fmt_num(b.y1)
        );
    }
    let _ = writeln!(p, "\nTarget categories and their annotation conventions:");
    for (name, conv) in rules.iter() {
        let _ = writeln!(p, "- {name}: {}", conv.description);
    }
    let ids: Vec<String> = page.annotations.iter().map(|a| a.id.to_string()).collect();
    let _ = writeln!(
        p,
        "\nGroup the source annotations so that each group becomes exactly one target annotation. \
         Every id in [{}] must appear in exactly one group. Do not invent ids, drop ids, or split an annotation. \
         Each target_category must be one of the target categories above. \
         An optional bbox corrects the merged box; it must lie inside the page and overlap the group's source boxes.",
        ids.join(", ")
    );
    let _ = writeln!(
        p,
        "Respond with JSON only, in the form {{\"groups\":[{{\"ids\":[1,2],\"target_category\":\"paragraph\",\"bbox\":[x0,y0,x1,y1]}}]}} where bbox may be omitted."
    );
    if !feedback.is_empty() {
        let _ = writeln!(p, "\nYour previous answers were rejected:");
        for (i, f) in feedback.iter().enumerate() {
            let _ = writeln!(p, "attempt {}: {f}", i + 1);
        }
        let _ = writeln!(p, "Return a corrected plan.");
    }
    Ok(p)
}

fn mime_for(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

/// Reads the page image. Pages without a readable image are refused.
pub fn read_image(page: &PageRecord) -> Result<(Vec<u8>, &'static str), AgentError> {
    let path = page
        .image_path
        .as_ref()
        .ok_or_else(|| AgentError::Grounding(format!("page {} has no image path", page.image_id)))?;
    let bytes = std::fs::read(path).map_err(|e| AgentError::Grounding(format!("{}: {e}", path.display())))?;
    Ok((bytes, mime_for(path)))
}

/// Request body for one attempt. Fails before any network activity when the
/// page image cannot be read or a category cannot be mapped.
pub fn build_request(
    page: &PageRecord,
    mapping: &TaxonomyMapping,
    rules: &RuleSet,
    config: &AgentConfig,
    feedback: &[String],
) -> Result<(ChatRequest, String), AgentError> {
    let (bytes, mime) = read_image(page)?;
    let prompt = render_prompt(page, mapping, rules, feedback)?;
    let request = ChatRequest {
        model: config.model.clone(),
        temperature: config.temperature,
        messages: vec![ChatMessage {
            role: "user".into(),
            content: vec![
                ContentPart::Text { text: prompt.clone() },
                ContentPart::ImageUrl {
                    image_url: ImageUrl {
                        url: format!("data:{mime};base64,{}", STANDARD.encode(bytes)),
                    },
                },
            ],
        }],
    };
    Ok((request, prompt))
}
