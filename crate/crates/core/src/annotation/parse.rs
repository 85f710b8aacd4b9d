use crate::error::{Error, Result};
use crate::repository::{LabelSet, SemanticLabel};

/// Lowercased, trimmed, single-spaced form used for label identity.
pub fn canonicalize(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Canonical form for identity, trimmed original as the surface form. No
/// stemming or synonym folding.
pub fn normalize_label(raw: &str) -> Result<SemanticLabel> {
    let surface = raw.trim();
    if surface.is_empty() {
        return Err(Error::EmptyLabel);
    }
    Ok(SemanticLabel {
        canonical: canonicalize(surface),
        surface: surface.to_string(),
    })
}

/// Extracts labels from a model response.
///
/// The first JSON array of strings in `raw` wins. Without one, list lines are
/// used: lines with a `-`, `*`, `•` or `1.`/`1)` marker, or bare short lines
/// (at most 8 words, no sentence punctuation at the end). Duplicates by
/// canonical form are dropped and the result is truncated to `max_labels`.
pub fn parse_label_response(raw: &str, max_labels: usize) -> Result<Vec<SemanticLabel>> {
    let candidates = first_json_string_array(raw).unwrap_or_else(|| list_lines(raw));
    let mut labels = LabelSet::new();
    for candidate in candidates {
        if labels.len() >= max_labels {
            break;
        }
        if let Ok(label) = normalize_label(&candidate) {
            labels.insert(label);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyResponse);
    }
    Ok(labels.iter().cloned().collect())
}

fn first_json_string_array(raw: &str) -> Option<Vec<String>> {
    raw.match_indices('[').find_map(|(i, _)| {
        serde_json::Deserializer::from_str(&raw[i..])
            .into_iter::<Vec<String>>()
            .next()
            .and_then(|r| r.ok())
    })
}

fn list_lines(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let (marked, body) = strip_marker(line);
        let body = body
            .trim()
            .trim_end_matches(',')
            .trim_matches(|c| c == '"' || c == '\'' || c == '`')
            .trim();
        if body.is_empty() {
            continue;
        }
        let bare_ok = body.split_whitespace().count() <= 8
            && !body.ends_with(['.', '!', '?', ':']);
        if marked || bare_ok {
            out.push(body.to_string());
        }
    }
    out
}

fn strip_marker(line: &str) -> (bool, &str) {
    for marker in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(marker) {
            return (true, rest);
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return (true, rest);
        }
    }
    (false, line)
}
