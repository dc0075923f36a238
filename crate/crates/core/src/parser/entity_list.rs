use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{is_fence, strip_quotes};

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*•])\s+(.*)$").unwrap());

/// Entities (or attribute values) read from a list completion.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityList {
    pub entities: Vec<String>,
    /// Non-empty lines that were not read as list items.
    pub skipped_lines: usize,
}

fn clean(item: &str) -> Option<String> {
    let item = item.trim().trim_matches(|c| c == '*' || c == '[' || c == ']');
    let item = strip_quotes(item).trim_end_matches([',', ';']).trim();
    (!item.is_empty()).then(|| item.to_string())
}

/// Drops a trailing description such as `Politics: news about government`
/// or `Joe Biden - US president`.
fn strip_description(item: &str) -> &str {
    [": ", " - ", " – ", " — "]
        .iter()
        .filter_map(|sep| item.find(sep))
        .min()
        .map_or(item, |i| &item[..i])
}

/// Reads one item per numbered or bulleted line, or comma-separated items
/// from unmarked lines. Unmarked lines that look like prose (ending in
/// `.:!?` or longer than eight words) are skipped. Output is deduplicated
/// in first-seen order.
pub fn parse_entity_list(text: &str) -> EntityList {
    let mut out = EntityList::default();
    let mut seen = HashSet::new();
    let mut push = |item: Option<String>, out: &mut EntityList| {
        if let Some(item) = item {
            if seen.insert(item.clone()) {
                out.entities.push(item);
            }
        }
    };
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || is_fence(trimmed) {
            continue;
        }
        if let Some(caps) = MARKER.captures(trimmed) {
            let body = caps.get(1).expect("group").as_str();
            push(clean(strip_description(body)), &mut out);
        } else if trimmed.contains(',') {
            for part in trimmed.split(',') {
                push(clean(part), &mut out);
            }
        } else if trimmed.ends_with(['.', ':', '!', '?']) || trimmed.split_whitespace().count() > 8 {
            out.skipped_lines += 1;
        } else {
            push(clean(trimmed), &mut out);
        }
    }
    out
}
