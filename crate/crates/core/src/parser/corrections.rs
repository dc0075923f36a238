use std::sync::LazyLock;

use regex::Regex;

use super::strip_quotes;
use crate::correction::{CorrectionAction, ParsedAnswer};

static NUMBERED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\*\*)?(\d+)\s*[.):]\s*(?:\*\*)?\s*(.*?)\s*$").unwrap());
static ANSWER_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^(?:\*\*)?answer(?:\*\*)?\s*:\s*").unwrap());
static WRONG_SPAN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^wrong span\s*:\s*(.+)$").unwrap());
static WRONG_TYPE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^wrong type\s*:\s*(.+)$").unwrap());

fn classify(body: &str) -> Option<CorrectionAction> {
    let body = ANSWER_PREFIX.replace(body.trim(), "");
    let body = body.trim().trim_matches('*').trim();
    let bare = body.trim_end_matches('.').trim().to_lowercase();
    if bare == "correct" {
        return Some(CorrectionAction::Keep);
    }
    if bare == "not a named entity" {
        return Some(CorrectionAction::Drop);
    }
    if let Some(c) = WRONG_SPAN.captures(body) {
        let span = strip_quotes(c[1].trim());
        return (!span.is_empty()).then(|| CorrectionAction::ReviseSpan(span.to_string()));
    }
    if let Some(c) = WRONG_TYPE.captures(body) {
        let t = strip_quotes(c[1].trim().trim_end_matches('.'));
        return (!t.is_empty()).then(|| CorrectionAction::ReviseType(t.to_string()));
    }
    None
}

/// Reads one numbered answer per batch item. Items whose answer is missing
/// or does not fit the response grammar come back as `Keep` flagged
/// malformed. When an index appears more than once, the first well-formed
/// answer wins.
pub fn parse_correction_response(text: &str, batch_len: usize) -> Vec<ParsedAnswer> {
    let mut answers: Vec<Option<CorrectionAction>> = vec![None; batch_len];
    for line in text.lines() {
        let Some(caps) = NUMBERED.captures(line) else {
            continue;
        };
        let Ok(n) = caps[1].parse::<usize>() else {
            continue;
        };
        if n == 0 || n > batch_len || answers[n - 1].is_some() {
            continue;
        }
        answers[n - 1] = classify(&caps[2]);
    }
    answers
        .into_iter()
        .map(|a| match a {
            Some(action) => ParsedAnswer {
                action,
                malformed: false,
            },
            None => ParsedAnswer {
                action: CorrectionAction::Keep,
                malformed: true,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use CorrectionAction::*;

    fn actions(text: &str, n: usize) -> Vec<(CorrectionAction, bool)> {
        parse_correction_response(text, n)
            .into_iter()
            .map(|a| (a.action, a.malformed))
            .collect()
    }

    #[test]
    fn all_four_directives() {
        let text = "1. Correct\n2. Wrong Span: \"Bank of America\"\n3. Wrong Type: organization.\n4. Answer: Not a Named Entity";
        assert_eq!(
            actions(text, 4),
            vec![
                (Keep, false),
                (ReviseSpan("Bank of America".into()), false),
                (ReviseType("organization".into()), false),
                (Drop, false),
            ]
        );
    }

    #[test]
    fn missing_and_garbled_answers_are_flagged() {
        let text = "1. Sentence: \"echo of the prompt\"\n1. Correct.\n3. Maybe?\n7. Correct";
        assert_eq!(
            actions(text, 3),
            vec![(Keep, false), (Keep, true), (Keep, true)]
        );
    }

    #[test]
    fn span_kept_verbatim() {
        assert_eq!(actions("1. Wrong Span: U.S.", 1), vec![(ReviseSpan("U.S.".into()), false)]);
        assert_eq!(actions("1. Wrong Span: 'Apple Inc'", 1), vec![(ReviseSpan("Apple Inc".into()), false)]);
    }
}
