use std::ops::Range;

use unicode_general_category::{get_general_category, GeneralCategory as Gc};

/// True for characters in the Unicode punctuation (P*) and symbol (S*)
/// general categories. Each such character is a token on its own.
pub fn is_punct(c: char) -> bool {
    matches!(
        get_general_category(c),
        Gc::ConnectorPunctuation
            | Gc::DashPunctuation
            | Gc::OpenPunctuation
            | Gc::ClosePunctuation
            | Gc::InitialPunctuation
            | Gc::FinalPunctuation
            | Gc::OtherPunctuation
            | Gc::MathSymbol
            | Gc::CurrencySymbol
            | Gc::ModifierSymbol
            | Gc::OtherSymbol
    )
}

/// Splits on whitespace and punctuation; punctuation characters become
/// single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}

/// Byte ranges of the tokens [`tokenize`] would produce.
pub fn tokenize_with_offsets(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || is_punct(c) {
            if let Some(s) = word_start.take() {
                out.push(s..i);
            }
            if !c.is_whitespace() {
                out.push(i..i + c.len_utf8());
            }
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(s) = word_start {
        out.push(s..text.len());
    }
    out
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || is_punct(c)
}

/// Whether a token boundary falls at byte offset `idx` of `text`.
pub fn is_token_boundary(text: &str, idx: usize) -> bool {
    if idx == 0 || idx >= text.len() {
        return idx <= text.len();
    }
    if !text.is_char_boundary(idx) {
        return false;
    }
    let before = text[..idx].chars().next_back();
    let after = text[idx..].chars().next();
    before.is_some_and(is_separator) || after.is_some_and(is_separator)
}

/// Start offsets of every occurrence of `span` in `sentence` whose both ends
/// fall on token boundaries. Occurrences may overlap each other. Spans that
/// are empty or carry surrounding whitespace never occur.
pub fn aligned_occurrences(sentence: &str, span: &str) -> Vec<usize> {
    if span.is_empty() || span.trim() != span || span.len() > sentence.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = sentence[from..].find(span) {
        let start = from + pos;
        if is_token_boundary(sentence, start) && is_token_boundary(sentence, start + span.len()) {
            out.push(start);
        }
        // advance by one char so overlapping occurrences are still found
        from = start + sentence[start..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

const CLOSING: &str = ".,;:!?)]}%…»”";
const OPENING: &str = "([{$£€¥«“¿¡#";
const CONNECTORS: &str = "-/'’–";

/// Joins tokens with natural spacing: no space before closing punctuation,
/// none after opening punctuation, none around connectors such as `-`.
/// Straight double quotes alternate between opening and closing.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    detokenize_with_offsets(tokens).0
}

/// [`detokenize`] plus the byte range of each token in the output.
pub fn detokenize_with_offsets<S: AsRef<str>>(tokens: &[S]) -> (String, Vec<Range<usize>>) {
    let mut out = String::new();
    let mut ranges = Vec::with_capacity(tokens.len());
    let mut quotes_open = false;
    // whether the previous token suppresses the space after it
    let mut glue_next = true;
    for tok in tokens {
        let tok = tok.as_ref();
        let single = single_char(tok);
        let (glue_before, glue_after) = match single {
            Some('"') => {
                quotes_open = !quotes_open;
                if quotes_open {
                    (false, true)
                } else {
                    (true, false)
                }
            }
            Some(c) if CONNECTORS.contains(c) => (true, true),
            Some(c) if CLOSING.contains(c) => (true, false),
            Some(c) if OPENING.contains(c) => (false, true),
            _ => (false, false),
        };
        if !out.is_empty() && !glue_next && !glue_before {
            out.push(' ');
        }
        let start = out.len();
        out.push_str(tok);
        ranges.push(start..out.len());
        glue_next = glue_after;
    }
    (out, ranges)
}

fn single_char(tok: &str) -> Option<char> {
    let mut it = tok.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}
