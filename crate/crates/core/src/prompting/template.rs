//! Minimal `{name}` placeholder templates.
//!
//! Syntax: `{name}` is replaced by the named value; `{{` and `}}` produce
//! literal braces. Names are ASCII letters, digits, `_` and `-`. Unknown or
//! unterminated placeholders are errors, so a typo in a template file fails
//! loudly instead of leaking into a prompt.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template {template}: stray '}}' at byte {offset}")]
    StrayBrace { template: String, offset: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Text(String),
    Var(String),
}

/// A parsed template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    name: String,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(name: &str, source: &str) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut text = String::new();
        let bytes = source.as_bytes();
        let mut i = 0;
        while i < source.len() {
            let c = source[i..].chars().next().expect("in bounds");
            match c {
                '{' if bytes.get(i + 1) == Some(&b'{') => {
                    text.push('{');
                    i += 2;
                }
                '}' if bytes.get(i + 1) == Some(&b'}') => {
                    text.push('}');
                    i += 2;
                }
                '{' => {
                    let end = source[i + 1..].find('}').ok_or(TemplateError::Unterminated {
                        template: name.to_string(),
                        offset: i,
                    })?;
                    let var = &source[i + 1..i + 1 + end];
                    if var.is_empty()
                        || !var.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
                    {
                        return Err(TemplateError::Unterminated {
                            template: name.to_string(),
                            offset: i,
                        });
                    }
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Var(var.to_string()));
                    i += end + 2;
                }
                '}' => {
                    return Err(TemplateError::StrayBrace {
                        template: name.to_string(),
                        offset: i,
                    })
                }
                _ => {
                    text.push(c);
                    i += c.len_utf8();
                }
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        Ok(Self {
            name: name.to_string(),
            pieces,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Placeholder names, in order of first use.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.pieces {
            if let Piece::Var(v) = p {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn render(&self, vars: &Vars) -> Result<String, TemplateError> {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(v) => out.push_str(vars.0.get(v.as_str()).ok_or_else(|| {
                    TemplateError::UnknownPlaceholder {
                        template: self.name.clone(),
                        name: v.clone(),
                    }
                })?),
            }
        }
        Ok(out)
    }
}

/// Placeholder values.
#[derive(Clone, Debug, Default)]
pub struct Vars(BTreeMap<String, String>);

impl Vars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        self.0.insert(name.to_string(), value.into());
    }
}
