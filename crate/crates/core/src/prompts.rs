//! Prompt templates.
//!
//! Templates use `{name}` placeholders; `{{` and `}}` produce literal
//! braces. Substituted values are never re-scanned.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template}: placeholder {{{name}}} has no value")]
    Unresolved { template: String, name: String },
    #[error("template {template}: required placeholder {{{name}}} is missing")]
    MissingPlaceholder { template: String, name: String },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub text: String,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with("{{") || rest.starts_with("}}") {
            out.push(Piece::Text(&text[start..i]));
            out.push(Piece::Brace(bytes[i] as char));
            i += 2;
            start = i;
            continue;
        }
        if bytes[i] == b'{' {
            let name_len = rest[1..].find(|c: char| !is_ident(c)).unwrap_or(rest.len() - 1);
            let name = &rest[1..1 + name_len];
            if name.starts_with(is_ident_start) && rest[1 + name_len..].starts_with('}') {
                out.push(Piece::Text(&text[start..i]));
                out.push(Piece::Slot(name));
                i += name_len + 2;
                start = i;
                continue;
            }
        }
        i += rest.chars().next().map_or(1, char::len_utf8);
    }
    out.push(Piece::Text(&text[start..]));
    out
}

/// Names of `{identifier}` placeholders left in `text`.
pub fn unresolved_placeholders(text: &str) -> Vec<String> {
    pieces(text)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(name) => Some(name.to_string()),
            _ => None,
        })
        .collect()
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Template { name: name.into(), text: text.into() }
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        unresolved_placeholders(&self.text).into_iter().collect()
    }

    pub fn require(&self, names: &[&str]) -> Result<(), PromptError> {
        let have = self.placeholders();
        for n in names {
            if !have.contains(*n) {
                return Err(PromptError::MissingPlaceholder { template: self.name.clone(), name: n.to_string() });
            }
        }
        Ok(())
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len());
        for p in pieces(&self.text) {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Brace(c) => out.push(c),
                Piece::Slot(name) => {
                    let value = vars.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).ok_or_else(|| {
                        PromptError::Unresolved { template: self.name.clone(), name: name.to_string() }
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// All templates used by the pipeline.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub extract: Template,
    pub recalibrate: Template,
    pub merge: Template,
    pub track_link: Template,
    pub track_delta: Template,
    pub reason: Template,
    pub retrieve: Template,
    pub predict: Template,
}

const REQUIRED: &[(&str, &[&str])] = &[
    ("extract", &["taxonomy", "document"]),
    ("recalibrate", &["taxonomy", "events"]),
    ("merge", &["cluster_events", "taxonomy"]),
    ("track_link", &["current_event", "candidates"]),
    ("track_delta", &["current_event", "chain"]),
    ("train", &["stock", "information", "price_change"]),
    ("retrieve", &["current_series", "candidates"]),
    ("test", &["stock", "information", "hist_reflection"]),
];

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            extract: Template::new("extract", include_str!("../prompts/extract.txt")),
            recalibrate: Template::new("recalibrate", include_str!("../prompts/recalibrate.txt")),
            merge: Template::new("merge", include_str!("../prompts/merge.txt")),
            track_link: Template::new("track_link", include_str!("../prompts/track_link.txt")),
            track_delta: Template::new("track_delta", include_str!("../prompts/track_delta.txt")),
            reason: Template::new("train", include_str!("../prompts/train.txt")),
            retrieve: Template::new("retrieve", include_str!("../prompts/retrieve.txt")),
            predict: Template::new("test", include_str!("../prompts/test.txt")),
        }
    }
}

impl PromptSet {
    /// Bundled templates, with any `<name>.txt` found in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = PromptSet::default();
        for t in set.templates_mut() {
            let path = dir.join(format!("{}.txt", t.name));
            if path.exists() {
                t.text = fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io { path: path.display().to_string(), message: e.to_string() })?;
            }
        }
        set.validate()?;
        Ok(set)
    }

    fn templates_mut(&mut self) -> [&mut Template; 8] {
        [
            &mut self.extract,
            &mut self.recalibrate,
            &mut self.merge,
            &mut self.track_link,
            &mut self.track_delta,
            &mut self.reason,
            &mut self.retrieve,
            &mut self.predict,
        ]
    }

    pub fn validate(&mut self) -> Result<(), PromptError> {
        for t in self.templates_mut() {
            let needed = REQUIRED.iter().find(|(n, _)| *n == t.name).map(|(_, r)| *r).unwrap_or(&[]);
            t.require(needed)?;
        }
        Ok(())
    }
}
