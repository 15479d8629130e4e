//! Fixed two-level event taxonomy: 13 event groups holding 57 event types.
//!
//! The taxonomy is plain data shipped with the crate (`data/taxonomy.txt`).
//! Indices follow file order so that the occurrence vectors built from it
//! are reproducible across runs.
//!
//! A few type names (for example `Market Size`) occur under more than one
//! group. Type names are therefore unique per group, and a bare name that
//! matches several groups resolves to [`TaxonomyError::AmbiguousType`].
//! The qualified form `Group / Type` always resolves uniquely.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of event groups in the standard taxonomy.
pub const GROUP_COUNT: usize = 13;
/// Number of event types in the standard taxonomy.
pub const TYPE_COUNT: usize = 57;

const STANDARD_SOURCE: &str = include_str!("../data/taxonomy.txt");

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("line {line}: event type {name:?} appears before any group header")]
    OrphanType { line: usize, name: String },
    #[error("line {line}: malformed group header {text:?}")]
    MalformedHeader { line: usize, text: String },
    #[error("group {0:?} is declared more than once")]
    DuplicateGroup(String),
    #[error("group {group:?} lists event type {name:?} more than once")]
    DuplicateType { group: String, name: String },
    #[error("group {0:?} has no event types")]
    EmptyGroup(String),
    #[error("expected {expected} event groups, found {found}")]
    GroupCount { expected: usize, found: usize },
    #[error("expected {expected} event types, found {found}")]
    TypeCount { expected: usize, found: usize },
    #[error("unknown event type {0:?}")]
    UnknownType(String),
    #[error("unknown event group {0:?}")]
    UnknownGroup(String),
    #[error("event type {name:?} exists in several groups: {groups:?}")]
    AmbiguousType { name: String, groups: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypeId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventGroup {
    pub id: GroupId,
    pub name: String,
    /// Member types in listing order.
    pub types: Vec<TypeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventType {
    pub id: TypeId,
    pub name: String,
    pub group: GroupId,
}

/// Validated, immutable taxonomy.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    groups: Vec<EventGroup>,
    types: Vec<EventType>,
    group_index: HashMap<String, GroupId>,
    // bare type name -> all types carrying it
    name_index: HashMap<String, Vec<TypeId>>,
}

impl Taxonomy {
    /// The taxonomy shipped with the crate.
    pub fn standard() -> &'static Taxonomy {
        static STANDARD: OnceLock<Taxonomy> = OnceLock::new();
        STANDARD.get_or_init(|| {
            load_taxonomy(STANDARD_SOURCE).expect("bundled taxonomy must be valid")
        })
    }

    pub fn standard_source() -> &'static str {
        STANDARD_SOURCE
    }

    pub fn groups(&self) -> &[EventGroup] {
        &self.groups
    }

    pub fn types(&self) -> &[EventType] {
        &self.types
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn group(&self, id: GroupId) -> &EventGroup {
        &self.groups[id.0]
    }

    pub fn event_type(&self, id: TypeId) -> &EventType {
        &self.types[id.0]
    }

    pub fn group_by_name(&self, name: &str) -> Result<&EventGroup, TaxonomyError> {
        self.group_index
            .get(name.trim())
            .map(|id| &self.groups[id.0])
            .ok_or_else(|| TaxonomyError::UnknownGroup(name.to_string()))
    }

    /// `Group / Type`, unique across the taxonomy.
    pub fn qualified_name(&self, id: TypeId) -> String {
        let t = &self.types[id.0];
        format!("{} / {}", self.groups[t.group.0].name, t.name)
    }

    /// Exact (case-sensitive, trimmed) lookup by bare or qualified name.
    pub fn resolve_type(&self, name: &str) -> Result<&EventType, TaxonomyError> {
        let name = name.trim();
        if let Some((group, ty)) = name.split_once(" / ") {
            return self.resolve_in_group(group, ty);
        }
        match self.name_index.get(name).map(Vec::as_slice) {
            None | Some([]) => Err(TaxonomyError::UnknownType(name.to_string())),
            Some([only]) => Ok(&self.types[only.0]),
            Some(many) => Err(TaxonomyError::AmbiguousType {
                name: name.to_string(),
                groups: many
                    .iter()
                    .map(|id| self.groups[self.types[id.0].group.0].name.clone())
                    .collect(),
            }),
        }
    }

    /// Lookup of a type within a named group.
    pub fn resolve_in_group(&self, group: &str, name: &str) -> Result<&EventType, TaxonomyError> {
        let group = self.group_by_name(group)?;
        let name = name.trim();
        group
            .types
            .iter()
            .map(|id| &self.types[id.0])
            .find(|t| t.name == name)
            .ok_or_else(|| TaxonomyError::UnknownType(format!("{} / {}", group.name, name)))
    }

    /// Resolves an LLM-supplied (group, type) pair. The group is advisory:
    /// when it is missing or does not contain the type, an unambiguous bare
    /// type name still resolves.
    pub fn resolve_pair(&self, group: Option<&str>, name: &str) -> Result<&EventType, TaxonomyError> {
        if let Some(g) = group.filter(|g| !g.trim().is_empty()) {
            if let Ok(t) = self.resolve_in_group(g, name) {
                return Ok(t);
            }
        }
        self.resolve_type(name)
    }

    /// Multi-line listing used inside prompts.
    pub fn render_listing(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let names: Vec<&str> = g.types.iter().map(|t| self.types[t.0].name.as_str()).collect();
            out.push_str(&format!("- {}: {}\n", g.name, names.join("; ")));
        }
        out
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(f, "[{}]", g.name)?;
            for t in &g.types {
                writeln!(f, "{}", self.types[t.0].name)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Parses and validates a taxonomy document against the standard shape
/// (13 groups, 57 types).
pub fn load_taxonomy(source: &str) -> Result<Taxonomy, TaxonomyError> {
    let tax = parse_taxonomy(source)?;
    if tax.groups.len() != GROUP_COUNT {
        return Err(TaxonomyError::GroupCount { expected: GROUP_COUNT, found: tax.groups.len() });
    }
    if tax.types.len() != TYPE_COUNT {
        return Err(TaxonomyError::TypeCount { expected: TYPE_COUNT, found: tax.types.len() });
    }
    Ok(tax)
}

/// Parses a taxonomy document without enforcing the standard counts.
///
/// Format: `#` comments and blank lines are ignored, `[Group name]` opens a
/// group, every other line is an event type of the current group.
pub fn parse_taxonomy(source: &str) -> Result<Taxonomy, TaxonomyError> {
    let mut groups: Vec<EventGroup> = Vec::new();
    let mut types: Vec<EventType> = Vec::new();
    let mut group_index = HashMap::new();
    let mut name_index: HashMap<String, Vec<TypeId>> = HashMap::new();

    for (lineno, raw) in source.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            let name = line
                .strip_prefix('[')
                .and_then(|l| l.strip_suffix(']'))
                .map(str::trim)
                .filter(|n| !n.is_empty())
                .ok_or_else(|| TaxonomyError::MalformedHeader { line: lineno, text: line.to_string() })?;
            if group_index.contains_key(name) {
                return Err(TaxonomyError::DuplicateGroup(name.to_string()));
            }
            let id = GroupId(groups.len());
            group_index.insert(name.to_string(), id);
            groups.push(EventGroup { id, name: name.to_string(), types: Vec::new() });
            continue;
        }
        let Some(group) = groups.last_mut() else {
            return Err(TaxonomyError::OrphanType { line: lineno, name: line.to_string() });
        };
        if group.types.iter().any(|t| types[t.0].name == line) {
            return Err(TaxonomyError::DuplicateType { group: group.name.clone(), name: line.to_string() });
        }
        let id = TypeId(types.len());
        group.types.push(id);
        types.push(EventType { id, name: line.to_string(), group: group.id });
        name_index.entry(line.to_string()).or_default().push(id);
    }

    if let Some(empty) = groups.iter().find(|g| g.types.is_empty()) {
        return Err(TaxonomyError::EmptyGroup(empty.name.clone()));
    }
    Ok(Taxonomy { groups, types, group_index, name_index })
}
