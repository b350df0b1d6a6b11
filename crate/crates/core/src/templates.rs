//! Statement templates: loading packs, validating them against task schemas
//! and rendering them into statements.
//!
//! Placeholders are written `{{name}}`. There are no conditionals or loops;
//! rendering is literal substitution with no escaping, trimming or case
//! changes, so train and eval see exactly the same strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Example, FieldMap, LabelSpace, TaskCatalog, TaskSchema};

const BUILTIN_PACK: &str = include_str!("../../../packs/templates_en.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Affirmative,
    Negated,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Affirmative => "affirmative",
            Polarity::Negated => "negated",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatementTemplate {
    pub template_id: String,
    pub task_id: String,
    pub language_tag: String,
    pub polarity: Polarity,
    /// Placeholder receiving the candidate; `None` for templates whose
    /// truth comes from polarity alone (pair tasks) or from `asserted_label`.
    pub candidate_slot: Option<String>,
    pub pattern: String,
    /// Placeholder that receives a candidate different from the one in
    /// `candidate_slot` ("A is more sensible than B").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast_slot: Option<String>,
    /// Label a slot-free template asserts verbatim in its wording.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asserted_label: Option<String>,
    /// Set when the source listing printed these rows under a heading that
    /// does not match their fields.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub suspect_heading: bool,
}

impl StatementTemplate {
    /// Label this template stands for when it has no candidate slot.
    pub fn fixed_candidate<'a>(&'a self, schema: &'a TaskSchema) -> Option<&'a str> {
        if self.candidate_slot.is_some() {
            return None;
        }
        if let Some(label) = &self.asserted_label {
            return Some(label);
        }
        match &schema.label_space {
            LabelSpace::Pair { positive, .. } => Some(positive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

pub(crate) fn parse_pattern(pattern: &str) -> std::result::Result<Vec<Segment<'_>>, String> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find("{{") {
        if open > 0 {
            out.push(Segment::Text(&rest[..open]));
        }
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| format!("unclosed placeholder at byte {}", pattern.len() - rest.len() + open))?;
        let name = &after[..close];
        if name.is_empty() || name.contains("{{") {
            return Err(format!("bad placeholder name {name:?}"));
        }
        out.push(Segment::Slot(name));
        rest = &after[close + 2..];
    }
    if rest.contains("}}") {
        return Err("stray `}}`".to_string());
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest));
    }
    Ok(out)
}

/// Placeholder names in order of appearance, repeats included.
pub fn placeholders(pattern: &str) -> std::result::Result<Vec<&str>, String> {
    Ok(parse_pattern(pattern)?
        .into_iter()
        .filter_map(|s| match s {
            Segment::Slot(n) => Some(n),
            Segment::Text(_) => None,
        })
        .collect())
}

/// A reason a template does not fit its task schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TaskMismatch { template_task: String, schema_task: String },
    Unparsable(String),
    UnknownPlaceholder(String),
    CandidateSlotMultiplicity { slot: String, count: usize },
    MissingCandidateSlot,
    ContrastSlotMissing(String),
    UnknownAssertedLabel(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TaskMismatch {
                template_task,
                schema_task,
            } => write!(f, "template task {template_task:?} checked against schema {schema_task:?}"),
            Violation::Unparsable(m) => write!(f, "unparsable pattern: {m}"),
            Violation::UnknownPlaceholder(n) => write!(f, "unknown placeholder {n:?}"),
            Violation::CandidateSlotMultiplicity { slot, count } => {
                write!(f, "candidate slot multiplicity: {slot:?} appears {count} times")
            }
            Violation::MissingCandidateSlot => f.write_str(
                "no candidate slot, but the task is not a pair task and no asserted label is set",
            ),
            Violation::ContrastSlotMissing(n) => write!(f, "contrast slot {n:?} not in pattern"),
            Violation::UnknownAssertedLabel(l) => write!(f, "asserted label {l:?} not in label space"),
        }
    }
}

/// Checks `template` against `schema`; an empty list means it is usable.
pub fn validate_template(template: &StatementTemplate, schema: &TaskSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    if template.task_id != schema.task_id {
        out.push(Violation::TaskMismatch {
            template_task: template.task_id.clone(),
            schema_task: schema.task_id.clone(),
        });
    }
    let names = match placeholders(&template.pattern) {
        Ok(n) => n,
        Err(m) => {
            out.push(Violation::Unparsable(m));
            return out;
        }
    };
    let slot = template.candidate_slot.as_deref();
    let mut reported = BTreeSet::new();
    for name in &names {
        if Some(*name) == slot || schema.has_field(name) {
            continue;
        }
        if reported.insert(*name) {
            out.push(Violation::UnknownPlaceholder(name.to_string()));
        }
    }
    match slot {
        Some(s) => {
            let count = names.iter().filter(|n| **n == s).count();
            if count != 1 {
                out.push(Violation::CandidateSlotMultiplicity {
                    slot: s.to_string(),
                    count,
                });
            }
        }
        None => {
            if template.asserted_label.is_none() && !schema.label_space.is_pair() {
                out.push(Violation::MissingCandidateSlot);
            }
        }
    }
    if let Some(c) = &template.contrast_slot {
        if !names.contains(&c.as_str()) {
            out.push(Violation::ContrastSlotMissing(c.clone()));
        }
    }
    if let Some(label) = &template.asserted_label {
        let known = schema
            .label_space
            .fixed_labels()
            .is_some_and(|ls| ls.contains(&label.as_str()));
        if !known {
            out.push(Violation::UnknownAssertedLabel(label.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedStatement {
    pub text: String,
    pub template_id: String,
    pub candidate: Option<String>,
    pub language: String,
}

/// Renders `template` for one example and candidate.
pub fn render(
    template: &StatementTemplate,
    example: &Example,
    candidate: Option<&str>,
) -> Result<RenderedStatement> {
    render_with_contrast(template, example, candidate, None)
}

/// [`render`], with an explicit value for the template's contrast slot.
/// Without one the contrast slot is read from the example fields.
pub fn render_with_contrast(
    template: &StatementTemplate,
    example: &Example,
    candidate: Option<&str>,
    contrast: Option<&str>,
) -> Result<RenderedStatement> {
    let text = render_text(template, &example.fields, candidate, contrast)?;
    Ok(RenderedStatement {
        text,
        template_id: template.template_id.clone(),
        candidate: candidate.map(str::to_string),
        language: example.language.clone(),
    })
}

pub(crate) fn render_text(
    template: &StatementTemplate,
    fields: &FieldMap,
    candidate: Option<&str>,
    contrast: Option<&str>,
) -> Result<String> {
    let invalid = |message: String| Error::InvalidTemplate {
        template_id: template.template_id.clone(),
        message,
    };
    match (&template.candidate_slot, candidate) {
        (Some(s), None) => return Err(invalid(format!("candidate required for slot {s:?}"))),
        (None, Some(_)) => return Err(invalid("template takes no candidate".to_string())),
        _ => {}
    }
    let segments = parse_pattern(&template.pattern).map_err(invalid)?;
    let mut out = String::with_capacity(template.pattern.len() + 64);
    for seg in segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => {
                let value = if template.candidate_slot.as_deref() == Some(name) {
                    candidate
                } else if template.contrast_slot.as_deref() == Some(name) && contrast.is_some() {
                    contrast
                } else {
                    fields.get(name).map(String::as_str)
                };
                let value = value.ok_or_else(|| Error::Render {
                    template_id: template.template_id.clone(),
                    field: name.to_string(),
                })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// Templates keyed by `(task_id, language_tag)`; immutable once built.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    by_key: BTreeMap<(String, String), Vec<StatementTemplate>>,
    ids: BTreeSet<String>,
}

impl TemplateRegistry {
    /// The default English pack.
    pub fn builtin() -> Self {
        parse_pack(BUILTIN_PACK, Path::new("<builtin>"), &TaskCatalog::builtin())
            .expect("builtin pack is valid")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn templates(&self, task_id: &str, language_tag: &str) -> &[StatementTemplate] {
        self.by_key
            .get(&(task_id.to_string(), language_tag.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn languages_for(&self, task_id: &str) -> Vec<&str> {
        self.by_key
            .keys()
            .filter(|(t, _)| t == task_id)
            .map(|(_, l)| l.as_str())
            .collect()
    }

    pub fn get(&self, template_id: &str) -> Option<&StatementTemplate> {
        self.iter().find(|t| t.template_id == template_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StatementTemplate> {
        self.by_key.values().flatten()
    }

    pub fn task_ids(&self) -> BTreeSet<&str> {
        self.by_key.keys().map(|(t, _)| t.as_str()).collect()
    }

    fn insert(&mut self, template: StatementTemplate) -> std::result::Result<(), String> {
        if !self.ids.insert(template.template_id.clone()) {
            return Err(format!("duplicate template_id {:?}", template.template_id));
        }
        self.by_key
            .entry((template.task_id.clone(), template.language_tag.clone()))
            .or_default()
            .push(template);
        Ok(())
    }

    /// Adds the templates of `other`; template ids must stay unique.
    pub fn merge(&mut self, other: TemplateRegistry) -> Result<()> {
        for t in other.by_key.into_values().flatten() {
            self.insert(t).map_err(Error::InvalidInput)?;
        }
        Ok(())
    }
}

/// Loads a JSON template pack. An empty file yields an empty registry.
pub fn load_template_pack(path: &Path, catalog: &TaskCatalog) -> Result<TemplateRegistry> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pack(&text, path, catalog)
}

pub fn parse_pack(text: &str, path: &Path, catalog: &TaskCatalog) -> Result<TemplateRegistry> {
    let mut registry = TemplateRegistry::default();
    if text.trim().is_empty() {
        return Ok(registry);
    }
    let list: Vec<StatementTemplate> =
        serde_json::from_str(text).map_err(|e| Error::MalformedPack {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &list {
        let n = seen.entry(t.template_id.as_str()).or_insert(0);
        *n += 1;
        if *n > 1 {
            return Err(Error::MalformedPack {
                path: path.to_path_buf(),
                line: nth_id_line(text, &t.template_id, *n),
                message: format!("duplicate template_id {:?}", t.template_id),
            });
        }
    }
    for t in list {
        if !catalog.contains(&t.task_id) {
            return Err(Error::UnknownTask(t.task_id));
        }
        registry.insert(t).expect("ids checked above");
    }
    Ok(registry)
}

// 1-based line holding the `n`-th `"template_id": "<id>"` entry.
fn nth_id_line(text: &str, id: &str, n: usize) -> usize {
    let needle = serde_json::to_string(id).unwrap_or_default();
    let mut count = 0;
    for (i, line) in text.lines().enumerate() {
        if line.contains("\"template_id\"") && line.contains(&needle) {
            count += 1;
            if count == n {
                return i + 1;
            }
        }
    }
    0
}
