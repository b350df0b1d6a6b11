//! Task schemas: which fields a task example carries and how its candidate
//! labels are enumerated.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field name to field value for a single task example.
pub type FieldMap = BTreeMap<String, String>;

const BUILTIN_TASKS: &str = include_str!("../../../packs/tasks.json");

/// How the candidate labels of an example are obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelSpace {
    /// A finite label list shared by every example, e.g. sentiment classes.
    Fixed { labels: Vec<String> },
    /// Candidates live in per-example columns (`choice1`, `choice2`, ...).
    Columns { columns: Vec<String> },
    /// The gold answer lives in `answer_field`; optional distractor columns
    /// follow it. With `pool`, the statement builder may also draw wrong
    /// candidates from other rows of the same corpus.
    Answers {
        answer_field: String,
        #[serde(default)]
        distractors: Vec<String>,
        #[serde(default)]
        pool: bool,
    },
    /// A sentence-pair task whose truth is carried by template polarity.
    Pair { positive: String, negative: String },
}

impl LabelSpace {
    pub fn is_pair(&self) -> bool {
        matches!(self, LabelSpace::Pair { .. })
    }

    /// Labels shared by every example, when the space has them.
    pub fn fixed_labels(&self) -> Option<Vec<&str>> {
        match self {
            LabelSpace::Fixed { labels } => Some(labels.iter().map(String::as_str).collect()),
            LabelSpace::Pair { positive, negative } => {
                Some(vec![positive.as_str(), negative.as_str()])
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSchema {
    pub task_id: String,
    #[serde(default)]
    pub category: String,
    pub field_names: Vec<String>,
    pub label_space: LabelSpace,
    #[serde(default)]
    pub languages: BTreeSet<String>,
}

impl TaskSchema {
    pub fn has_field(&self, name: &str) -> bool {
        self.field_names.iter().any(|f| f == name)
    }

    pub fn is_translation(&self) -> bool {
        self.category == "machine_translation"
    }
}

/// A task example (or corpus row) together with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub language: String,
    pub fields: FieldMap,
    /// Gold label value, when known.
    #[serde(default)]
    pub gold: Option<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, language: impl Into<String>, fields: FieldMap) -> Self {
        Example {
            id: id.into(),
            language: language.into(),
            fields,
            gold: None,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold = Some(gold.into());
        self
    }

    /// Gold value for this example under `schema`; answer-style tasks keep
    /// it in a field.
    pub fn gold_for(&self, schema: &TaskSchema) -> Option<&str> {
        match &schema.label_space {
            LabelSpace::Answers { answer_field, .. } => self
                .gold
                .as_deref()
                .or_else(|| self.fields.get(answer_field).map(String::as_str)),
            _ => self.gold.as_deref(),
        }
    }
}

/// Ordered candidate list for an example.
///
/// Fixed and pair spaces use declaration order, per-example spaces use
/// column order with the gold answer first. Duplicate values keep their
/// first position; missing or empty columns are skipped.
pub fn enumerate_candidates(schema: &TaskSchema, fields: &FieldMap) -> Result<Vec<String>> {
    let raw: Vec<&str> = match &schema.label_space {
        LabelSpace::Fixed { labels } => labels.iter().map(String::as_str).collect(),
        LabelSpace::Pair { positive, negative } => vec![positive.as_str(), negative.as_str()],
        LabelSpace::Columns { columns } => columns
            .iter()
            .filter_map(|c| fields.get(c).map(String::as_str))
            .collect(),
        LabelSpace::Answers {
            answer_field,
            distractors,
            ..
        } => std::iter::once(answer_field)
            .chain(distractors.iter())
            .filter_map(|c| fields.get(c).map(String::as_str))
            .collect(),
    };
    let mut out: Vec<String> = Vec::with_capacity(raw.len());
    for c in raw {
        if c.is_empty() || out.iter().any(|o| o == c) {
            continue;
        }
        out.push(c.to_string());
    }
    if out.is_empty() {
        return Err(Error::DegenerateTask(schema.task_id.clone()));
    }
    Ok(out)
}

/// Task schemas keyed by task id.
#[derive(Debug, Clone, Default)]
pub struct TaskCatalog {
    tasks: BTreeMap<String, TaskSchema>,
}

impl TaskCatalog {
    /// The schemas for every task in the default template pack.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TASKS).expect("builtin task catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let list: Vec<TaskSchema> = serde_json::from_str(text)?;
        let mut catalog = TaskCatalog::default();
        for schema in list {
            catalog.insert(schema)?;
        }
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, schema: TaskSchema) -> Result<()> {
        if self.tasks.contains_key(&schema.task_id) {
            return Err(Error::InvalidInput(format!(
                "duplicate task schema `{}`",
                schema.task_id
            )));
        }
        self.tasks.insert(schema.task_id.clone(), schema);
        Ok(())
    }

    /// Adds every schema of `other`, replacing same-named entries.
    pub fn extend(&mut self, other: TaskCatalog) {
        self.tasks.extend(other.tasks);
    }

    pub fn get(&self, task_id: &str) -> Result<&TaskSchema> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }

    pub fn contains(&self, task_id: &str) -> bool {
        self.tasks.contains_key(task_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskSchema> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}
