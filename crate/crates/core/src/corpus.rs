//! Column-mapped corpus ingestion.
//!
//! Each dataset is described by a small JSON manifest naming the data file,
//! its format (CSV, TSV or JSON lines) and which column feeds which schema
//! field. Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{enumerate_candidates, Example, FieldMap, LabelSpace, TaskSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Tsv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// The column holds the gold value itself.
    #[default]
    Value,
    /// The column holds an index into the example's candidate list.
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelBinding {
    pub column: String,
    #[serde(default)]
    pub mode: LabelMode,
    #[serde(default)]
    pub index_base: i64,
    /// Raw value to label rewrites, applied before `mode`.
    #[serde(default)]
    pub map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub dataset_id: String,
    pub task_id: String,
    pub path: PathBuf,
    pub format: CorpusFormat,
    /// Language of every row, when the file is monolingual.
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub language_column: Option<String>,
    #[serde(default)]
    pub id_column: Option<String>,
    /// Schema field name to source column name.
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub label: Option<LabelBinding>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: CorpusManifest = serde_json::from_str(&text)?;
        if m.path.is_relative() {
            if let Some(dir) = path.parent() {
                m.path = dir.join(&m.path);
            }
        }
        Ok(m)
    }

    fn load_error(&self, message: impl Into<String>) -> Error {
        Error::CorpusLoad {
            dataset_id: self.dataset_id.clone(),
            path: self.path.clone(),
            message: message.into(),
        }
    }

    /// Reads every row of the corpus as schema-shaped examples.
    pub fn read(&self, schema: &TaskSchema) -> Result<Vec<Example>> {
        if self.language.is_none() && self.language_column.is_none() {
            return Err(self.load_error("manifest needs `language` or `language_column`"));
        }
        let raw = match self.format {
            CorpusFormat::Csv => self.read_delimited(b','),
            CorpusFormat::Tsv => self.read_delimited(b'\t'),
            CorpusFormat::Jsonl => self.read_jsonl(),
        }?;
        raw.into_iter()
            .enumerate()
            .map(|(i, row)| self.to_example(schema, i, row))
            .collect()
    }

    fn read_delimited(&self, delimiter: u8) -> Result<Vec<BTreeMap<String, String>>> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .from_path(&self.path)
            .map_err(|e| self.load_error(e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| self.load_error(e.to_string()))?
            .clone();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| self.load_error(e.to_string()))?;
            rows.push(
                headers
                    .iter()
                    .zip(rec.iter())
                    .map(|(h, v)| (h.to_string(), v.to_string()))
                    .collect(),
            );
        }
        Ok(rows)
    }

    fn read_jsonl(&self) -> Result<Vec<BTreeMap<String, String>>> {
        let file = File::open(&self.path).map_err(|e| self.load_error(e.to_string()))?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| self.load_error(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
                .map_err(|e| self.load_error(format!("line {}: {e}", i + 1)))?;
            rows.push(
                obj.into_iter()
                    .map(|(k, v)| {
                        let s = match v {
                            serde_json::Value::String(s) => s,
                            serde_json::Value::Null => String::new(),
                            other => other.to_string(),
                        };
                        (k, s)
                    })
                    .collect(),
            );
        }
        Ok(rows)
    }

    fn to_example(
        &self,
        schema: &TaskSchema,
        index: usize,
        row: BTreeMap<String, String>,
    ) -> Result<Example> {
        let get = |col: &str| -> Result<String> {
            row.get(col)
                .cloned()
                .ok_or_else(|| self.load_error(format!("row {}: missing column `{col}`", index + 1)))
        };
        let language = match (&self.language_column, &self.language) {
            (Some(col), _) => get(col)?,
            (None, Some(l)) => l.clone(),
            (None, None) => unreachable!("checked in read"),
        };
        let id = match &self.id_column {
            Some(col) => get(col)?,
            None => format!("{}:{}", self.dataset_id, index),
        };
        let mut fields = FieldMap::new();
        for (field, col) in &self.columns {
            // Optional candidate columns (e.g. a fifth answer) may be absent.
            if let Some(v) = row.get(col) {
                fields.insert(field.clone(), v.clone());
            }
        }
        let mut example = Example::new(id, language, fields);
        if let Some(binding) = &self.label {
            let raw = get(&binding.column)?;
            let value = binding.map.get(&raw).cloned().unwrap_or(raw);
            let gold = match binding.mode {
                LabelMode::Value => value,
                LabelMode::Index => {
                    let idx: i64 = value.trim().parse().map_err(|_| {
                        self.load_error(format!("row {}: label `{value}` is not an index", index + 1))
                    })?;
                    let cands = candidate_list(schema, &example.fields)?;
                    usize::try_from(idx - binding.index_base)
                        .ok()
                        .and_then(|i| cands.get(i).cloned())
                        .ok_or_else(|| {
                            self.load_error(format!("row {}: label index {idx} out of range", index + 1))
                        })?
                }
            };
            example.gold = Some(gold);
        } else if let LabelSpace::Answers { answer_field, .. } = &schema.label_space {
            example.gold = example.fields.get(answer_field).cloned();
        }
        Ok(example)
    }
}

// Index labels address the raw column order, before dedup.
fn candidate_list(schema: &TaskSchema, fields: &FieldMap) -> Result<Vec<String>> {
    match &schema.label_space {
        LabelSpace::Columns { columns } => Ok(columns
            .iter()
            .filter_map(|c| fields.get(c).cloned())
            .collect()),
        _ => enumerate_candidates(schema, fields),
    }
}
