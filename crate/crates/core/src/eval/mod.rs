//! Zero-shot evaluation over held-out tasks and report aggregation.

mod aggregate;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, geometric_mean, population_std, EvalReport, RunSummary, Spread, TaskCell, TaskSummary};
pub use report::{render_markdown, render_svg_bars, write_bar_data, write_plots, write_report};

use crate::classifier::{classify_batch, Aggregation, ClassificationRequest};
use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::StatementScorer;
use crate::schema::{enumerate_candidates, Example, FieldMap, LabelSpace, TaskCatalog, TaskSchema};
use crate::templates::{load_template_pack, Polarity, StatementTemplate, TemplateRegistry};

/// Which evaluation templates score each example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    /// Every selected template, aggregated per candidate.
    #[default]
    All,
    /// Only the first selected template.
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalTaskSpec {
    pub task_id: String,
    /// Corpus manifest of the test split, relative to the eval manifest.
    pub manifest: PathBuf,
    pub languages: Vec<String>,
    /// Template ids; all affirmative templates of the task when unset.
    #[serde(default)]
    pub templates: Option<Vec<String>>,
}

/// The set of held-out tasks to evaluate and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalManifest {
    pub tasks: Vec<EvalTaskSpec>,
    /// Languages present in the training mixture.
    #[serde(default)]
    pub seen_languages: Vec<String>,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub template_mode: TemplateMode,
    #[serde(default)]
    pub include_negated: bool,
    #[serde(default = "default_batch")]
    pub max_statement_batch: usize,
    /// Template pack; the built-in pack when unset.
    #[serde(default)]
    pub pack: Option<PathBuf>,
    /// Extra task schemas merged over the built-in catalog.
    #[serde(default)]
    pub tasks_catalog: Option<PathBuf>,
}

fn default_batch() -> usize {
    64
}

impl EvalManifest {
    /// Reads TOML, or JSON when the extension is `.json`. Relative paths are
    /// resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: EvalManifest = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for t in &mut m.tasks {
            t.manifest = base.join(&t.manifest);
        }
        m.pack = m.pack.map(|p| base.join(p));
        m.tasks_catalog = m.tasks_catalog.map(|p| base.join(p));
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig("eval manifest lists no tasks".into()));
        }
        for t in &self.tasks {
            if t.languages.is_empty() {
                return Err(Error::InvalidConfig(format!("task `{}` lists no languages", t.task_id)));
            }
        }
        if self.max_statement_batch == 0 {
            return Err(Error::InvalidConfig("max_statement_batch must be positive".into()));
        }
        Ok(())
    }
}

/// Evaluation options shared by every task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub aggregation: Aggregation,
    pub template_mode: TemplateMode,
    pub include_negated: bool,
    pub max_statement_batch: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            aggregation: Aggregation::Mean,
            template_mode: TemplateMode::All,
            include_negated: false,
            max_statement_batch: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageResult {
    pub correct: usize,
    pub total: usize,
}

impl LanguageResult {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Raw per-language counts of one task under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub per_language: BTreeMap<String, LanguageResult>,
    pub template_ids: Vec<String>,
    pub template_mode: TemplateMode,
    pub aggregation: Aggregation,
    pub random_baseline: f64,
}

/// Chance accuracy: the example-weighted mean of `1 / n_candidates`.
pub fn random_baseline(schema: &TaskSchema, examples: &[FieldMap]) -> f64 {
    let counts: Vec<usize> = examples
        .iter()
        .filter_map(|f| enumerate_candidates(schema, f).ok().map(|c| c.len()))
        .collect();
    if counts.is_empty() {
        let n = match &schema.label_space {
            LabelSpace::Fixed { labels } => labels.len(),
            LabelSpace::Columns { columns } => columns.len(),
            LabelSpace::Pair { .. } => 2,
            LabelSpace::Answers { .. } => return 0.0,
        };
        return 1.0 / n as f64;
    }
    counts.iter().map(|&n| 1.0 / n as f64).sum::<f64>() / counts.len() as f64
}

/// Selects evaluation templates for a task.
pub fn select_templates<'r>(
    registry: &'r TemplateRegistry,
    task_id: &str,
    ids: Option<&[String]>,
    include_negated: bool,
    mode: TemplateMode,
) -> Result<Vec<&'r StatementTemplate>> {
    let mut out: Vec<&StatementTemplate> = match ids {
        Some(ids) => ids
            .iter()
            .map(|id| {
                registry
                    .get(id)
                    .filter(|t| t.task_id == task_id)
                    .ok_or_else(|| Error::InvalidConfig(format!("template `{id}` not found for task `{task_id}`")))
            })
            .collect::<Result<_>>()?,
        None => registry
            .templates(task_id, "en")
            .iter()
            .filter(|t| include_negated || t.polarity == Polarity::Affirmative)
            .collect(),
    };
    if mode == TemplateMode::First {
        out.truncate(1);
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig(format!("no evaluation templates for task `{task_id}`")));
    }
    Ok(out)
}

/// Per-language accuracy of one task. Languages with no labelled examples
/// are skipped with a warning.
pub fn evaluate_task(
    schema: &TaskSchema,
    examples: &[Example],
    languages: &[String],
    templates: &[&StatementTemplate],
    scorer: &dyn StatementScorer,
    options: &EvalOptions,
    exec: Exec,
) -> Result<TaskResult> {
    let per_lang = exec.try_map(languages, |lang| -> Result<Option<(String, LanguageResult)>> {
        let rows: Vec<&Example> = examples
            .iter()
            .filter(|e| &e.language == lang && e.gold_for(schema).is_some())
            .collect();
        if rows.is_empty() {
            warn!("task `{}`: no labelled `{lang}` examples; skipped", schema.task_id);
            return Ok(None);
        }
        let requests: Vec<ClassificationRequest> = rows
            .iter()
            .map(|e| ClassificationRequest {
                fields: &e.fields,
                schema,
                templates: templates.to_vec(),
                aggregation: options.aggregation,
                include_negated: options.include_negated,
            })
            .collect();
        let results = classify_batch(&requests, scorer, options.max_statement_batch)?;
        let correct = rows
            .iter()
            .zip(&results)
            .filter(|(e, r)| e.gold_for(schema) == Some(r.predicted.as_str()))
            .count();
        Ok(Some((
            lang.clone(),
            LanguageResult {
                correct,
                total: rows.len(),
            },
        )))
    })?;
    let fields: Vec<FieldMap> = examples
        .iter()
        .filter(|e| languages.contains(&e.language))
        .map(|e| e.fields.clone())
        .collect();
    Ok(TaskResult {
        task_id: schema.task_id.clone(),
        per_language: per_lang.into_iter().flatten().collect(),
        template_ids: templates.iter().map(|t| t.template_id.clone()).collect(),
        template_mode: options.template_mode,
        aggregation: options.aggregation,
        random_baseline: random_baseline(schema, &fields),
    })
}

/// Evaluates every manifest task under one scorer.
pub fn evaluate_manifest(manifest: &EvalManifest, scorer: &dyn StatementScorer, exec: Exec) -> Result<Vec<TaskResult>> {
    manifest.validate()?;
    let mut catalog = TaskCatalog::builtin();
    if let Some(p) = &manifest.tasks_catalog {
        catalog.extend(TaskCatalog::load(p)?);
    }
    let registry = match &manifest.pack {
        Some(p) => load_template_pack(p, &catalog)?,
        None => TemplateRegistry::builtin(),
    };
    let options = EvalOptions {
        aggregation: manifest.aggregation,
        template_mode: manifest.template_mode,
        include_negated: manifest.include_negated,
        max_statement_batch: manifest.max_statement_batch,
    };
    let mut out = Vec::new();
    for spec in &manifest.tasks {
        let schema = catalog.get(&spec.task_id)?;
        let corpus = CorpusManifest::load(&spec.manifest)?;
        let examples = corpus.read(schema)?;
        let templates = select_templates(
            &registry,
            &spec.task_id,
            spec.templates.as_deref(),
            manifest.include_negated,
            manifest.template_mode,
        )?;
        out.push(evaluate_task(schema, &examples, &spec.languages, &templates, scorer, &options, exec)?);
    }
    Ok(out)
}
