use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{TaskResult, TemplateMode};
use crate::classifier::Aggregation;
use crate::error::{Error, Result};

/// `exp(mean(ln x))`. Any non-positive input gives 0 and sets the flag.
pub fn geometric_mean(values: &[f64]) -> (f64, bool) {
    if values.is_empty() {
        return (0.0, false);
    }
    if values.iter().any(|&v| v <= 0.0) {
        return (0.0, true);
    }
    let mean_ln = values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64;
    (mean_ln.exp(), false)
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCell {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub per_language: BTreeMap<String, TaskCell>,
    /// Mean of the per-language accuracies.
    pub macro_mean: f64,
    /// Pooled accuracy over every example.
    pub micro_mean: f64,
    pub seen_mean: Option<f64>,
    pub unseen_mean: Option<f64>,
    pub random_baseline: f64,
    pub template_ids: Vec<String>,
    pub template_mode: TemplateMode,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub tasks: Vec<TaskSummary>,
    /// Across the task macro means.
    pub geometric_mean: f64,
    /// Some task scored zero, forcing the geometric mean to zero.
    pub geometric_mean_zero: bool,
}

/// One value per run with its mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: Vec<f64>) -> Self {
        Spread {
            mean: mean(&values),
            std: population_std(&values),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: Vec<RunSummary>,
    pub seen_languages: Vec<String>,
    /// Task macro mean across runs.
    pub task_spread: BTreeMap<String, Spread>,
    /// Per (task, language) accuracy across runs.
    pub cell_spread: BTreeMap<String, BTreeMap<String, Spread>>,
    pub geometric_mean_spread: Spread,
}

impl EvalReport {
    pub fn task_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.runs {
            for t in &r.tasks {
                if seen.insert(t.task_id.clone()) {
                    out.push(t.task_id.clone());
                }
            }
        }
        out
    }
}

fn summarize(result: &TaskResult, seen: &BTreeSet<&str>) -> Result<TaskSummary> {
    if result.per_language.is_empty() {
        return Err(Error::InvalidInput(format!("task `{}` has no evaluated language", result.task_id)));
    }
    let mut per_language = BTreeMap::new();
    for (lang, r) in &result.per_language {
        if r.total == 0 {
            return Err(Error::InvalidInput(format!("task `{}`/{lang} has no examples", result.task_id)));
        }
        per_language.insert(
            lang.clone(),
            TaskCell {
                accuracy: r.accuracy(),
                correct: r.correct,
                total: r.total,
            },
        );
    }
    let accs: Vec<f64> = per_language.values().map(|c| c.accuracy).collect();
    let (correct, total) = per_language
        .values()
        .fold((0, 0), |(c, t), x| (c + x.correct, t + x.total));
    let part = |want_seen: bool| -> Option<f64> {
        let v: Vec<f64> = per_language
            .iter()
            .filter(|(l, _)| seen.contains(l.as_str()) == want_seen)
            .map(|(_, c)| c.accuracy)
            .collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    Ok(TaskSummary {
        task_id: result.task_id.clone(),
        macro_mean: mean(&accs),
        micro_mean: correct as f64 / total as f64,
        seen_mean: part(true),
        unseen_mean: part(false),
        per_language,
        random_baseline: result.random_baseline,
        template_ids: result.template_ids.clone(),
        template_mode: result.template_mode,
        aggregation: result.aggregation,
    })
}

/// Folds task results of one or more runs (models or seeds) into a report.
pub fn aggregate(runs: &[(String, Vec<TaskResult>)], seen_languages: &[String]) -> Result<EvalReport> {
    if runs.is_empty() || runs.iter().any(|(_, t)| t.is_empty()) {
        return Err(Error::InvalidInput("aggregation needs at least one task report per run".into()));
    }
    let seen: BTreeSet<&str> = seen_languages.iter().map(String::as_str).collect();
    let mut summaries = Vec::new();
    for (name, tasks) in runs {
        let tasks = tasks.iter().map(|t| summarize(t, &seen)).collect::<Result<Vec<_>>>()?;
        let means: Vec<f64> = tasks.iter().map(|t| t.macro_mean).collect();
        let (geometric_mean, geometric_mean_zero) = geometric_mean(&means);
        summaries.push(RunSummary {
            name: name.clone(),
            tasks,
            geometric_mean,
            geometric_mean_zero,
        });
    }
    let mut task_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cell_values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for run in &summaries {
        for t in &run.tasks {
            task_values.entry(t.task_id.clone()).or_default().push(t.macro_mean);
            for (lang, c) in &t.per_language {
                cell_values
                    .entry(t.task_id.clone())
                    .or_default()
                    .entry(lang.clone())
                    .or_default()
                    .push(c.accuracy);
            }
        }
    }
    Ok(EvalReport {
        geometric_mean_spread: Spread::of(summaries.iter().map(|r| r.geometric_mean).collect()),
        runs: summaries,
        seen_languages: seen.iter().map(|s| s.to_string()).collect(),
        task_spread: task_values.into_iter().map(|(k, v)| (k, Spread::of(v))).collect(),
        cell_spread: cell_values
            .into_iter()
            .map(|(k, m)| (k, m.into_iter().map(|(l, v)| (l, Spread::of(v))).collect()))
            .collect(),
    })
}
