//! Zero-shot classification by scoring one statement per candidate label.

use log::warn;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::StatementScorer;
use crate::schema::{enumerate_candidates, FieldMap, LabelSpace, TaskSchema};
use crate::templates::{render_text, validate_template, Polarity, StatementTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::InvalidConfig(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationRequest<'a> {
    pub fields: &'a FieldMap,
    pub schema: &'a TaskSchema,
    pub templates: Vec<&'a StatementTemplate>,
    pub aggregation: Aggregation,
    /// Score negated templates too, crediting the candidate with `1 - p`.
    pub include_negated: bool,
}

impl<'a> ClassificationRequest<'a> {
    pub fn new(fields: &'a FieldMap, schema: &'a TaskSchema, templates: Vec<&'a StatementTemplate>) -> Self {
        ClassificationRequest {
            fields,
            schema,
            templates,
            aggregation: Aggregation::Mean,
            include_negated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementScore {
    pub template_id: String,
    pub candidate: String,
    /// Probability credited to the candidate.
    pub probability: f64,
}

/// Aggregated score per candidate, in enumeration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateScores(pub Vec<(String, f64)>);

impl CandidateScores {
    pub fn get(&self, candidate: &str) -> Option<f64> {
        self.0.iter().find(|(c, _)| c == candidate).map(|(_, s)| *s)
    }
}

impl Serialize for CandidateScores {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationResult {
    pub predicted: String,
    pub per_candidate_scores: CandidateScores,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_statement: Vec<StatementScore>,
    pub n_candidates: usize,
    /// Another candidate reached the same top score.
    pub tie_broken: bool,
    /// Templates dropped because they failed to render.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dropped_templates: Vec<String>,
}

/// Statements to score for one request and how to fold their scores back.
#[derive(Debug, Clone)]
pub struct Plan {
    pub statements: Vec<String>,
    candidates: Vec<String>,
    // (template id, statement index, per-candidate crediting)
    rows: Vec<(String, usize, Credit)>,
    dropped: Vec<String>,
    aggregation: Aggregation,
}

#[derive(Debug, Clone, Copy)]
enum Credit {
    /// Statement about candidate `i`; `flip` when the template is negated.
    Candidate { index: usize, flip: bool },
    /// Pair statement: `p` goes to the positive class unless `flip`.
    Pair { positive: usize, negative: usize, flip: bool },
}

impl Plan {
    pub fn fan_out(&self) -> usize {
        self.statements.len()
    }
}

/// Renders every (template, candidate) statement for a request.
pub fn plan(request: &ClassificationRequest<'_>) -> Result<Plan> {
    if request.templates.is_empty() {
        return Err(Error::Classification("no evaluation templates".into()));
    }
    for t in &request.templates {
        let v = validate_template(t, request.schema);
        if !v.is_empty() {
            let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            return Err(Error::Classification(format!(
                "template {} does not fit task `{}`: {}",
                t.template_id,
                request.schema.task_id,
                list.join("; ")
            )));
        }
    }
    let candidates = enumerate_candidates(request.schema, request.fields)?;
    let mut statements = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();

    for t in &request.templates {
        let flip = t.polarity == Polarity::Negated;
        if flip && !request.include_negated {
            continue;
        }
        let rendered: Result<Vec<(String, Credit)>> = match (&t.candidate_slot, &request.schema.label_space) {
            // Asserts one fixed label; its score goes to that label only.
            (None, _) if t.asserted_label.is_some() => {
                let label = t.asserted_label.as_deref().unwrap_or_default();
                match candidates.iter().position(|c| c == label) {
                    Some(index) => render_text(t, request.fields, None, None)
                        .map(|s| vec![(s, Credit::Candidate { index, flip })]),
                    None => continue,
                }
            }
            (None, LabelSpace::Pair { positive, negative }) => {
                let pos = candidates.iter().position(|c| c == positive);
                let neg = candidates.iter().position(|c| c == negative);
                match (pos, neg) {
                    (Some(positive), Some(negative)) => render_text(t, request.fields, None, None)
                        .map(|s| vec![(s, Credit::Pair { positive, negative, flip })]),
                    _ => Err(Error::Classification("pair classes missing".into())),
                }
            }
            (None, _) => continue,
            (Some(_), _) => candidates
                .iter()
                .enumerate()
                .map(|(index, c)| {
                    let contrast = candidates.iter().find(|o| *o != c).map(String::as_str);
                    render_text(t, request.fields, Some(c), contrast)
                        .map(|s| (s, Credit::Candidate { index, flip }))
                })
                .collect(),
        };
        match rendered {
            Ok(items) => {
                for (s, credit) in items {
                    rows.push((t.template_id.clone(), statements.len(), credit));
                    statements.push(s);
                }
            }
            Err(e) => {
                warn!("template {} dropped: {e}", t.template_id);
                dropped.push(t.template_id.clone());
            }
        }
    }
    if statements.is_empty() {
        return Err(Error::Classification(format!(
            "no template could be rendered for task `{}`",
            request.schema.task_id
        )));
    }
    Ok(Plan {
        statements,
        candidates,
        rows,
        dropped,
        aggregation: request.aggregation,
    })
}

/// Folds statement probabilities (aligned with `plan.statements`) into a
/// prediction.
pub fn finish(plan: Plan, probabilities: &[f64]) -> Result<ClassificationResult> {
    if probabilities.len() != plan.statements.len() {
        return Err(Error::Classification(format!(
            "{} scores for {} statements",
            probabilities.len(),
            plan.statements.len()
        )));
    }
    let n = plan.candidates.len();
    let mut per_statement = Vec::new();
    let mut per_cand: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (template_id, idx, credit) in &plan.rows {
        let p = probabilities[*idx];
        let mut credit_to = |i: usize, v: f64| {
            per_cand[i].push(v);
            per_statement.push(StatementScore {
                template_id: template_id.clone(),
                candidate: plan.candidates[i].clone(),
                probability: v,
            });
        };
        match *credit {
            Credit::Candidate { index, flip } => credit_to(index, if flip { 1.0 - p } else { p }),
            Credit::Pair { positive, negative, flip } => {
                let to_pos = if flip { 1.0 - p } else { p };
                credit_to(positive, to_pos);
                credit_to(negative, 1.0 - to_pos);
            }
        }
    }
    let mut scores = Vec::with_capacity(n);
    for (c, ps) in plan.candidates.iter().zip(&per_cand) {
        if ps.is_empty() {
            return Err(Error::Classification(format!("candidate `{c}` has no scored template")));
        }
        let agg = match plan.aggregation {
            Aggregation::Mean => ps.iter().sum::<f64>() / ps.len() as f64,
            Aggregation::Max => ps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        scores.push((c.clone(), agg));
    }
    let mut best = 0;
    for i in 1..n {
        if scores[i].1 > scores[best].1 {
            best = i;
        }
    }
    let tie_broken = scores.iter().enumerate().any(|(i, s)| i != best && s.1 == scores[best].1);
    Ok(ClassificationResult {
        predicted: scores[best].0.clone(),
        per_candidate_scores: CandidateScores(scores),
        per_statement,
        n_candidates: n,
        tie_broken,
        dropped_templates: plan.dropped,
    })
}

pub fn classify(request: &ClassificationRequest<'_>, scorer: &dyn StatementScorer) -> Result<ClassificationResult> {
    let plan = plan(request)?;
    let probs = scorer.score(&plan.statements)?;
    finish(plan, &probs)
}

/// Classifies many requests, packing whole requests into forward batches of
/// at most `max_statement_batch` statements.
pub fn classify_batch(
    requests: &[ClassificationRequest<'_>],
    scorer: &dyn StatementScorer,
    max_statement_batch: usize,
) -> Result<Vec<ClassificationResult>> {
    let plans = requests.iter().map(plan).collect::<Result<Vec<_>>>()?;
    for (i, p) in plans.iter().enumerate() {
        if p.fan_out() > max_statement_batch {
            return Err(Error::InvalidConfig(format!(
                "request {i} needs {} statements, above max_statement_batch {max_statement_batch}",
                p.fan_out()
            )));
        }
    }
    let mut results = Vec::with_capacity(plans.len());
    let mut pending: Vec<Plan> = Vec::new();
    let mut texts: Vec<String> = Vec::new();
    let flush = |pending: &mut Vec<Plan>, texts: &mut Vec<String>, results: &mut Vec<ClassificationResult>| -> Result<()> {
        if texts.is_empty() {
            return Ok(());
        }
        let probs = scorer.score(texts)?;
        let mut at = 0;
        for p in pending.drain(..) {
            let k = p.fan_out();
            results.push(finish(p, &probs[at..at + k])?);
            at += k;
        }
        texts.clear();
        Ok(())
    };
    for p in plans {
        if texts.len() + p.fan_out() > max_statement_batch {
            flush(&mut pending, &mut texts, &mut results)?;
        }
        texts.extend(p.statements.iter().cloned());
        pending.push(p);
    }
    flush(&mut pending, &mut texts, &mut results)?;
    Ok(results)
}
