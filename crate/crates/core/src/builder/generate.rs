use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{DatasetHeader, Split, StatementDataset, StatementRecord};
use super::spec::{MixtureEntry, MixtureSpec, TemplateLanguageMode};
use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::schema::{enumerate_candidates, Example, LabelSpace, TaskCatalog, TaskSchema};
use crate::templates::{
    load_template_pack, render_text, validate_template, Polarity, StatementTemplate,
    TemplateRegistry,
};

/// Deterministic sub-seed for a named stream.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Draws up to `cap` rows of `language` uniformly without replacement,
/// returned in corpus order. Smaller corpora pass through whole.
pub fn sample_rows(corpus: &[Example], language: &str, cap: i64, seed: u64) -> Result<Vec<Example>> {
    if cap < 0 {
        return Err(Error::InvalidSpec(format!("row cap must be non-negative, got {cap}")));
    }
    let pool: Vec<&Example> = corpus.iter().filter(|r| r.language == language).collect();
    let cap = cap as usize;
    if pool.len() <= cap {
        return Ok(pool.into_iter().cloned().collect());
    }
    let mut rng = rng_for(seed, &["sample_rows", language]);
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), cap).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pool[i].clone()).collect())
}

/// Truth bit of a statement.
///
/// With a candidate, an affirmative statement is true iff the candidate is
/// the gold label and a negated one iff it is not. Without a candidate
/// (pair templates), the affirmative statement is true iff the gold class is
/// the pair's positive class.
pub fn truth_label(
    polarity: Polarity,
    candidate: Option<&str>,
    gold: &str,
    space: &LabelSpace,
) -> bool {
    let asserted = match candidate {
        Some(c) => c == gold,
        None => match space {
            LabelSpace::Pair { positive, .. } => gold == positive,
            _ => false,
        },
    };
    match polarity {
        Polarity::Affirmative => asserted,
        Polarity::Negated => !asserted,
    }
}

/// Where the statement builder gets its corpus rows.
pub trait CorpusSource: Sync {
    fn load(&self, entry: &MixtureEntry, schema: &TaskSchema) -> Result<Vec<Example>>;
}

/// Rows read through per-dataset manifests, resolved against `base_dir`.
#[derive(Debug, Clone)]
pub struct ManifestCorpora {
    pub base_dir: PathBuf,
}

impl ManifestCorpora {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        ManifestCorpora {
            base_dir: base_dir.into(),
        }
    }
}

impl CorpusSource for ManifestCorpora {
    fn load(&self, entry: &MixtureEntry, schema: &TaskSchema) -> Result<Vec<Example>> {
        let rel = entry.manifest.as_ref().ok_or_else(|| Error::CorpusLoad {
            dataset_id: entry.dataset_id.clone(),
            path: PathBuf::new(),
            message: "entry has no manifest".into(),
        })?;
        let path = self.base_dir.join(rel);
        if !path.exists() {
            return Err(Error::CorpusLoad {
                dataset_id: entry.dataset_id.clone(),
                path,
                message: "manifest not found".into(),
            });
        }
        let manifest = CorpusManifest::load(&path)?;
        if manifest.task_id != entry.task_id {
            return Err(Error::CorpusLoad {
                dataset_id: entry.dataset_id.clone(),
                path,
                message: format!(
                    "manifest is for task `{}`, entry wants `{}`",
                    manifest.task_id, entry.task_id
                ),
            });
        }
        manifest.read(schema)
    }
}

/// Rows held in memory, keyed by dataset id.
#[derive(Debug, Clone, Default)]
pub struct InMemoryCorpora {
    pub datasets: BTreeMap<String, Vec<Example>>,
}

impl InMemoryCorpora {
    pub fn insert(&mut self, dataset_id: impl Into<String>, rows: Vec<Example>) {
        self.datasets.insert(dataset_id.into(), rows);
    }
}

impl CorpusSource for InMemoryCorpora {
    fn load(&self, entry: &MixtureEntry, _schema: &TaskSchema) -> Result<Vec<Example>> {
        self.datasets
            .get(&entry.dataset_id)
            .cloned()
            .ok_or_else(|| Error::CorpusLoad {
                dataset_id: entry.dataset_id.clone(),
                path: PathBuf::from("<memory>"),
                message: "no such dataset".into(),
            })
    }
}

/// Base pack plus, in translated mode, `<lang>.json` packs found under the
/// spec's translated pack directory. Relative paths resolve against
/// `base_dir`.
pub fn load_registry_for(
    spec: &MixtureSpec,
    catalog: &TaskCatalog,
    base_dir: &Path,
) -> Result<TemplateRegistry> {
    let mut registry = match &spec.pack {
        Some(p) => load_template_pack(&base_dir.join(p), catalog)?,
        None => TemplateRegistry::builtin(),
    };
    if spec.template_language_mode == TemplateLanguageMode::Translated {
        if let Some(dir) = &spec.translated_pack_dir {
            let dir = base_dir.join(dir);
            for lang in spec.language_set() {
                let path = dir.join(format!("{lang}.json"));
                if path.exists() {
                    registry.merge(load_template_pack(&path, catalog)?)?;
                }
            }
        }
    }
    Ok(registry)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupReport {
    pub dataset_id: String,
    pub task_id: String,
    pub language: String,
    pub rows_available: usize,
    pub rows_sampled: usize,
    pub distinct_source_rows: usize,
    pub statements: usize,
    pub true_count: usize,
    pub false_count: usize,
    pub validation_count: usize,
    /// Language tag of the templates used.
    pub template_language: String,
    pub template_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub seed: u64,
    pub spec_digest: String,
    /// Per-truth quota after applying `target_total`.
    pub per_truth_quota: usize,
    pub groups: Vec<GroupReport>,
    pub total_statements: usize,
    pub total_true: usize,
    pub total_false: usize,
    pub notes: Vec<String>,
}

impl BuildReport {
    /// Totals equal the sum of the per-group counts.
    pub fn is_consistent(&self) -> bool {
        let s: usize = self.groups.iter().map(|g| g.statements).sum();
        let t: usize = self.groups.iter().map(|g| g.true_count).sum();
        let f: usize = self.groups.iter().map(|g| g.false_count).sum();
        s == self.total_statements
            && t == self.total_true
            && f == self.total_false
            && self.groups.iter().all(|g| g.true_count + g.false_count == g.statements)
    }
}

/// The coordinates of one generation group.
#[derive(Debug, Clone, Copy)]
pub struct Group<'a> {
    pub dataset_id: &'a str,
    pub schema: &'a TaskSchema,
    pub language: &'a str,
}

struct RowView<'a> {
    row: &'a Example,
    gold: String,
    candidates: Vec<String>,
}

struct Sampler<'a> {
    schema: &'a TaskSchema,
    rows: Vec<RowView<'a>>,
    pool: Vec<String>,
    templates: Vec<&'a StatementTemplate>,
}

struct Emission {
    template: usize,
    candidate: Option<String>,
    contrast: Option<String>,
}

impl<'a> Sampler<'a> {
    fn has_wrong(&self, rv: &RowView) -> bool {
        rv.candidates.iter().any(|c| *c != rv.gold) || self.pool.iter().any(|p| *p != rv.gold)
    }

    // Uniform over the row's own candidates plus the pool, excluding `avoid`.
    fn sample_other(&self, rv: &RowView, avoid: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        let own: Vec<&String> = rv.candidates.iter().filter(|c| *c != avoid).collect();
        let total = own.len() + self.pool.len();
        if total == 0 {
            return None;
        }
        for _ in 0..64 {
            let i = rng.gen_range(0..total);
            if i < own.len() {
                return Some(own[i].clone());
            }
            let p = &self.pool[i - own.len()];
            if p != avoid && !rv.candidates.contains(p) {
                return Some(p.clone());
            }
        }
        let mut all: Vec<&String> = own;
        all.extend(
            self.pool
                .iter()
                .filter(|p| *p != avoid && !rv.candidates.contains(p)),
        );
        all.choose(rng).map(|s| (*s).clone())
    }

    fn feasible(&self, t: &StatementTemplate, rv: &RowView, truth: bool) -> bool {
        match &t.candidate_slot {
            Some(_) => {
                let needs_gold = (t.polarity == Polarity::Affirmative) == truth;
                if needs_gold {
                    // The contrast slot then needs some wrong candidate.
                    t.contrast_slot.is_none() || self.has_wrong(rv)
                } else {
                    self.has_wrong(rv)
                }
            }
            None => {
                let fixed = t.asserted_label.as_deref();
                truth_label(t.polarity, fixed, &rv.gold, &self.schema.label_space) == truth
            }
        }
    }

    fn emit(&self, rv: &RowView, truth: bool, rng: &mut ChaCha8Rng) -> Option<Emission> {
        let options: Vec<usize> = (0..self.templates.len())
            .filter(|&i| self.feasible(self.templates[i], rv, truth))
            .collect();
        let &template = options.choose(rng)?;
        let t = self.templates[template];
        let candidate = match &t.candidate_slot {
            Some(_) => {
                if (t.polarity == Polarity::Affirmative) == truth {
                    Some(rv.gold.clone())
                } else {
                    Some(self.sample_other(rv, &rv.gold, rng)?)
                }
            }
            None => t.asserted_label.clone(),
        };
        let contrast = match (&t.contrast_slot, &t.candidate_slot, &candidate) {
            (Some(_), Some(_), Some(c)) => Some(self.sample_other(rv, c, rng)?),
            _ => None,
        };
        Some(Emission {
            template,
            candidate,
            contrast,
        })
    }
}

/// Cycles through a fixed shuffled order of row indices.
struct RowCycle {
    order: Vec<usize>,
    pos: usize,
}

impl RowCycle {
    fn new(mut order: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        order.shuffle(rng);
        RowCycle { order, pos: 0 }
    }

    fn next(&mut self) -> usize {
        let i = self.order[self.pos % self.order.len()];
        self.pos += 1;
        i
    }
}

/// Output of one generation group.
#[derive(Debug, Clone)]
pub struct GroupOutput {
    pub records: Vec<StatementRecord>,
    pub template_language: String,
    pub template_fallback: bool,
}

/// Emits `spec.per_truth_quota` true and as many false statements for one
/// (dataset, language) group.
///
/// Each emission takes the next row from a seeded cycle over `rows` (true
/// statements of fixed-label tasks rotate over gold classes), draws a
/// template uniformly among those that can express the wanted truth value
/// for that row, and for slot templates fills in the gold candidate or a
/// uniformly drawn wrong one.
pub fn generate_statements(
    group: Group<'_>,
    rows: &[Example],
    registry: &TemplateRegistry,
    spec: &MixtureSpec,
) -> Result<GroupOutput> {
    let task_id = &group.schema.task_id;
    let (templates, template_language, template_fallback) =
        select_templates(registry, group.schema, group.language, spec.template_language_mode)?;
    let quota = spec.per_truth_quota;
    if quota == 0 || rows.is_empty() {
        return Ok(GroupOutput {
            records: Vec::new(),
            template_language,
            template_fallback,
        });
    }

    let mut views = Vec::with_capacity(rows.len());
    for row in rows {
        let Some(gold) = row.gold_for(group.schema) else {
            warn!("{}: row {} has no gold label; skipped", group.dataset_id, row.id);
            continue;
        };
        let candidates = match enumerate_candidates(group.schema, &row.fields) {
            Ok(c) => c,
            Err(_) if group.schema.label_space.is_pair() => Vec::new(),
            Err(_) => {
                warn!("{}: row {} has no candidates; skipped", group.dataset_id, row.id);
                continue;
            }
        };
        views.push(RowView {
            row,
            gold: gold.to_string(),
            candidates,
        });
    }
    if views.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}/{}: no usable rows",
            group.dataset_id, group.language
        )));
    }
    let pool: Vec<String> = match &group.schema.label_space {
        LabelSpace::Answers { pool: true, .. } => views
            .iter()
            .map(|v| v.gold.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        _ => Vec::new(),
    };
    let sampler = Sampler {
        schema: group.schema,
        rows: views,
        pool,
        templates,
    };

    let seed = spec.seed();
    let mut rng = rng_for(seed, &["generate", group.dataset_id, group.language]);
    let all: Vec<usize> = (0..sampler.rows.len()).collect();

    // True statements: rotate over gold classes where the label list is fixed.
    let class_rows: Vec<Vec<usize>> = match group.schema.label_space.fixed_labels() {
        Some(labels) => labels
            .iter()
            .map(|l| all.iter().copied().filter(|&i| sampler.rows[i].gold == *l).collect())
            .filter(|v: &Vec<usize>| !v.is_empty())
            .collect(),
        None => vec![all.clone()],
    };
    let mut true_cycles: Vec<RowCycle> = class_rows
        .into_iter()
        .map(|v| RowCycle::new(v, &mut rng))
        .collect();

    let mut trues = Vec::with_capacity(quota);
    let mut used = BTreeSet::new();
    let mut class = 0usize;
    while trues.len() < quota {
        if true_cycles.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "task `{task_id}`: no template can produce a true statement"
            )));
        }
        let k = class % true_cycles.len();
        let cycle = &mut true_cycles[k];
        let mut produced = None;
        for _ in 0..cycle.order.len() {
            let i = cycle.next();
            if let Some(e) = sampler.emit(&sampler.rows[i], true, &mut rng) {
                produced = Some((i, e));
                break;
            }
        }
        match produced {
            Some((i, e)) => {
                used.insert(i);
                trues.push(make_record(&sampler, group, i, e, true)?);
                class += 1;
            }
            // This class cannot yield true statements; drop it from the rotation.
            None => {
                true_cycles.remove(k);
            }
        }
    }

    // False statements visit rows the true pass left unused first.
    let (mut fresh, mut seen): (Vec<usize>, Vec<usize>) = all.iter().partition(|i| !used.contains(i));
    fresh.shuffle(&mut rng);
    seen.shuffle(&mut rng);
    fresh.extend(seen);
    let mut false_cycle = RowCycle { order: fresh, pos: 0 };

    let mut falses = Vec::with_capacity(quota);
    while falses.len() < quota {
        let mut produced = None;
        for _ in 0..false_cycle.order.len() {
            let i = false_cycle.next();
            if let Some(e) = sampler.emit(&sampler.rows[i], false, &mut rng) {
                produced = Some((i, e));
                break;
            }
        }
        let (i, e) = produced.ok_or_else(|| Error::CannotFalsify(task_id.clone()))?;
        falses.push(make_record(&sampler, group, i, e, false)?);
    }

    let mut split_rng = rng_for(seed, &["split", group.dataset_id, group.language]);
    for part in [&mut trues, &mut falses] {
        let n_val = (part.len() as f64 * spec.validation_fraction).floor() as usize;
        let mut idx: Vec<usize> = (0..part.len()).collect();
        idx.shuffle(&mut split_rng);
        for &i in &idx[..n_val] {
            part[i].split = Split::Validation;
        }
    }
    trues.append(&mut falses);
    Ok(GroupOutput {
        records: trues,
        template_language,
        template_fallback,
    })
}

fn make_record(
    sampler: &Sampler,
    group: Group<'_>,
    row: usize,
    e: Emission,
    truth: bool,
) -> Result<StatementRecord> {
    let rv = &sampler.rows[row];
    let t = sampler.templates[e.template];
    let slot_candidate = t.candidate_slot.as_ref().and(e.candidate.as_deref());
    let statement = render_text(t, &rv.row.fields, slot_candidate, e.contrast.as_deref())?;
    Ok(StatementRecord {
        statement,
        truth,
        task_id: group.schema.task_id.clone(),
        dataset_id: group.dataset_id.to_string(),
        language: group.language.to_string(),
        template_id: t.template_id.clone(),
        polarity: t.polarity,
        candidate: e.candidate,
        gold: rv.gold.clone(),
        source_row_id: rv.row.id.clone(),
        split: Split::Train,
    })
}

fn select_templates<'r>(
    registry: &'r TemplateRegistry,
    schema: &TaskSchema,
    language: &str,
    mode: TemplateLanguageMode,
) -> Result<(Vec<&'r StatementTemplate>, String, bool)> {
    let usable = |tag: &str| -> Vec<&'r StatementTemplate> {
        registry
            .templates(&schema.task_id, tag)
            .iter()
            .filter(|t| {
                let v = validate_template(t, schema);
                if !v.is_empty() {
                    warn!("template {} skipped: {:?}", t.template_id, v);
                }
                v.is_empty()
            })
            .collect()
    };
    let (templates, tag, fallback) = match mode {
        TemplateLanguageMode::EnglishOnly => (usable("en"), "en".to_string(), false),
        TemplateLanguageMode::Translated => {
            let own = usable(language);
            if own.is_empty() {
                if language != "en" {
                    warn!(
                        "no `{language}` templates for task `{}`; using English",
                        schema.task_id
                    );
                }
                (usable("en"), "en".to_string(), language != "en")
            } else {
                (own, language.to_string(), false)
            }
        }
    };
    if templates.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "no usable templates for task `{}`",
            schema.task_id
        )));
    }
    Ok((templates, tag, fallback))
}

struct PlannedGroup<'a> {
    entry: &'a MixtureEntry,
    schema: &'a TaskSchema,
    language: String,
    rows_available: usize,
    rows: Vec<Example>,
}

/// Builds the full statement mixture described by `spec`.
///
/// Groups are generated independently (in parallel under [`Exec::Parallel`]),
/// concatenated in entry order then language-code order, and shuffled once
/// with a seeded permutation, so the output never depends on scheduling.
pub fn assemble_mixture(
    spec: &MixtureSpec,
    corpora: &dyn CorpusSource,
    registry: &TemplateRegistry,
    catalog: &TaskCatalog,
    exec: Exec,
) -> Result<(StatementDataset, BuildReport)> {
    spec.validate()?;
    let seed = spec.seed();
    let mut notes = Vec::new();
    if let super::spec::LanguageSelection::Preset(p) = &spec.languages {
        for code in p.off_table() {
            notes.push(format!(
                "language `{code}` is in the {p:?} preset but not in the 25-language table"
            ));
        }
    }

    let mut entries = Vec::new();
    for entry in &spec.entries {
        let schema = catalog.get(&entry.task_id)?;
        if schema.is_translation() && !spec.include_mt {
            notes.push(format!("dropped MT entry `{}` (include_mt = false)", entry.dataset_id));
            continue;
        }
        entries.push((entry, schema));
    }

    let loaded: Vec<Vec<Example>> = exec.try_map(&entries, |(entry, schema)| corpora.load(entry, schema))?;

    let mut planned = Vec::new();
    for ((entry, schema), rows) in entries.iter().zip(&loaded) {
        for language in spec.entry_languages(entry) {
            let rows_available = rows.iter().filter(|r| r.language == language).count();
            if rows_available == 0 {
                notes.push(format!("`{}` has no `{language}` rows", entry.dataset_id));
                continue;
            }
            let sample_seed = derive_seed(seed, &[&entry.dataset_id]);
            let rows = sample_rows(rows, &language, spec.rows_per_language_cap, sample_seed)?;
            planned.push(PlannedGroup {
                entry,
                schema,
                language,
                rows_available,
                rows,
            });
        }
    }
    let planned: Vec<PlannedGroup> = planned.into_iter().filter(|g| !g.rows.is_empty()).collect();

    let mut quota = spec.per_truth_quota;
    if let Some(target) = spec.target_total {
        let full = planned.len() * 2 * quota;
        if full > target && !planned.is_empty() {
            quota = target / (2 * planned.len());
            notes.push(format!(
                "per-truth quota scaled from {} to {quota} to respect target_total {target}",
                spec.per_truth_quota
            ));
        }
    }
    let group_spec = MixtureSpec {
        per_truth_quota: quota,
        ..spec.clone()
    };

    let outputs = exec.try_map(&planned, |g| {
        generate_statements(
            Group {
                dataset_id: &g.entry.dataset_id,
                schema: g.schema,
                language: &g.language,
            },
            &g.rows,
            registry,
            &group_spec,
        )
    })?;

    let mut records = Vec::new();
    let mut groups = Vec::new();
    for (g, out) in planned.iter().zip(outputs) {
        if out.template_fallback {
            notes.push(format!(
                "`{}`/{}: no translated templates, fell back to English",
                g.entry.dataset_id, g.language
            ));
        }
        let true_count = out.records.iter().filter(|r| r.truth).count();
        groups.push(GroupReport {
            dataset_id: g.entry.dataset_id.clone(),
            task_id: g.schema.task_id.clone(),
            language: g.language.clone(),
            rows_available: g.rows_available,
            rows_sampled: g.rows.len(),
            distinct_source_rows: out
                .records
                .iter()
                .map(|r| r.source_row_id.as_str())
                .collect::<BTreeSet<_>>()
                .len(),
            statements: out.records.len(),
            true_count,
            false_count: out.records.len() - true_count,
            validation_count: out
                .records
                .iter()
                .filter(|r| r.split == Split::Validation)
                .count(),
            template_language: out.template_language,
            template_fallback: out.template_fallback,
        });
        records.extend(out.records);
    }

    let mut rng = rng_for(seed, &["global_shuffle"]);
    records.shuffle(&mut rng);

    let total_true = records.iter().filter(|r| r.truth).count();
    let digest = spec.digest();
    let report = BuildReport {
        seed,
        spec_digest: digest.clone(),
        per_truth_quota: quota,
        groups,
        total_statements: records.len(),
        total_true,
        total_false: records.len() - total_true,
        notes,
    };
    let dataset = StatementDataset {
        header: DatasetHeader::new(digest, seed),
        records,
    };
    Ok((dataset, report))
}
