//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances are fixed here.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_bigint::BigUint;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use sttune::bench::{self, find_max_batch, probe_statement, throughput_report, time_batches, BenchConfig};
use sttune::builder::*;
use sttune::classifier::{classify, classify_batch, Aggregation, ClassificationRequest};
use sttune::eval::{aggregate, evaluate_task, geometric_mean, population_std, render_markdown, EvalOptions};
use sttune::model::{load_model, save_model, train, ModelHandle, StatementScorer, TrainConfig};
use sttune::schema::{Example, FieldMap, LabelSpace, TaskCatalog, TaskSchema};
use sttune::templates::{render, Polarity, StatementTemplate, TemplateRegistry};
use sttune::{Error, Exec, Result};

const LEARNING_THRESHOLD: f64 = 0.55;
const GEOMEAN_REL_TOL: f64 = 1e-9;
const TIMING_NOISE: f64 = 0.20;
const CHECKPOINT_DRIFT: f64 = 1e-6;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn template_fidelity() -> Outcome {
    let reg = TemplateRegistry::builtin();
    let counts: Vec<(&str, usize)> = [("xlwic", 12), ("sib200", 42), ("pawsx", 14)].to_vec();
    for (task, want) in &counts {
        let got = reg.templates(task, "en").len();
        ensure!(got == *want, "{task}: {got} templates, expected {want}");
    }
    ensure!(reg.len() == 197, "pack holds {} templates, expected 197", reg.len());
    let fig = reg
        .templates("xlwic", "en")
        .iter()
        .find(|t| t.pattern == r#""{{target_word}}" means the same in "{{context_1}}" and "{{context_2}}""#)
        .ok_or("illustrated word-in-context template missing")?;
    let ex = Example::new(
        "r",
        "en",
        common::fields(&[
            ("target_word", "bank".into()),
            ("context_1", "We sat on the river bank.".into()),
            ("context_2", "She works at the bank.".into()),
        ]),
    );
    let text = ok(render(fig, &ex, None))?.text;
    let want = r#""bank" means the same in "We sat on the river bank." and "She works at the bank.""#;
    ensure!(text == want, "rendered {text:?}");
    Ok(format!("xlwic 12, sib200 42, pawsx 14, 197 total; {} rendered byte-exactly", fig.template_id))
}

fn balance_and_caps() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut topics = common::topic_rows(&mut rng, "en", 10_000);
    topics.extend(common::topic_rows(&mut rng, "de", 10_000));
    topics.extend(common::topic_rows(&mut rng, "ha", 900));
    let mut pairs = common::pair_rows(&mut rng, "en", 10_000);
    pairs.extend(common::pair_rows(&mut rng, "de", 10_000));
    let mut corpora = InMemoryCorpora::default();
    corpora.insert("sib200", topics);
    corpora.insert("pawsx", pairs);
    let spec = MixtureSpec {
        entries: vec![
            MixtureEntry { dataset_id: "sib200".into(), task_id: "sib200".into(), manifest: None, languages: None },
            MixtureEntry {
                dataset_id: "pawsx".into(),
                task_id: "pawsx".into(),
                manifest: None,
                languages: Some(vec!["en".into(), "de".into()]),
            },
        ],
        languages: LanguageSelection::Explicit(vec!["en".into(), "de".into(), "ha".into()]),
        seed: Some(5),
        ..MixtureSpec::default()
    };
    let (ds, report) = ok(assemble_mixture(
        &spec,
        &corpora,
        &TemplateRegistry::builtin(),
        &TaskCatalog::builtin(),
        Exec::Parallel,
    ))?;
    ensure!(report.is_consistent(), "build report totals disagree with its groups");
    let mut truth: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    let mut rows: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for r in &ds.records {
        let key = (r.dataset_id.clone(), r.language.clone());
        let e = truth.entry(key.clone()).or_default();
        if r.truth {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
        rows.entry(key).or_default().insert(r.source_row_id.clone());
    }
    ensure!(truth.len() == 5, "expected 5 (dataset, language) groups, got {}", truth.len());
    let mut worst = 0usize;
    for (k, (t, f)) in &truth {
        let d = t.abs_diff(*f);
        worst = worst.max(d);
        ensure!(d <= 1, "{k:?}: {t} true vs {f} false");
    }
    for (k, ids) in &rows {
        ensure!(ids.len() <= 1500, "{k:?} uses {} source rows", ids.len());
    }
    let ha = rows[&("sib200".to_string(), "ha".to_string())].len();
    ensure!(ha == 900, "low-resource language used {ha} of 900 rows");
    let en = rows[&("sib200".to_string(), "en".to_string())].len();
    Ok(format!("max |true-false| {worst}; en rows {en} (cap 1500); ha rows {ha}/900"))
}

fn determinism() -> Outcome {
    let corpora = common::learning_corpora(21, 2000);
    let spec = common::learning_spec(300, 9);
    let reg = TemplateRegistry::builtin();
    let cat = TaskCatalog::builtin();
    let dir = ok(tempfile::tempdir())?;
    let mut digests = Vec::new();
    for (i, exec) in [Exec::Parallel, Exec::Parallel, Exec::Sequential].into_iter().enumerate() {
        let (ds, _) = ok(assemble_mixture(&spec, &corpora, &reg, &cat, exec))?;
        let path = dir.path().join(format!("build{i}.jsonl"));
        ok(write_dataset(&ds, &path))?;
        digests.push(sha256_hex(&ok(std::fs::read(&path))?));
    }
    ensure!(digests.windows(2).all(|w| w[0] == w[1]), "digests differ: {digests:?}");
    let other = common::learning_spec(300, 10);
    let (ds, _) = ok(assemble_mixture(&other, &corpora, &reg, &cat, Exec::Parallel))?;
    let path = dir.path().join("other.jsonl");
    ok(write_dataset(&ds, &path))?;
    ensure!(sha256_hex(&ok(std::fs::read(&path))?) != digests[0], "a different seed gave the same bytes");
    Ok(format!("3 builds (parallel, parallel, sequential) share sha256 {}", &digests[0][..16]))
}

/// Probability from the statement text alone, so batching cannot matter.
struct HashScorer;

impl StatementScorer for HashScorer {
    fn score(&self, s: &[String]) -> Result<Vec<f64>> {
        Ok(s.iter()
            .map(|t| {
                let d = Sha256::digest(t.as_bytes());
                u64::from_le_bytes(d[..8].try_into().unwrap()) as f64 / u64::MAX as f64
            })
            .collect())
    }
}

/// Fills `{{name}}` slots by plain substitution.
fn substitute(t: &StatementTemplate, fields: &FieldMap, candidate: Option<&str>, contrast: Option<&str>) -> String {
    let mut out = t.pattern.clone();
    if let (Some(slot), Some(c)) = (&t.candidate_slot, candidate) {
        out = out.replace(&format!("{{{{{slot}}}}}"), c);
    }
    if let (Some(slot), Some(c)) = (&t.contrast_slot, contrast) {
        out = out.replace(&format!("{{{{{slot}}}}}"), c);
    }
    for (k, v) in fields {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

/// Scores every label on its own and takes the first best.
fn brute_force(
    schema: &TaskSchema,
    fields: &FieldMap,
    templates: &[&StatementTemplate],
    agg: Aggregation,
    include_negated: bool,
) -> Option<String> {
    let labels: Vec<String> = match &schema.label_space {
        LabelSpace::Fixed { labels } => labels.clone(),
        LabelSpace::Pair { positive, negative } => vec![positive.clone(), negative.clone()],
        LabelSpace::Columns { columns } => columns.iter().map(|c| fields[c].clone()).collect(),
        LabelSpace::Answers { .. } => return None,
    };
    let p = |s: String| HashScorer.score(&[s]).unwrap()[0];
    let mut best: Option<(String, f64)> = None;
    for label in &labels {
        let mut scores = Vec::new();
        for t in templates {
            let negated = t.polarity == Polarity::Negated;
            if negated && !include_negated {
                continue;
            }
            let flip = |q: f64| if negated { 1.0 - q } else { q };
            let v = if let Some(asserted) = t.asserted_label.as_deref().filter(|_| t.candidate_slot.is_none()) {
                if asserted != label {
                    continue;
                }
                flip(p(substitute(t, fields, None, None)))
            } else if t.candidate_slot.is_some() {
                let contrast = labels.iter().find(|o| *o != label).map(String::as_str);
                flip(p(substitute(t, fields, Some(label), contrast)))
            } else if let LabelSpace::Pair { positive, .. } = &schema.label_space {
                let q = flip(p(substitute(t, fields, None, None)));
                if label == positive { q } else { 1.0 - q }
            } else {
                continue;
            };
            scores.push(v);
        }
        if scores.is_empty() {
            return None;
        }
        let s = match agg {
            Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
            Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((label.clone(), s));
        }
    }
    best.map(|(l, _)| l)
}

fn argmax_oracle() -> Outcome {
    let cat = TaskCatalog::builtin();
    let reg = TemplateRegistry::builtin();
    let tasks: Vec<&TaskSchema> = cat
        .iter()
        .filter(|s| !matches!(s.label_space, LabelSpace::Answers { .. }))
        .filter(|s| !reg.templates(&s.task_id, "en").is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let v = common::vocab(&mut rng, false, 400);
    let mut cases = Vec::new();
    for _ in 0..1000 {
        let schema = *tasks.choose(&mut rng).unwrap();
        let mut used = BTreeSet::new();
        let fields: FieldMap = schema
            .field_names
            .iter()
            .map(|f| {
                let len = rng.gen_range(1..6);
                let mut w = common::words(&mut rng, &v, len).join(" ");
                while !used.insert(w.clone()) {
                    w.push_str(" x");
                }
                (f.clone(), w)
            })
            .collect();
        let pool = reg.templates(&schema.task_id, "en");
        let k = rng.gen_range(1..=pool.len().min(5));
        let templates: Vec<&StatementTemplate> = pool.iter().choose_multiple(&mut rng, k);
        let agg = if rng.gen_bool(0.5) { Aggregation::Mean } else { Aggregation::Max };
        cases.push((schema, fields, templates, agg, rng.gen_bool(0.3)));
    }
    let requests: Vec<ClassificationRequest> = cases
        .iter()
        .map(|(schema, fields, templates, agg, neg)| ClassificationRequest {
            aggregation: *agg,
            include_negated: *neg,
            ..ClassificationRequest::new(fields, schema, templates.clone())
        })
        .collect();
    let (mut agree, mut predicted, mut rejected) = (0, 0, 0);
    // Requests the oracle cannot answer must be rejected by classify too.
    let mut answerable = Vec::new();
    for (i, ((schema, fields, templates, agg, neg), req)) in cases.iter().zip(&requests).enumerate() {
        let want = brute_force(schema, fields, templates, *agg, *neg);
        let got = classify(req, &HashScorer);
        match (&want, &got) {
            (Some(w), Ok(r)) => {
                ensure!(&r.predicted == w, "request {i} ({}): classify {} vs oracle {w}", schema.task_id, r.predicted);
                predicted += 1;
                agree += 1;
                answerable.push(i);
            }
            (None, Err(_)) => rejected += 1,
            (w, g) => return Err(format!("request {i} ({}): oracle {w:?}, classify {:?}", schema.task_id, g.as_ref().map(|r| &r.predicted))),
        }
    }
    let batchable: Vec<ClassificationRequest> = answerable.iter().map(|&i| requests[i].clone()).collect();
    let max_fan = batchable
        .iter()
        .map(|r| sttune::classifier::plan(r).unwrap().fan_out())
        .max()
        .unwrap_or(1);
    for limit in [max_fan, max_fan * 3 + 1, 4096] {
        let results = ok(classify_batch(&batchable, &HashScorer, limit))?;
        for (j, r) in results.iter().enumerate() {
            let (schema, fields, templates, agg, neg) = &cases[answerable[j]];
            let want = brute_force(schema, fields, templates, *agg, *neg).unwrap();
            ensure!(r.predicted == want, "batched request {} at limit {limit} disagrees", answerable[j]);
        }
    }
    ensure!(predicted >= 900, "only {predicted} of 1000 requests were answerable");
    Ok(format!("{agree}/{predicted} agree (single and batched at 3 batch limits); {rejected} unanswerable rejected by both"))
}

fn learning_sanity() -> Outcome {
    let t0 = Instant::now();
    let corpora = common::learning_corpora(1, 1500);
    let spec = common::learning_spec(625, 3);
    let cat = TaskCatalog::builtin();
    let reg = TemplateRegistry::builtin();
    let (ds, _) = ok(assemble_mixture(&spec, &corpora, &reg, &cat, Exec::Parallel))?;
    ensure!((4500..=5500).contains(&ds.len()), "mixture has {} statements", ds.len());
    let config = TrainConfig::preset("tiny-encoder").unwrap();
    let model = ok(train(&ds, &config, "tiny-encoder"))?;
    let params = model.parameter_count();
    ensure!(params <= 50_000_000, "{params} parameters");

    let schema = cat.get("xcopa").unwrap();
    let examples = common::heldout_xcopa(77, 600);
    let templates: Vec<&StatementTemplate> = reg
        .templates("xcopa", "en")
        .iter()
        .filter(|t| t.polarity == Polarity::Affirmative)
        .collect();
    let langs: Vec<String> = common::LEARNING_LANGS.iter().map(|(l, _)| l.to_string()).collect();
    let result = ok(evaluate_task(schema, &examples, &langs, &templates, &model, &EvalOptions::default(), Exec::Parallel))?;
    let (correct, total) = result.per_language.values().fold((0, 0), |(c, t), r| (c + r.correct, t + r.total));
    ensure!(total >= 1000, "{total} evaluation examples");
    let acc = correct as f64 / total as f64;
    let sigma = (0.25 / total as f64).sqrt();
    ensure!(acc >= LEARNING_THRESHOLD, "zero-shot accuracy {acc:.4} below {LEARNING_THRESHOLD}");
    ensure!(acc >= 0.5 + 3.0 * sigma, "accuracy {acc:.4} within 3 sigma of chance");

    let report = ok(aggregate(&[("tiny-encoder".into(), vec![result])], &langs))?;
    let stored = ok(serde_json::to_string(&report))?;
    let back = ok(serde_json::from_str(&stored))?;
    let md = render_markdown(&back);
    ensure!(md.contains("| Model | xcopa | Geo. mean |"), "report table shape:\n{md}");
    ensure!(md.contains(&format!("| tiny-encoder | {:.2} |", report.runs[0].tasks[0].macro_mean * 100.0)), "report row:\n{md}");
    Ok(format!(
        "{} statements, {params} params, held-out xcopa {correct}/{total} = {:.2}% (3 sigma = {:.2}%), {:.0}s",
        ds.len(),
        acc * 100.0,
        (0.5 + 3.0 * sigma) * 100.0,
        t0.elapsed().as_secs_f64()
    ))
}

/// Geometric mean of values given in hundredths, from an integer n-th root
/// carried to `digits` decimals.
fn bigint_geomean(hundredths: &[u64], digits: u32) -> f64 {
    let n = hundredths.len() as u32;
    let prod: BigUint = hundredths.iter().map(|&v| BigUint::from(v)).product();
    let scaled = prod * BigUint::from(10u32).pow(digits * n);
    let root = scaled.nth_root(n);
    let s = root.to_string();
    let (int, frac) = s.split_at(s.len() - (digits + 2) as usize);
    format!("{int}.{frac}").parse().unwrap()
}

fn aggregation_math() -> Outcome {
    let table = [64.36, 45.76, 78.78, 54.26];
    let (g, zero) = geometric_mean(&table);
    ensure!(!zero, "zero flag set");
    let oracle = bigint_geomean(&[6436, 4576, 7878, 5426], 30);
    let rel = (g - oracle).abs() / oracle;
    ensure!(rel <= GEOMEAN_REL_TOL, "geometric mean {g} vs oracle {oracle} (rel {rel:e})");
    ensure!((g - 59.6).abs() < 0.05, "geometric mean {g} not near 59.6");
    let s = population_std(&[65.0, 66.0, 64.0]);
    let exact = (2.0f64 / 3.0).sqrt();
    ensure!(s == exact, "std {s} vs {exact}");
    // The closed form itself lies within one ulp of sqrt(2/3).
    let digits = 30;
    let root = (BigUint::from(2u32) * BigUint::from(10u32).pow(2 * digits) / BigUint::from(3u32)).sqrt();
    let s_big: f64 = format!("0.{:0>30}", root.to_string()).parse().unwrap();
    ensure!((s - s_big).abs() <= f64::EPSILON * s, "std {s} vs big-integer {s_big}");
    Ok(format!("geometric mean {g:.12} (oracle {oracle:.12}, rel {rel:.1e}); std {s}"))
}

struct Capped(usize);

impl StatementScorer for Capped {
    fn score(&self, s: &[String]) -> Result<Vec<f64>> {
        if s.len() > self.0 {
            Err(Error::OutOfMemory { batch_size: s.len() })
        } else {
            Ok(vec![0.5; s.len()])
        }
    }
}

fn bench_harness() -> Outcome {
    for limit in [1, 7, 64, 100, 513, 732] {
        let got = ok(find_max_batch(&Capped(limit), "p", None, 1))?;
        ensure!(got == limit, "stub capped at {limit}: found {got}");
    }
    let handle = ok(ModelHandle::init("tiny-encoder", 0, 128))?;
    let cfg = BenchConfig { repeats: 7, warmup: 3, probe_tokens: 32, ..BenchConfig::default() };
    let probe = probe_statement(cfg.probe_tokens);
    let sizes = [1, 2, 4, 8, 16, 32, 64];
    let (timings, _) = ok(time_batches(&handle, &probe, &sizes, 64, &cfg))?;
    ensure!(timings.len() == sizes.len(), "{} of {} sizes timed", timings.len(), sizes.len());
    for w in timings.windows(2) {
        ensure!(
            w[1].mean >= (1.0 - TIMING_NOISE) * w[0].mean,
            "batch {} took {:.5}s, batch {} took {:.5}s",
            w[0].batch_size,
            w[0].mean,
            w[1].batch_size,
            w[1].mean
        );
    }
    let report = ok(throughput_report("tiny-encoder", "cpu", &cfg, timings, 64, 2, vec![]))?;
    ensure!(
        report.instances_per_second * report.n_labels as f64 == report.statements_per_second,
        "instances/s x n != statements/s"
    );
    for n in [1usize, 3, 7] {
        let r = ok(throughput_report("m", "cpu", &cfg, report.timings.clone(), 64, n, vec![]))?;
        ensure!(r.instances_per_second * n as f64 == r.statements_per_second, "identity fails at n = {n}");
    }
    let md = bench::render_markdown(std::slice::from_ref(&report));
    let mut lines = md.lines();
    ensure!(lines.next() == Some("| Model | Max batch size | Mean time per batch (s) |"), "table header:\n{md}");
    ensure!(lines.next() == Some("|---|---:|---:|"), "table rule:\n{md}");
    let row = lines.next().unwrap_or_default();
    ensure!(row.starts_with("| tiny-encoder | 64 | ") && row.split('|').count() == 5, "table row {row:?}");
    let means: Vec<String> = report.timings.iter().map(|t| format!("{}:{:.4}", t.batch_size, t.mean)).collect();
    Ok(format!("stub limits found exactly; timings {}; {:.0} statements/s", means.join(" "), report.statements_per_second))
}

fn persistence() -> Outcome {
    let corpora = common::learning_corpora(5, 300);
    let spec = common::learning_spec(100, 4);
    let (ds, _) = ok(assemble_mixture(&spec, &corpora, &TemplateRegistry::builtin(), &TaskCatalog::builtin(), Exec::Parallel))?;
    let dir = ok(tempfile::tempdir())?;
    let path = dir.path().join("d.jsonl");
    ok(write_dataset(&ds, &path))?;
    let back = ok(read_dataset(&path))?;
    ensure!(back == ds, "dataset records differ after a round trip");

    let config = TrainConfig { epochs: 1, ..TrainConfig::preset("tiny-encoder").unwrap() };
    let model = ok(train(&ds, &config, "tiny-encoder"))?;
    let ckpt = dir.path().join("ckpt");
    ok(save_model(&model, &ckpt))?;
    let loaded = ok(load_model(&ckpt))?;
    let statements: Vec<String> = ds.records.iter().take(200).map(|r| r.statement.clone()).collect();
    let a = ok(model.score(&statements))?;
    let b = ok(loaded.score(&statements))?;
    let drift = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure!(drift <= CHECKPOINT_DRIFT, "score drift {drift:e}");
    ensure!(loaded.provenance == model.provenance, "provenance differs");
    Ok(format!("{} records equal; checkpoint drift {drift:e} over {} statements", ds.len(), statements.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("template fidelity", template_fidelity),
        ("balance and caps", balance_and_caps),
        ("determinism", determinism),
        ("argmax oracle", argmax_oracle),
        ("learning sanity", learning_sanity),
        ("aggregation math", aggregation_math),
        ("bench harness", bench_harness),
        ("persistence", persistence),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({secs:.1}s) {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({secs:.1}s) {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
