use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sttune::bench::{run_bench, write_bench, BenchConfig};
use sttune::builder::{assemble_mixture, load_registry_for, write_dataset, ManifestCorpora, MixtureSpec};
use sttune::classifier::{classify_batch, Aggregation, ClassificationRequest};
use sttune::eval::{aggregate, evaluate_manifest, select_templates, write_plots, write_report, EvalManifest, EvalReport, TemplateMode};
use sttune::model::{backend_info, load_model, save_model, train, TrainConfig};
use sttune::run_config::{exit_code, run, validate_config, Stage};
use sttune::schema::{FieldMap, TaskCatalog};
use sttune::templates::{load_template_pack, validate_template, TemplateRegistry};
use sttune::{Error, Exec, Result};

/// Statement tuning: build statement mixtures, fine-tune a statement
/// discriminator, and classify unseen tasks zero-shot.
///
/// Exit codes: 0 success, 2 configuration problem, 3 failure while running.
/// `ST_DEVICE` (cpu, cuda, cuda:N, metal, auto) selects the compute device.
#[derive(Parser)]
#[command(name = "sttune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a balanced statement dataset from a mixture spec.
    BuildData(BuildDataArgs),
    /// Fine-tune a statement discriminator on a statement dataset.
    Train(TrainArgs),
    /// Evaluate one or more checkpoints on held-out tasks.
    Eval(EvalArgs),
    /// Classify JSON-lines examples of one task zero-shot.
    Classify(ClassifyArgs),
    /// Measure max batch size and time per batch.
    Bench(BenchArgs),
    /// List templates with their polarity and validation status.
    InspectTemplates(InspectArgs),
    /// Render bar charts from an evaluation report.
    Plot(PlotArgs),
    /// Run pipeline stages from a run config.
    Run(RunArgs),
    /// Check a run config and print it with every default resolved.
    ValidateConfig(RunArgs),
}

#[derive(Args)]
struct ExecArgs {
    /// Run data-parallel work on one thread.
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

#[derive(Args)]
struct BuildDataArgs {
    /// Mixture spec (TOML). Relative paths inside resolve against its directory.
    #[arg(long)]
    spec: PathBuf,
    /// Output statement dataset (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Where to write the build report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Statement dataset written by build-data.
    #[arg(long)]
    data: PathBuf,
    /// Training config (TOML); the backend's preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Backend id: tiny-encoder, small-encoder, mdeberta-v3-base, mbert, xlmr-base, xlmr-large.
    #[arg(long)]
    backend: String,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directories, comma separated; one report row each.
    #[arg(long, value_delimiter = ',', required = true)]
    model: Vec<PathBuf>,
    /// Evaluation manifest (TOML or JSON).
    #[arg(long)]
    tasks: PathBuf,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Row names, comma separated; the checkpoint directory names by default.
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    /// Task id of the input examples.
    #[arg(long)]
    task: String,
    /// JSON lines, one object of field values per line.
    #[arg(long)]
    input: PathBuf,
    /// Template pack; the built-in pack when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Extra task schemas (JSON) merged over the built-in catalog.
    #[arg(long)]
    tasks_catalog: Option<PathBuf>,
    /// Template ids to use, comma separated; every affirmative template by default.
    #[arg(long, value_delimiter = ',')]
    template_ids: Vec<String>,
    /// Score aggregation across templates: mean or max.
    #[arg(long, default_value = "mean")]
    agg: String,
    /// Also score negated templates, using the complement of their probability.
    #[arg(long)]
    include_negated: bool,
    /// Use only the first selected template.
    #[arg(long)]
    first_template: bool,
    /// Maximum statements per forward batch.
    #[arg(long, default_value_t = 256)]
    max_batch: usize,
    /// Output file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Include per-statement probabilities.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    /// Bench config (TOML); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for bench.json, bench.md and timings.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Task id.
    #[arg(long)]
    task: Option<String>,
    /// Language tag of the templates.
    #[arg(long)]
    lang: Option<String>,
    /// Template pack; the built-in pack when omitted.
    #[arg(long)]
    pack: Option<PathBuf>,
    /// Extra task schemas (JSON) merged over the built-in catalog.
    #[arg(long)]
    tasks_catalog: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// report.json written by eval.
    #[arg(long)]
    report: PathBuf,
    /// Figure directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated stages: build-data, train, eval, bench.
    #[arg(long, default_value = "build-data,train,eval")]
    stages: String,
    #[command(flatten)]
    exec: ExecArgs,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::InvalidInput(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

fn catalog_with(extra: Option<&Path>) -> Result<TaskCatalog> {
    let mut catalog = TaskCatalog::builtin();
    if let Some(p) = extra {
        catalog.extend(TaskCatalog::load(p)?);
    }
    Ok(catalog)
}

fn registry_from(pack: Option<&Path>, catalog: &TaskCatalog) -> Result<TemplateRegistry> {
    match pack {
        Some(p) => load_template_pack(p, catalog),
        None => Ok(TemplateRegistry::builtin()),
    }
}

fn build_data(a: BuildDataArgs) -> Result<()> {
    let spec = MixtureSpec::from_toml(&read_text(&a.spec)?)?;
    let base = a.spec.parent().unwrap_or(Path::new("")).to_path_buf();
    let catalog = catalog_with(spec.tasks.as_ref().map(|p| base.join(p)).as_deref())?;
    let registry = load_registry_for(&spec, &catalog, &base)?;
    let (dataset, report) = assemble_mixture(&spec, &ManifestCorpora::new(&base), &registry, &catalog, a.exec.exec())?;
    write_dataset(&dataset, &a.out)?;
    for n in &report.notes {
        log::warn!("{n}");
    }
    if let Some(p) = &a.report {
        write_text(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    println!(
        "{} statements ({} true, {} false) written to {}",
        report.total_statements,
        report.total_true,
        report.total_false,
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    backend_info(&a.backend)?;
    let mut config = match &a.config {
        Some(p) => toml::from_str::<TrainConfig>(&read_text(p)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
        None => TrainConfig::preset(&a.backend).expect("known backend has a preset"),
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if a.seed.is_some() {
        config.seed = a.seed;
    }
    let data = sttune::builder::read_dataset(&a.data)?;
    let handle = train(&data, &config, &a.backend)?;
    save_model(&handle, &a.out)?;
    println!(
        "checkpoint written to {} (best epoch {:?}, validation accuracy {:?})",
        a.out.display(),
        handle.provenance.best_epoch,
        handle.provenance.validation_accuracy
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let manifest = EvalManifest::load(&a.tasks)?;
    manifest.validate()?;
    if !a.names.is_empty() && a.names.len() != a.model.len() {
        return Err(Error::InvalidConfig("--names needs one name per --model".into()));
    }
    let mut runs = Vec::new();
    for (i, dir) in a.model.iter().enumerate() {
        let handle = load_model(dir)?;
        let results = evaluate_manifest(&manifest, &handle, a.exec.exec())?;
        let name = a.names.get(i).cloned().unwrap_or_else(|| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| handle.backend_id.clone())
        });
        runs.push((name, results));
    }
    let report = aggregate(&runs, &manifest.seen_languages)?;
    write_report(&report, &a.out)?;
    write_text(&a.out.join("task_results.json"), &(serde_json::to_string_pretty(&runs)? + "\n"))?;
    print!("{}", sttune::eval::render_markdown(&report));
    Ok(())
}

fn field_map(line: &str, n: usize) -> Result<FieldMap> {
    let v: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::InvalidInput(format!("input line {n}: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::InvalidInput(format!("input line {n} is not a JSON object")))?;
    Ok(obj
        .iter()
        .map(|(k, v)| (k.clone(), v.as_str().map_or_else(|| v.to_string(), str::to_string)))
        .collect())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let aggregation: Aggregation = a.agg.parse()?;
    let catalog = catalog_with(a.tasks_catalog.as_deref())?;
    let schema = catalog.get(&a.task)?;
    let registry = registry_from(a.templates.as_deref(), &catalog)?;
    let ids = (!a.template_ids.is_empty()).then_some(a.template_ids.as_slice());
    let mode = if a.first_template { TemplateMode::First } else { TemplateMode::All };
    let templates = select_templates(&registry, &a.task, ids, a.include_negated, mode)?;
    let file = std::fs::File::open(&a.input)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", a.input.display())))?;
    let mut rows = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidInput(e.to_string()))?;
        if !line.trim().is_empty() {
            rows.push(field_map(&line, i + 1)?);
        }
    }
    let requests: Vec<ClassificationRequest> = rows
        .iter()
        .map(|f| ClassificationRequest {
            aggregation,
            include_negated: a.include_negated,
            ..ClassificationRequest::new(f, schema, templates.clone())
        })
        .collect();
    let handle = load_model(&a.model)?;
    let results = classify_batch(&requests, &handle, a.max_batch)?;
    let out = std::fs::File::create(&a.out)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", a.out.display())))?;
    let mut w = BufWriter::new(out);
    for r in &results {
        let mut v = serde_json::to_value(r)?;
        if !a.verbose {
            if let Some(o) = v.as_object_mut() {
                o.remove("per_statement");
            }
        }
        writeln!(w, "{v}").map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
    println!("{} predictions written to {}", results.len(), a.out.display());
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => toml::from_str::<BenchConfig>(&read_text(p)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
        None => BenchConfig::default(),
    };
    config.validate()?;
    let mut handle = load_model(&a.model)?;
    handle.set_memory_budget(config.memory_budget_bytes);
    let name = handle.backend_id.clone();
    let report = run_bench(&handle, &name, &config)?;
    write_bench(&report, &a.out)?;
    print!("{}", sttune::bench::render_markdown(std::slice::from_ref(&report)));
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let catalog = catalog_with(a.tasks_catalog.as_deref())?;
    let registry = registry_from(a.pack.as_deref(), &catalog)?;
    if let Some(t) = &a.task {
        catalog.get(t)?;
    }
    let mut rows = Vec::new();
    for t in registry.iter() {
        if a.task.as_ref().is_some_and(|id| &t.task_id != id) || a.lang.as_ref().is_some_and(|l| &t.language_tag != l) {
            continue;
        }
        let violations: Vec<String> = match catalog.get(&t.task_id) {
            Ok(schema) => validate_template(t, schema).iter().map(ToString::to_string).collect(),
            Err(e) => vec![e.to_string()],
        };
        rows.push((t, violations));
    }
    if a.json {
        let v: Vec<_> = rows
            .iter()
            .map(|(t, v)| serde_json::json!({ "template": t, "valid": v.is_empty(), "violations": v }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        for (t, v) in &rows {
            let status = if v.is_empty() { "ok".to_string() } else { v.join("; ") };
            let flag = if t.suspect_heading { " [suspect heading]" } else { "" };
            println!("{}\t{}\t{}\t{}\t{}{flag}", t.template_id, t.language_tag, t.polarity, status, t.pattern);
        }
        println!("{} templates", rows.len());
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let report: EvalReport = serde_json::from_str(&read_text(&a.report)?)?;
    for p in write_plots(&report, &a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_cmd(a: RunArgs, execute: bool) -> Result<()> {
    let stages = Stage::parse_list(&a.stages)?;
    let resolved = validate_config(&a.config, &stages)?;
    if !execute {
        print!("{}", resolved.to_toml());
        return Ok(());
    }
    let outcome = run(&resolved, &stages, a.exec.exec())?;
    for (stage, path) in outcome.artifacts {
        println!("{stage}: {}", path.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildData(a) => build_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::InspectTemplates(a) => inspect(a),
        Command::Plot(a) => plot(a),
        Command::Run(a) => run_cmd(a, true),
        Command::ValidateConfig(a) => run_cmd(a, false),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
