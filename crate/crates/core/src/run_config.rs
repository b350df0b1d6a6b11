//! Declarative experiment configuration chaining the pipeline stages.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{run_bench, write_bench, BenchConfig};
use crate::builder::{assemble_mixture, load_registry_for, write_dataset, ManifestCorpora, MixtureSpec};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_manifest, write_report, EvalManifest};
use crate::exec::Exec;
use crate::model::{backend_info, load_model, save_model, train, TrainConfig};
use crate::builder::read_dataset;
use crate::schema::TaskCatalog;

pub const CONFIG_COPY: &str = "run_config.toml";
pub const DATASET_FILE: &str = "statements.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    BuildData,
    Train,
    Eval,
    Bench,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::BuildData, Stage::Train, Stage::Eval, Stage::Bench];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::BuildData => "build-data",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Bench => "bench",
        }
    }

    /// Parses a comma-separated list into dependency order without repeats.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        let mut out: Vec<Stage> = s
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(Stage::from_str)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::InvalidConfig("no stages given".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainStage {
    pub backend: String,
    /// Statement dataset; the build-data output when that stage runs too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Overrides on top of the backend's preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sequence_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TrainStage {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::preset(&self.backend)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown backend `{}`", self.backend)))?;
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = self.warmup_ratio {
            c.warmup_ratio = v;
        }
        if let Some(v) = self.max_sequence_length {
            c.max_sequence_length = v;
        }
        if self.early_stop_patience.is_some() {
            c.early_stop_patience = self.early_stop_patience;
        }
        c.seed = self.seed;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalStage {
    pub manifest: PathBuf,
    /// Checkpoint to evaluate; the train output when that stage runs too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Row label in the report; the backend id when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchStage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_labels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_granularity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_budget_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BenchStage {
    pub fn resolve(&self) -> BenchConfig {
        let d = BenchConfig::default();
        BenchConfig {
            batch_sizes: self.batch_sizes.clone(),
            repeats: self.repeats.unwrap_or(d.repeats),
            warmup: self.warmup.unwrap_or(d.warmup),
            probe_tokens: self.probe_tokens.unwrap_or(d.probe_tokens),
            n_labels: self.n_labels.unwrap_or(d.n_labels),
            ceiling: self.ceiling.or(d.ceiling),
            search_granularity: self.search_granularity.unwrap_or(d.search_granularity),
            memory_budget_bytes: self.memory_budget_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Copy the resolved config into every artifact directory.
    #[serde(default = "yes")]
    pub copy_config: bool,
    /// Write SHA-256 digests of every input file next to the artifacts.
    #[serde(default = "yes")]
    pub input_digests: bool,
}

fn yes() -> bool {
    true
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            copy_config: true,
            input_digests: true,
        }
    }
}

/// One experiment. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchStage>,
}

fn default_output_root() -> PathBuf {
    PathBuf::from("artifacts")
}

/// A parsed config with every default filled in and paths made absolute
/// (relative to the config file).
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub source: PathBuf,
}

impl ResolvedRun {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.config).expect("config serializes")
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        let sub = match stage {
            Stage::BuildData => "data",
            Stage::Train => "model",
            Stage::Eval => "eval",
            Stage::Bench => "bench",
        };
        self.config.output_root.join(sub)
    }

    pub fn dataset_path(&self, stages: &[Stage]) -> Option<PathBuf> {
        if stages.contains(&Stage::BuildData) {
            return Some(self.stage_dir(Stage::BuildData).join(DATASET_FILE));
        }
        self.config.train.as_ref()?.dataset.clone()
    }

    pub fn model_dir(&self, stages: &[Stage], explicit: Option<&PathBuf>) -> Option<PathBuf> {
        if stages.contains(&Stage::Train) {
            return Some(self.stage_dir(Stage::Train));
        }
        explicit.cloned()
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Parses the config, rejecting unknown keys, and applies the global seed
/// to every stage without its own.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let mut unknown = Vec::new();
    let de = toml::Deserializer::new(text);
    let parsed: std::result::Result<RunConfig, _> =
        serde_ignored::deserialize(de, |path| unknown.push(path.to_string()));
    let mut config = match parsed {
        Ok(c) => c,
        Err(e) => {
            let mut v: Vec<String> = unknown.iter().map(|k| format!("unknown key `{k}`")).collect();
            v.push(e.to_string().trim().to_string());
            return Err(Error::ConfigViolations(v));
        }
    };
    if !unknown.is_empty() {
        return Err(Error::ConfigViolations(
            unknown.iter().map(|k| format!("unknown key `{k}`")).collect(),
        ));
    }
    absolutize(base_dir, &mut config.output_root);
    if let Some(seed) = config.seed {
        if let Some(m) = &mut config.mixture {
            m.seed.get_or_insert(seed);
        }
        if let Some(t) = &mut config.train {
            t.seed.get_or_insert(seed);
        }
        if let Some(e) = &mut config.eval {
            e.seed.get_or_insert(seed);
        }
        if let Some(b) = &mut config.bench {
            b.seed.get_or_insert(seed);
        }
    }
    if let Some(m) = &mut config.mixture {
        for p in [&mut m.pack, &mut m.translated_pack_dir, &mut m.tasks].into_iter().flatten() {
            absolutize(base_dir, p);
        }
        for e in &mut m.entries {
            if let Some(p) = &mut e.manifest {
                absolutize(base_dir, p);
            }
        }
    }
    if let Some(t) = &mut config.train {
        if let Some(p) = &mut t.dataset {
            absolutize(base_dir, p);
        }
    }
    if let Some(e) = &mut config.eval {
        absolutize(base_dir, &mut e.manifest);
        if let Some(p) = &mut e.model {
            absolutize(base_dir, p);
        }
    }
    if let Some(b) = &mut config.bench {
        if let Some(p) = &mut b.model {
            absolutize(base_dir, p);
        }
    }
    Ok(config)
}

fn check_exists(v: &mut Vec<String>, what: &str, p: &Path) {
    if !p.exists() {
        v.push(format!("{what} {} does not exist", p.display()));
    }
}

/// Parses and checks the config for the requested stages. Every problem
/// found is reported, not just the first.
pub fn validate_config(path: &Path, stages: &[Stage]) -> Result<ResolvedRun> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ConfigViolations(vec![format!("cannot read {}: {e}", path.display())]))?;
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let base_dir = std::path::absolute(parent).map_err(|e| Error::io(parent, e))?;
    let config = parse_config(&text, &base_dir)?;
    let run = ResolvedRun {
        config,
        base_dir,
        source: path.to_path_buf(),
    };
    let mut v = Vec::new();
    let c = &run.config;

    if stages.contains(&Stage::BuildData) {
        match &c.mixture {
            None => v.push("stage `build-data` needs a [mixture] block".into()),
            Some(m) => {
                if let Err(e) = m.validate() {
                    v.push(format!("mixture: {e}"));
                }
                if m.entries.is_empty() {
                    v.push("mixture lists no entries".into());
                }
                for e in &m.entries {
                    match &e.manifest {
                        Some(p) => check_exists(&mut v, &format!("manifest of `{}`", e.dataset_id), p),
                        None => v.push(format!("mixture entry `{}` has no manifest", e.dataset_id)),
                    }
                }
                for (what, p) in [("pack", &m.pack), ("translated_pack_dir", &m.translated_pack_dir), ("tasks", &m.tasks)] {
                    if let Some(p) = p {
                        check_exists(&mut v, what, p);
                    }
                }
            }
        }
    }
    if stages.contains(&Stage::Train) {
        match &c.train {
            None => v.push("stage `train` needs a [train] block".into()),
            Some(t) => {
                if let Err(e) = backend_info(&t.backend) {
                    v.push(e.to_string());
                } else if let Err(e) = t.resolve().and_then(|c| c.validate()) {
                    v.push(format!("train: {e}"));
                }
                match run.dataset_path(stages) {
                    None => v.push("stage `train` needs a dataset: run build-data too or set train.dataset".into()),
                    Some(p) if !stages.contains(&Stage::BuildData) => check_exists(&mut v, "train.dataset", &p),
                    Some(_) => {}
                }
            }
        }
    }
    if stages.contains(&Stage::Eval) {
        match &c.eval {
            None => v.push("stage `eval` needs an [eval] block".into()),
            Some(e) => {
                if e.manifest.exists() {
                    if let Err(err) = EvalManifest::load(&e.manifest).and_then(|m| m.validate()) {
                        v.push(format!("eval manifest: {err}"));
                    }
                } else {
                    check_exists(&mut v, "eval.manifest", &e.manifest);
                }
                match run.model_dir(stages, e.model.as_ref()) {
                    None => v.push("stage `eval` needs a model: run train too or set eval.model".into()),
                    Some(p) if !stages.contains(&Stage::Train) => check_exists(&mut v, "eval.model", &p),
                    Some(_) => {}
                }
            }
        }
    }
    if stages.contains(&Stage::Bench) {
        match &c.bench {
            None => v.push("stage `bench` needs a [bench] block".into()),
            Some(b) => {
                if let Err(e) = b.resolve().validate() {
                    v.push(format!("bench: {e}"));
                }
                match run.model_dir(stages, b.model.as_ref()) {
                    None => v.push("stage `bench` needs a model: run train too or set bench.model".into()),
                    Some(p) if !stages.contains(&Stage::Train) => check_exists(&mut v, "bench.model", &p),
                    Some(_) => {}
                }
            }
        }
    }
    if v.is_empty() {
        Ok(run)
    } else {
        Err(Error::ConfigViolations(v))
    }
}

/// Hex SHA-256 of a file, or of every file under a directory in path order.
pub fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut files = Vec::new();
    if path.is_dir() {
        collect_files(path, &mut files)?;
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
        if let Ok(rel) = f.strip_prefix(path) {
            h.update(rel.to_string_lossy().as_bytes());
        }
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n != CONFIG_COPY && n != "inputs.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn stamp(run: &ResolvedRun, dir: &Path, inputs: &[(&str, PathBuf)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if run.config.provenance.copy_config {
        let p = dir.join(CONFIG_COPY);
        std::fs::write(&p, run.to_toml()).map_err(|e| Error::io(&p, e))?;
    }
    if run.config.provenance.input_digests {
        let mut m = BTreeMap::new();
        for (name, path) in inputs {
            m.insert(name.to_string(), serde_json::json!({
                "path": path,
                "sha256": digest_path(path)?,
            }));
        }
        let p = dir.join("inputs.json");
        std::fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn stage_err(stage: Stage) -> impl Fn(Error) -> Error {
    move |e| Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    }
}

fn build_data(run: &ResolvedRun, exec: Exec) -> Result<PathBuf> {
    let spec = run.config.mixture.as_ref().expect("validated");
    let mut catalog = TaskCatalog::builtin();
    if let Some(p) = &spec.tasks {
        catalog.extend(TaskCatalog::load(p)?);
    }
    let registry = load_registry_for(spec, &catalog, &run.base_dir)?;
    let corpora = ManifestCorpora::new(&run.base_dir);
    let (dataset, report) = assemble_mixture(spec, &corpora, &registry, &catalog, exec)?;
    let dir = run.stage_dir(Stage::BuildData);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let out = dir.join(DATASET_FILE);
    write_dataset(&dataset, &out)?;
    let rp = dir.join("build_report.json");
    std::fs::write(&rp, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&rp, e))?;
    let mut inputs: Vec<(&str, PathBuf)> = Vec::new();
    for e in &spec.entries {
        if let Some(p) = &e.manifest {
            inputs.push((e.dataset_id.as_str(), p.clone()));
        }
    }
    for (what, p) in [("pack", &spec.pack), ("tasks", &spec.tasks)] {
        if let Some(p) = p {
            inputs.push((what, p.clone()));
        }
    }
    stamp(run, &dir, &inputs)?;
    log::info!("{} statements written to {}", dataset.len(), out.display());
    Ok(out)
}

fn train_stage(run: &ResolvedRun, dataset: &Path) -> Result<PathBuf> {
    let t = run.config.train.as_ref().expect("validated");
    let config = t.resolve()?;
    let data = read_dataset(dataset)?;
    let handle = train(&data, &config, &t.backend)?;
    let dir = run.stage_dir(Stage::Train);
    save_model(&handle, &dir)?;
    stamp(run, &dir, &[("dataset", dataset.to_path_buf())])?;
    Ok(dir)
}

fn eval_stage(run: &ResolvedRun, model: &Path, exec: Exec) -> Result<PathBuf> {
    let e = run.config.eval.as_ref().expect("validated");
    let manifest = EvalManifest::load(&e.manifest)?;
    manifest.validate()?;
    let handle = load_model(model)?;
    let results = evaluate_manifest(&manifest, &handle, exec)?;
    let name = e.name.clone().unwrap_or_else(|| handle.backend_id.clone());
    let report = aggregate(&[(name, results.clone())], &manifest.seen_languages)?;
    let dir = run.stage_dir(Stage::Eval);
    write_report(&report, &dir)?;
    let p = dir.join("task_results.json");
    std::fs::write(&p, serde_json::to_string_pretty(&results)? + "\n").map_err(|err| Error::io(&p, err))?;
    let mut inputs = vec![("model", model.to_path_buf()), ("manifest", e.manifest.clone())];
    for t in &manifest.tasks {
        inputs.push((t.task_id.as_str(), t.manifest.clone()));
    }
    stamp(run, &dir, &inputs)?;
    Ok(dir)
}

fn bench_stage(run: &ResolvedRun, model: &Path) -> Result<PathBuf> {
    let b = run.config.bench.as_ref().expect("validated");
    let config = b.resolve();
    let mut handle = load_model(model)?;
    handle.set_memory_budget(config.memory_budget_bytes);
    let report = run_bench(&handle, &handle.backend_id.clone(), &config)?;
    let dir = run.stage_dir(Stage::Bench);
    write_bench(&report, &dir)?;
    stamp(run, &dir, &[("model", model.to_path_buf())])?;
    Ok(dir)
}

/// Artifact directories produced by [`run`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub artifacts: Vec<(Stage, PathBuf)>,
}

/// Runs the stages in dependency order. The first failure stops the run.
pub fn run(resolved: &ResolvedRun, stages: &[Stage], exec: Exec) -> Result<RunOutcome> {
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let mut out = RunOutcome::default();
    let c = &resolved.config;
    for &stage in &stages {
        log::info!("stage {stage}");
        let err = stage_err(stage);
        let path = match stage {
            Stage::BuildData => build_data(resolved, exec).map_err(err)?,
            Stage::Train => {
                let data = resolved.dataset_path(&stages).expect("validated");
                train_stage(resolved, &data).map_err(err)?
            }
            Stage::Eval => {
                let explicit = c.eval.as_ref().and_then(|e| e.model.as_ref());
                let model = resolved.model_dir(&stages, explicit).expect("validated");
                eval_stage(resolved, &model, exec).map_err(err)?
            }
            Stage::Bench => {
                let explicit = c.bench.as_ref().and_then(|b| b.model.as_ref());
                let model = resolved.model_dir(&stages, explicit).expect("validated");
                bench_stage(resolved, &model).map_err(err)?
            }
        };
        out.artifacts.push((stage, path));
    }
    Ok(out)
}

/// 2 for configuration problems, 3 for anything that failed while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigViolations(_) | Error::InvalidConfig(_) | Error::InvalidSpec(_) => 2,
        _ => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    const MINIMAL: &str = r#"
seed = 7

[mixture]
per_truth_quota = 10
languages = ["en"]

[[mixture.entries]]
dataset_id = "pawsx"
task_id = "pawsx"
manifest = "pawsx.toml"
"#;

    #[test]
    fn mixture_only_is_valid_for_build_data_only() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "pawsx.toml", "");
        let p = write(dir.path(), "run.toml", MINIMAL);
        let run = validate_config(&p, &[Stage::BuildData]).unwrap();
        assert_eq!(run.config.mixture.as_ref().unwrap().seed, Some(7));
        assert_eq!(run.config.output_root, dir.path().join("artifacts"));
        let Err(Error::ConfigViolations(v)) = validate_config(&p, &[Stage::Train]) else {
            panic!("train must be rejected");
        };
        assert!(v.iter().any(|m| m.contains("[train]")), "{v:?}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "run.toml", "colour = 1\n[train]\nbackend = \"tiny-encoder\"\nepcohs = 3\n");
        let Err(Error::ConfigViolations(v)) = validate_config(&p, &[Stage::Train]) else {
            panic!("expected violations");
        };
        assert!(v.iter().any(|m| m.contains("epcohs")), "{v:?}");
        let p = write(dir.path(), "run2.toml", "colour = 1\n");
        let Err(Error::ConfigViolations(v)) = validate_config(&p, &[]) else {
            panic!("expected violations");
        };
        assert_eq!(v, vec!["unknown key `colour`".to_string()]);
    }

    #[test]
    fn global_seed_fills_every_stage() {
        let text = "seed = 7\n[mixture]\n[train]\nbackend = \"tiny-encoder\"\n[eval]\nmanifest = \"e.toml\"\n[bench]\n";
        let c = parse_config(text, Path::new("/x")).unwrap();
        assert_eq!(c.mixture.unwrap().seed, Some(7));
        assert_eq!(c.train.as_ref().unwrap().seed, Some(7));
        assert_eq!(c.train.unwrap().resolve().unwrap().seed, Some(7));
        assert_eq!(c.eval.unwrap().seed, Some(7));
        assert_eq!(c.bench.unwrap().seed, Some(7));
        let c = parse_config("seed = 7\n[train]\nbackend = \"tiny-encoder\"\nseed = 3\n", Path::new("/x")).unwrap();
        assert_eq!(c.train.unwrap().seed, Some(3));
    }

    #[test]
    fn eval_without_model_is_a_dependency_violation() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "e.toml", "");
        let p = write(dir.path(), "run.toml", "[eval]\nmanifest = \"e.toml\"\n");
        let Err(Error::ConfigViolations(v)) = validate_config(&p, &[Stage::Eval]) else {
            panic!("expected violations");
        };
        assert!(v.iter().any(|m| m.contains("needs a model")), "{v:?}");
    }

    #[test]
    fn stage_lists() {
        assert_eq!(
            Stage::parse_list("eval,build-data,train,eval").unwrap(),
            vec![Stage::BuildData, Stage::Train, Stage::Eval]
        );
        assert!(Stage::parse_list("deploy").is_err());
        assert_eq!(exit_code(&Error::ConfigViolations(vec![])), 2);
        assert_eq!(exit_code(&Error::Backend("x".into())), 3);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = parse_config(MINIMAL, Path::new("/base")).unwrap();
        let run = ResolvedRun { config: c.clone(), base_dir: "/base".into(), source: "/base/run.toml".into() };
        let back = parse_config(&run.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, c);
    }
}
