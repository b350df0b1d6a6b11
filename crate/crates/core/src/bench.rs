//! Inference throughput: largest batch that fits and mean time per batch.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::StatementScorer;

/// Upper bound on the search when no ceiling is configured.
pub const UNBOUNDED_CEILING: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Explicit sizes to time. Empty means doubling from 1 up to the max batch.
    pub batch_sizes: Vec<usize>,
    pub repeats: usize,
    pub warmup: usize,
    /// Tokens in the synthetic probe statement.
    pub probe_tokens: usize,
    pub n_labels: usize,
    /// Largest batch size the search may try.
    pub ceiling: Option<usize>,
    pub search_granularity: usize,
    /// Simulated device memory for backends that enforce a budget.
    pub memory_budget_bytes: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_sizes: Vec::new(),
            repeats: 20,
            warmup: 3,
            probe_tokens: 64,
            n_labels: 2,
            ceiling: None,
            search_granularity: 1,
            memory_budget_bytes: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.n_labels == 0 {
            return bad("n_labels must be at least 1");
        }
        if self.probe_tokens == 0 {
            return bad("probe_tokens must be at least 1");
        }
        if self.search_granularity == 0 {
            return bad("search_granularity must be at least 1");
        }
        if self.ceiling == Some(0) {
            return bad("ceiling must be at least 1");
        }
        if self.batch_sizes.first() == Some(&0) || self.batch_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("batch_sizes must be positive and strictly increasing");
        }
        Ok(())
    }

    /// Sizes to time given the measured max batch.
    pub fn schedule(&self, max_batch: usize) -> Vec<usize> {
        if !self.batch_sizes.is_empty() {
            return self.batch_sizes.clone();
        }
        let mut out = Vec::new();
        let mut m = 1;
        while m < max_batch {
            out.push(m);
            m *= 2;
        }
        out.push(max_batch);
        out
    }
}

/// Fixed-length content-independent statement: one token repeated.
pub fn probe_statement(tokens: usize) -> String {
    vec!["probe"; tokens].join(" ")
}

static BENCH_ACTIVE: AtomicBool = AtomicBool::new(false);

/// Held while a benchmark owns the process.
pub struct BenchGuard(());

impl BenchGuard {
    pub fn acquire() -> Result<Self> {
        if exec::in_flight() > 0 {
            return Err(Error::Environment("parallel work is running in this process".into()));
        }
        if BENCH_ACTIVE.swap(true, Ordering::SeqCst) {
            return Err(Error::Environment("another benchmark is running in this process".into()));
        }
        Ok(BenchGuard(()))
    }
}

impl Drop for BenchGuard {
    fn drop(&mut self) {
        BENCH_ACTIVE.store(false, Ordering::SeqCst);
    }
}

fn check_quiet() -> Result<()> {
    if exec::in_flight() > 0 {
        return Err(Error::Environment(
            "parallel work started during a timed region; run invalidated".into(),
        ));
    }
    Ok(())
}

/// `Ok(false)` on a memory failure, errors otherwise.
fn fits(scorer: &dyn StatementScorer, probe: &str, m: usize) -> Result<bool> {
    let batch = vec![probe.to_string(); m];
    for _ in 0..2 {
        match scorer.score(&batch) {
            Ok(_) => {}
            Err(Error::OutOfMemory { .. }) => return Ok(false),
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Doubles until a memory failure or the ceiling, then binary searches. The
/// returned size ran twice in a row; anything `granularity` larger failed or
/// passes the ceiling.
pub fn find_max_batch(
    scorer: &dyn StatementScorer,
    probe: &str,
    ceiling: Option<usize>,
    granularity: usize,
) -> Result<usize> {
    let ceiling = ceiling.unwrap_or(UNBOUNDED_CEILING).max(1);
    let granularity = granularity.max(1);
    if !fits(scorer, probe, 1)? {
        return Err(Error::Environment(format!(
            "{} cannot score a single probe statement",
            scorer.describe()
        )));
    }
    let mut lo = 1;
    let mut hi = None;
    while lo < ceiling {
        let m = (lo * 2).min(ceiling);
        if fits(scorer, probe, m)? {
            lo = m;
        } else {
            hi = Some(m);
            break;
        }
    }
    let Some(mut hi) = hi else { return Ok(lo) };
    while hi - lo > granularity {
        let mid = lo + (hi - lo) / 2;
        if fits(scorer, probe, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    log::info!("max batch {lo} (first failure at {hi})");
    Ok(lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub batch_size: usize,
    /// Raw wall-clock seconds per timed batch, warmup excluded.
    pub seconds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Timing {
    pub fn from_raw(batch_size: usize, seconds: Vec<f64>) -> Self {
        let n = seconds.len() as f64;
        let mean = seconds.iter().sum::<f64>() / n;
        let std = if seconds.len() < 2 {
            0.0
        } else {
            (seconds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt()
        };
        Timing { batch_size, seconds, mean, std }
    }

    pub fn statements_per_second(&self) -> f64 {
        self.batch_size as f64 / self.mean
    }
}

/// Times each size after discarding warmup batches. Sizes above `max_batch`
/// are skipped with a warning.
pub fn time_batches(
    scorer: &dyn StatementScorer,
    probe: &str,
    sizes: &[usize],
    max_batch: usize,
    config: &BenchConfig,
) -> Result<(Vec<Timing>, Vec<String>)> {
    let mut timings = Vec::new();
    let mut warnings = Vec::new();
    for &m in sizes {
        if m > max_batch {
            let w = format!("batch size {m} exceeds max batch {max_batch}; skipped");
            log::warn!("{w}");
            warnings.push(w);
            continue;
        }
        let batch = vec![probe.to_string(); m];
        for _ in 0..config.warmup {
            scorer.score(&batch)?;
        }
        scorer.synchronize()?;
        let mut seconds = Vec::with_capacity(config.repeats);
        for _ in 0..config.repeats {
            check_quiet()?;
            scorer.synchronize()?;
            let t0 = Instant::now();
            scorer.score(&batch)?;
            scorer.synchronize()?;
            seconds.push(t0.elapsed().as_secs_f64());
            check_quiet()?;
        }
        timings.push(Timing::from_raw(m, seconds));
    }
    Ok((timings, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub device: String,
    pub config: BenchConfig,
    pub timings: Vec<Timing>,
    pub max_batch: usize,
    pub mean_seconds_at_max: f64,
    /// `instances_per_second * n_labels`.
    pub statements_per_second: f64,
    pub instances_per_second: f64,
    pub n_labels: usize,
    pub warnings: Vec<String>,
}

/// Builds the report from raw timings. Throughput is taken at `max_batch`
/// when it was timed, else at the largest timed size.
pub fn throughput_report(
    model: &str,
    device: &str,
    config: &BenchConfig,
    timings: Vec<Timing>,
    max_batch: usize,
    n_labels: usize,
    mut warnings: Vec<String>,
) -> Result<BenchReport> {
    if n_labels == 0 {
        return Err(Error::InvalidConfig("n_labels must be at least 1".into()));
    }
    let at = timings
        .iter()
        .find(|t| t.batch_size == max_batch)
        .or_else(|| timings.iter().max_by_key(|t| t.batch_size))
        .ok_or_else(|| Error::InvalidInput("no timings to report".into()))?;
    let instances_per_second = at.batch_size as f64 / at.mean / n_labels as f64;
    let mean_seconds_at_max = at.mean;
    for w in timings.windows(2) {
        if w[1].batch_size == 2 * w[0].batch_size
            && w[1].statements_per_second() < 0.8 * w[0].statements_per_second()
        {
            warnings.push(format!(
                "throughput dropped from {:.1} to {:.1} statements/s between batch {} and {}",
                w[0].statements_per_second(),
                w[1].statements_per_second(),
                w[0].batch_size,
                w[1].batch_size
            ));
        }
    }
    Ok(BenchReport {
        model: model.to_string(),
        device: device.to_string(),
        config: config.clone(),
        timings,
        max_batch,
        mean_seconds_at_max,
        statements_per_second: instances_per_second * n_labels as f64,
        instances_per_second,
        n_labels,
        warnings,
    })
}

/// Full run: exclusive guard, max-batch search, timing, report.
pub fn run_bench(scorer: &dyn StatementScorer, model: &str, config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let _guard = BenchGuard::acquire()?;
    let probe = probe_statement(config.probe_tokens);
    let max_batch = find_max_batch(scorer, &probe, config.ceiling, config.search_granularity)?;
    let sizes = config.schedule(max_batch);
    let (timings, warnings) = time_batches(scorer, &probe, &sizes, max_batch, config)?;
    throughput_report(model, &scorer.describe(), config, timings, max_batch, config.n_labels, warnings)
}

/// Two-column table: max batch and mean seconds per batch at that size.
pub fn render_markdown(reports: &[BenchReport]) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "| Model | Max batch size | Mean time per batch (s) |");
    let _ = writeln!(md, "|---|---:|---:|");
    for r in reports {
        let _ = writeln!(md, "| {} | {} | {:.4} |", r.model, r.max_batch, r.mean_seconds_at_max);
    }
    for r in reports {
        let _ = writeln!(
            md,
            "\n{} on {}: {:.1} statements/s, {:.1} instances/s at n = {} ({} repeats after {} warmup, {}-token probe)\n",
            r.model,
            r.device,
            r.statements_per_second,
            r.instances_per_second,
            r.n_labels,
            r.config.repeats,
            r.config.warmup,
            r.config.probe_tokens
        );
        let _ = writeln!(md, "| Batch | Mean (s) | Std (s) | Statements/s |");
        let _ = writeln!(md, "|---:|---:|---:|---:|");
        for t in &r.timings {
            let _ = writeln!(
                md,
                "| {} | {:.4} | {:.4} | {:.1} |",
                t.batch_size,
                t.mean,
                t.std,
                t.statements_per_second()
            );
        }
        for w in &r.warnings {
            let _ = writeln!(md, "\nWarning: {w}");
        }
    }
    md
}

/// Writes `bench.json`, `bench.md` and `timings.csv`.
pub fn write_bench(report: &BenchReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("bench.json");
    std::fs::write(&json, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(&json, e))?;
    let md = dir.join("bench.md");
    std::fs::write(&md, render_markdown(std::slice::from_ref(report))).map_err(|e| Error::io(&md, e))?;
    let path = dir.join("timings.csv");
    let csv_err = |e: csv::Error| Error::InvalidInput(e.to_string());
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["batch_size", "repeat", "seconds"]).map_err(csv_err)?;
    for t in &report.timings {
        for (i, s) in t.seconds.iter().enumerate() {
            w.write_record([t.batch_size.to_string(), i.to_string(), s.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}
