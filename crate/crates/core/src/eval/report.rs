use std::fmt::Write as _;
use std::path::Path;

use super::aggregate::EvalReport;
use crate::error::{Error, Result};

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn pct_spread(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", mean * 100.0, std * 100.0)
}

/// Markdown with one row per run and one column per task, followed by
/// pooled, seen/unseen and per-language breakdowns.
pub fn render_markdown(report: &EvalReport) -> String {
    let tasks = report.task_ids();
    let mut md = String::new();
    let header = |md: &mut String, first: &str| {
        let _ = writeln!(md, "| {first} | {} | Geo. mean |", tasks.join(" | "));
        let _ = writeln!(md, "|---|{}---:|", "---:|".repeat(tasks.len()));
    };
    let cell = |run: &super::RunSummary, task: &str, f: &dyn Fn(&super::TaskSummary) -> Option<f64>| {
        run.tasks
            .iter()
            .find(|t| t.task_id == task)
            .and_then(f)
            .map_or("–".to_string(), pct)
    };

    let _ = writeln!(md, "## Accuracy (%), mean over languages\n");
    header(&mut md, "Model");
    for run in &report.runs {
        let cells: Vec<String> = tasks.iter().map(|t| cell(run, t, &|s| Some(s.macro_mean))).collect();
        let flag = if run.geometric_mean_zero { " (zero task)" } else { "" };
        let _ = writeln!(md, "| {} | {} | {}{flag} |", run.name, cells.join(" | "), pct(run.geometric_mean));
    }
    if report.runs.len() > 1 {
        let cells: Vec<String> = tasks
            .iter()
            .map(|t| report.task_spread.get(t).map_or("–".into(), |s| pct_spread(s.mean, s.std)))
            .collect();
        let g = &report.geometric_mean_spread;
        let _ = writeln!(
            md,
            "| mean ± std ({} runs) | {} | {} |",
            report.runs.len(),
            cells.join(" | "),
            pct_spread(g.mean, g.std)
        );
    }
    if let Some(first) = report.runs.first() {
        let cells: Vec<String> = tasks.iter().map(|t| cell(first, t, &|s| Some(s.random_baseline))).collect();
        let _ = writeln!(md, "| Random | {} | – |", cells.join(" | "));
    }

    let _ = writeln!(md, "\n## Accuracy (%), pooled over examples\n");
    let _ = writeln!(md, "| Model | {} |", tasks.join(" | "));
    let _ = writeln!(md, "|---|{}", "---:|".repeat(tasks.len()));
    for run in &report.runs {
        let cells: Vec<String> = tasks.iter().map(|t| cell(run, t, &|s| Some(s.micro_mean))).collect();
        let _ = writeln!(md, "| {} | {} |", run.name, cells.join(" | "));
    }

    let _ = writeln!(md, "\n## Seen / unseen languages (%)\n");
    let _ = writeln!(md, "Seen: {}\n", if report.seen_languages.is_empty() { "none".to_string() } else { report.seen_languages.join(", ") });
    let _ = writeln!(md, "| Model | Task | Seen | Unseen |");
    let _ = writeln!(md, "|---|---|---:|---:|");
    for run in &report.runs {
        for t in &run.tasks {
            let f = |x: Option<f64>| x.map_or("–".to_string(), pct);
            let _ = writeln!(md, "| {} | {} | {} | {} |", run.name, t.task_id, f(t.seen_mean), f(t.unseen_mean));
        }
    }

    for task in &tasks {
        let langs: Vec<String> = report
            .cell_spread
            .get(task)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default();
        let _ = writeln!(md, "\n## {task} per language (%)\n");
        let _ = writeln!(md, "| Model | {} |", langs.join(" | "));
        let _ = writeln!(md, "|---|{}", "---:|".repeat(langs.len()));
        for run in &report.runs {
            let t = run.tasks.iter().find(|t| &t.task_id == task);
            let cells: Vec<String> = langs
                .iter()
                .map(|l| {
                    t.and_then(|t| t.per_language.get(l))
                        .map_or("–".to_string(), |c| pct(c.accuracy))
                })
                .collect();
            let _ = writeln!(md, "| {} | {} |", run.name, cells.join(" | "));
        }
        if let Some(t) = report.runs.iter().find_map(|r| r.tasks.iter().find(|t| &t.task_id == task)) {
            let _ = writeln!(
                md,
                "\nTemplates ({:?}, {:?}): {}",
                t.template_mode,
                t.aggregation,
                t.template_ids.join(", ")
            );
        }
    }
    md
}

/// One CSV per task: `run,language,accuracy,seen`.
pub fn write_bar_data(report: &EvalReport, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for task in report.task_ids() {
        let path = dir.join(format!("bars_{task}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let csv_err = |e: csv::Error| Error::InvalidInput(e.to_string());
        w.write_record(["run", "language", "accuracy", "seen"]).map_err(csv_err)?;
        for run in &report.runs {
            if let Some(t) = run.tasks.iter().find(|t| t.task_id == task) {
                for (lang, c) in &t.per_language {
                    let seen = report.seen_languages.contains(lang);
                    w.write_record([run.name.as_str(), lang, &c.accuracy.to_string(), if seen { "true" } else { "false" }])
                        .map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes `report.json`, `report.md` and the per-task bar data.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    std::fs::write(&json, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(&json, e))?;
    let md = dir.join("report.md");
    std::fs::write(&md, render_markdown(report)).map_err(|e| Error::io(&md, e))?;
    write_bar_data(report, dir)?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bar chart, one group per label and one bar per series.
pub fn render_svg_bars(title: &str, labels: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];
    let (w_bar, gap, left, top, height) = (14.0, 12.0, 50.0, 40.0, 220.0);
    let group_w = w_bar * series.len().max(1) as f64 + gap;
    let width = left + group_w * labels.len() as f64 + 20.0 + 120.0;
    let total_h = top + height + 60.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{total_h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title));
    for tick in 0..=4 {
        let v = tick as f64 * 25.0;
        let y = top + height * (1.0 - v / 100.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.0}</text>"##,
            left + group_w * labels.len() as f64,
            left - 4.0,
            y + 4.0
        );
    }
    for (gi, label) in labels.iter().enumerate() {
        let x0 = left + gi as f64 * group_w + gap / 2.0;
        for (si, (_, values)) in series.iter().enumerate() {
            if let Some(Some(v)) = values.get(gi) {
                let h = height * v.clamp(0.0, 1.0);
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.1}" y="{:.1}" width="{w_bar}" height="{h:.1}" fill="{}"><title>{} {}: {:.2}</title></rect>"#,
                    x0 + si as f64 * w_bar,
                    top + height - h,
                    PALETTE[si % PALETTE.len()],
                    escape(&series[si].0),
                    escape(label),
                    v * 100.0
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + w_bar * series.len() as f64 / 2.0,
            top + height + 16.0,
            escape(label)
        );
    }
    let lx = left + group_w * labels.len() as f64 + 20.0;
    for (si, (name, _)) in series.iter().enumerate() {
        let y = top + 14.0 * si as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.1}" y="{y:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            PALETTE[si % PALETTE.len()],
            lx + 14.0,
            y + 9.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-task per-language bar charts plus a geometric-mean chart.
pub fn write_plots(report: &EvalReport, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for task in report.task_ids() {
        let langs: Vec<String> = report
            .cell_spread
            .get(&task)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default();
        let labels: Vec<String> = langs
            .iter()
            .map(|l| if report.seen_languages.contains(l) { format!("{l}*") } else { l.clone() })
            .collect();
        let series: Vec<(String, Vec<Option<f64>>)> = report
            .runs
            .iter()
            .map(|r| {
                let t = r.tasks.iter().find(|t| t.task_id == task);
                let v = langs
                    .iter()
                    .map(|l| t.and_then(|t| t.per_language.get(l)).map(|c| c.accuracy))
                    .collect();
                (r.name.clone(), v)
            })
            .collect();
        let path = dir.join(format!("{task}.svg"));
        let svg = render_svg_bars(&format!("{task} accuracy by language (* seen)"), &labels, &series);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        out.push(path);
    }
    let labels: Vec<String> = report.runs.iter().map(|r| r.name.clone()).collect();
    let series = vec![(
        "geometric mean".to_string(),
        report.runs.iter().map(|r| Some(r.geometric_mean)).collect(),
    )];
    let path = dir.join("geometric_mean.svg");
    std::fs::write(&path, render_svg_bars("Geometric mean accuracy", &labels, &series))
        .map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::aggregate;
    use crate::eval::{LanguageResult, TaskResult, TemplateMode};

    fn report() -> EvalReport {
        let mk = |id: &str, c: usize| TaskResult {
            task_id: id.into(),
            per_language: [("en".to_string(), LanguageResult { correct: c, total: 100 }), ("sw".to_string(), LanguageResult { correct: 50, total: 100 })]
                .into_iter()
                .collect(),
            template_ids: vec!["a".into()],
            template_mode: TemplateMode::All,
            aggregation: crate::classifier::Aggregation::Mean,
            random_baseline: 0.5,
        };
        aggregate(
            &[
                ("seed1".into(), vec![mk("xcopa", 70), mk("xnli", 40)]),
                ("seed2".into(), vec![mk("xcopa", 72), mk("xnli", 44)]),
            ],
            &["en".into()],
        )
        .unwrap()
    }

    #[test]
    fn markdown_has_table_shape() {
        let md = render_markdown(&report());
        assert!(md.contains("| Model | xcopa | xnli | Geo. mean |"));
        assert!(md.contains("| seed1 | 60.00 | 45.00 |"));
        assert!(md.contains("mean ± std (2 runs)"));
        assert!(md.contains("| Random | 50.00 | 50.00 | – |"));
    }

    #[test]
    fn files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        write_report(&r, dir.path()).unwrap();
        let back: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = std::fs::read_to_string(dir.path().join("bars_xcopa.csv")).unwrap();
        assert!(csv.starts_with("run,language,accuracy,seen\nseed1,en,0.7,true\n"));
        let plots = write_plots(&r, &dir.path().join("figs")).unwrap();
        assert_eq!(plots.len(), 3);
        let svg = std::fs::read_to_string(&plots[0]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("en*"));
    }
}
