//! Static reporting over metrics CSVs: a machine-readable summary table
//! (mean ± std over seeds), per-round accuracy curves as standalone SVG
//! files, and a dropout missing-class summary. Every output is a pure
//! function of the input rows, so re-running the report reproduces the same
//! bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{read_csv, ClientId, MetricsRecord};

/// Mean and sample standard deviation (n−1 denominator; 0 when n < 2).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// The run id without its `-s<seed>` suffix: all repeats of one
/// configuration share a setting.
fn setting_of(run_id: &str) -> String {
    match run_id.rfind("-s") {
        Some(pos) if run_id[pos + 2..].chars().all(|c| c.is_ascii_digit()) => {
            run_id[..pos].to_string()
        }
        _ => run_id.to_string(),
    }
}

/// One aggregated summary line.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub setting: String,
    pub strategy: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Written artifact paths.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub summary_csv: PathBuf,
    pub summary_md: PathBuf,
    pub curves: Vec<PathBuf>,
}

/// Per-seed scalar reductions feeding the summary table.
fn per_seed_values(records: &[MetricsRecord]) -> BTreeMap<(String, String, String), Vec<f64>> {
    // Final round per (run_id, strategy): metrics recorded at the end of a
    // run live on its last round.
    let mut last_round: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in records {
        let key = (r.run_id.clone(), r.strategy.clone());
        let e = last_round.entry(key).or_insert(0);
        *e = (*e).max(r.round);
    }
    // (setting, strategy, summary-metric) -> one value per (run_id).
    let mut per_run: BTreeMap<(String, String, String), BTreeMap<String, Vec<f64>>> =
        BTreeMap::new();
    for r in records {
        if r.value.is_nan() {
            continue;
        }
        let last = last_round[&(r.run_id.clone(), r.strategy.clone())];
        if r.round != last {
            continue;
        }
        let summary_metric = match (&r.client_id, r.metric.as_str()) {
            (ClientId::Global, "accuracy") => Some("final_global_accuracy"),
            (ClientId::Client(_), "accuracy") => Some("mean_client_accuracy"),
            (ClientId::Client(_), "global_accuracy") => Some("mean_client_global_accuracy"),
            (ClientId::Client(_), "friend_accuracy") => Some("mean_friend_accuracy"),
            (ClientId::Client(_), "missing_class_accuracy") => Some("missing_class_accuracy"),
            _ => None,
        };
        let Some(metric) = summary_metric else {
            continue;
        };
        per_run
            .entry((setting_of(&r.run_id), r.strategy.clone(), metric.to_string()))
            .or_default()
            .entry(r.run_id.clone())
            .or_default()
            .push(r.value);
    }
    // Within a run, average over clients; across runs, collect per seed.
    per_run
        .into_iter()
        .map(|(key, runs)| {
            let vals = runs
                .into_values()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect();
            (key, vals)
        })
        .collect()
}

/// Aggregate rows for the summary table, deterministically ordered.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    per_seed_values(records)
        .into_iter()
        .map(|((setting, strategy, metric), values)| {
            let (mean, std) = mean_std(&values);
            SummaryRow {
                setting,
                strategy,
                metric,
                n: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

const PALETTE: [&str; 6] = [
    "#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d68910", "#16a085",
];

/// Per-round mean global accuracy per strategy, rendered as one SVG.
fn render_curves(setting: &str, records: &[MetricsRecord]) -> Option<String> {
    // (strategy, round) -> values over seeds.
    let mut series: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        if setting_of(&r.run_id) != setting
            || r.client_id != ClientId::Global
            || r.metric != "accuracy"
            || r.value.is_nan()
        {
            continue;
        }
        series
            .entry(r.strategy.clone())
            .or_default()
            .entry(r.round)
            .or_default()
            .push(r.value);
    }
    if series.is_empty() {
        return None;
    }
    let max_round = series
        .values()
        .flat_map(|m| m.keys().copied())
        .max()
        .unwrap_or(0);
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 30.0, 45.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;
    let x_of = |round: usize| ml + plot_w * round as f64 / max_round.max(1) as f64;
    let y_of = |acc: f64| mt + plot_h * (1.0 - acc);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(
        svg,
        "  <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"18\" text-anchor=\"middle\">test accuracy by round — {setting}</text>",
        w / 2.0
    );
    // Axes and horizontal grid lines at 0, 0.25, .., 1.
    let _ = writeln!(
        svg,
        "  <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>",
        mt + plot_h
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    );
    for i in 0..=4 {
        let acc = i as f64 * 0.25;
        let y = y_of(acc);
        let _ = writeln!(
            svg,
            "  <line x1=\"{ml}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#dddddd\"/>",
            ml + plot_w
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{acc:.2}</text>",
            ml - 6.0,
            y + 4.0
        );
    }
    let x_step = (max_round / 10).max(1);
    for round in (0..=max_round).step_by(x_step) {
        let x = x_of(round);
        let _ = writeln!(
            svg,
            "  <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{round}</text>",
            mt + plot_h + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">round</text>",
        ml + plot_w / 2.0,
        h - 10.0
    );
    for (i, (strategy, rounds)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = rounds
            .iter()
            .map(|(round, vals)| {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                format!("{:.2},{:.2}", x_of(*round), y_of(mean))
            })
            .collect();
        let _ = writeln!(
            svg,
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        );
        let ly = mt + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "  <line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            ml + 10.0,
            ml + 34.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\">{strategy}</text>",
            ml + 40.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from("setting,strategy,metric,n,mean,std\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.setting, r.strategy, r.metric, r.n, r.mean, r.std
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_summary_md(path: &Path, rows: &[SummaryRow], curve_files: &[PathBuf]) -> Result<()> {
    let mut out = String::from("# Experiment summary\n");
    let settings: BTreeSet<&str> = rows.iter().map(|r| r.setting.as_str()).collect();
    for setting in settings {
        let _ = writeln!(out, "\n## {setting}\n");
        out.push_str("| strategy | metric | n | mean ± std |\n|---|---|---|---|\n");
        for r in rows.iter().filter(|r| r.setting == setting) {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.4} ± {:.4} |",
                r.strategy, r.metric, r.n, r.mean, r.std
            );
        }
    }
    let dropout: Vec<&SummaryRow> = rows
        .iter()
        .filter(|r| r.metric == "missing_class_accuracy")
        .collect();
    if !dropout.is_empty() {
        out.push_str("\n## Dropout missing-class accuracy\n\n");
        out.push_str("| setting | strategy | n | mean ± std |\n|---|---|---|---|\n");
        for r in &dropout {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.4} ± {:.4} |",
                r.setting, r.strategy, r.n, r.mean, r.std
            );
        }
    }
    if !curve_files.is_empty() {
        out.push_str("\n## Curves\n\n");
        for p in curve_files {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            let _ = writeln!(out, "- ![{name}]({name})");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read, aggregate, and render all inputs into `out_dir`.
pub fn report(csvs: &[PathBuf], out_dir: &Path) -> Result<ReportPaths> {
    if csvs.is_empty() {
        return Err(Error::config("report: need at least one metrics CSV"));
    }
    let mut records = Vec::new();
    for path in csvs {
        records.extend(read_csv(path)?);
    }
    if records.is_empty() {
        return Err(Error::Schema("report inputs contain no records".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let rows = summarize(&records);
    let summary_csv = out_dir.join("summary.csv");
    write_summary_csv(&summary_csv, &rows)?;
    let settings: BTreeSet<String> = records.iter().map(|r| setting_of(&r.run_id)).collect();
    let mut curves = Vec::new();
    for setting in &settings {
        if let Some(svg) = render_curves(setting, &records) {
            let path = out_dir.join(format!("curves-{setting}.svg"));
            std::fs::write(&path, svg)?;
            curves.push(path);
        }
    }
    let summary_md = out_dir.join("summary.md");
    write_summary_md(&summary_md, &rows, &curves)?;
    Ok(ReportPaths {
        summary_csv,
        summary_md,
        curves,
    })
}
