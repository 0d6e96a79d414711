//! `report`: aggregates metric reports into a comparison table, with
//! mean ± std across seeds for reports sharing a configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use crate::eval::MetricsReport;

use super::config::RunConfig;
use super::{configure_threads, CliError, Common};

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Metric report JSON files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Aggregated JSON output path (stdout table is always printed).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct MeanStd {
    mean: f64,
    std: f64,
    n: usize,
}

#[derive(Debug, Serialize)]
struct GroupSummary {
    task: String,
    protocol: String,
    objective: String,
    label_fraction: String,
    seeds: usize,
    metrics: BTreeMap<String, MeanStd>,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    version: u32,
    groups: Vec<GroupSummary>,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    };
    MeanStd { mean, std, n }
}

fn aggregate(reports: &[MetricsReport]) -> Aggregate {
    // One group per (task, protocol, objective, label fraction); the
    // reports inside differ only by seed.
    let mut grouped: BTreeMap<(String, String, String, String), Vec<&MetricsReport>> =
        BTreeMap::new();
    for report in reports {
        let objective = report
            .config
            .get("pretrain.objective")
            .cloned()
            .unwrap_or_else(|| "-".into());
        let fraction = report
            .config
            .get("eval.label_fraction")
            .cloned()
            .unwrap_or_else(|| "-".into());
        grouped
            .entry((
                report.task.clone(),
                report.protocol.clone(),
                objective,
                fraction,
            ))
            .or_default()
            .push(report);
    }

    let groups = grouped
        .into_iter()
        .map(|((task, protocol, objective, label_fraction), members)| {
            let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for report in &members {
                for (name, value) in &report.metrics {
                    series.entry(name.clone()).or_default().push(*value);
                }
            }
            GroupSummary {
                task,
                protocol,
                objective,
                label_fraction,
                seeds: members.len(),
                metrics: series
                    .into_iter()
                    .map(|(name, values)| (name, mean_std(&values)))
                    .collect(),
            }
        })
        .collect();
    Aggregate {
        version: crate::eval::REPORT_VERSION,
        groups,
    }
}

fn render(aggregate: &Aggregate) -> String {
    let mut out = String::new();
    let mut current_task: Option<&str> = None;
    for group in &aggregate.groups {
        if current_task != Some(group.task.as_str()) {
            if current_task.is_some() {
                out.push('\n');
            }
            out.push_str(&format!("task {}\n", group.task));
            out.push_str(&format!(
                "  {:<10} {:<10} {:<9} {:>5}  {:<24} {:>10} {:>10}\n",
                "protocol", "objective", "fraction", "seeds", "metric", "mean", "std"
            ));
            current_task = Some(&group.task);
        }
        for (name, stat) in &group.metrics {
            out.push_str(&format!(
                "  {:<10} {:<10} {:<9} {:>5}  {:<24} {:>10.4} {:>10.4}\n",
                group.protocol,
                group.objective,
                group.label_fraction,
                group.seeds,
                name,
                stat.mean,
                stat.std
            ));
        }
    }
    out
}

pub fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    configure_threads(args.common.threads)?;
    RunConfig::from_file(args.common.config.as_deref())?.reject_unknown()?;

    let reports = args
        .reports
        .iter()
        .map(|path| MetricsReport::load(path).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = aggregate(&reports);
    print!("{}", render(&aggregate));
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&aggregate).expect("aggregate serializes");
        std::fs::write(path, json).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        println!("aggregate written to {}", path.display());
    }
    Ok(())
}
