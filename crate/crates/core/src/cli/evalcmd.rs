//! `eval` (linear / semi / impute protocols) and `impute` (single-stay
//! queries in raw units).

use std::path::PathBuf;

use clap::Args;

use crate::data::{apply_normalizer, ingest, load_feature_table};
use crate::eval::{
    impute, impute_batch, linear_eval, semi_supervised, EvalPlan, MetricsReport, Task,
    BACKBONE_LR_GRID, HEAD_LR_GRID,
};
use crate::model::load_checkpoint;

use super::config::RunConfig;
use super::corpus::{emit_report, load_corpus};
use super::{configure_threads, CliError, Common};

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Pretrained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Feature table to standardize against; defaults to the corpus's
    /// own. Pass the pretraining corpus's table to evaluate data with a
    /// different feature set in the checkpoint's feature space.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Protocol: linear, semi, impute.
    #[arg(long)]
    protocol: String,
    /// Task: mortality, phenotype.
    #[arg(long, default_value = "mortality")]
    task: String,
    /// Fraction of training labels available to semi-supervised runs.
    #[arg(long)]
    label_fraction: Option<f64>,
    /// Sweep the head/backbone learning-rate grids (semi protocol),
    /// keeping the configuration with the lowest validation loss.
    #[arg(long)]
    grid: bool,
    /// Report output path.
    #[arg(long)]
    out: PathBuf,
}

fn read_plan(config: &mut RunConfig) -> Result<EvalPlan, CliError> {
    let d = EvalPlan::default();
    Ok(EvalPlan {
        label_fraction: config.f64_or("eval.label_fraction", d.label_fraction)?,
        head_lr: config.f64_or("eval.head_lr", d.head_lr)?,
        backbone_lr: config.f64_or("eval.backbone_lr", d.backbone_lr)?,
        patience: config.usize_or("eval.patience", d.patience)?,
        max_epochs: config.usize_or("eval.max_epochs", d.max_epochs)?,
        batch_size: config.usize_or("eval.batch_size", d.batch_size)?,
        probe_lr: config.f64_or("eval.probe_lr", d.probe_lr)?,
        probe_epochs: config.usize_or("eval.probe_epochs", d.probe_epochs)?,
    })
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    configure_threads(args.common.threads)?;
    let mut config = RunConfig::from_file(args.common.config.as_deref())?;
    if let Some(v) = args.label_fraction {
        config.set("eval.label_fraction", v);
    }
    let plan = read_plan(&mut config)?;
    let impute_rate = config.f64_or("impute.rate", 0.10)?;
    config.reject_unknown()?;

    let corpus = load_corpus(&args.data, args.features.as_deref())?;
    let (params, objective) = load_checkpoint(&args.checkpoint, Some(corpus.vocab.len()))?;
    let seed = args.common.seed;

    if args.grid && args.protocol != "semi" {
        eprintln!("warning: --grid only applies to the semi protocol; ignored");
    }

    let mut report = match args.protocol.as_str() {
        "linear" => {
            let task = Task::parse(&args.task)?;
            linear_eval(
                &params,
                &corpus.train,
                &corpus.val,
                &corpus.test,
                task,
                &plan,
                seed,
            )?
        }
        "semi" => {
            let task = Task::parse(&args.task)?;
            if args.grid {
                let mut best: Option<MetricsReport> = None;
                for &head_lr in &HEAD_LR_GRID {
                    for &backbone_lr in &BACKBONE_LR_GRID {
                        let cell = EvalPlan {
                            head_lr,
                            backbone_lr,
                            ..plan
                        };
                        let report = semi_supervised(
                            &params,
                            &corpus.train,
                            &corpus.val,
                            &corpus.test,
                            task,
                            &cell,
                            seed,
                        )?;
                        let bce = report.metrics.get("val_bce").copied().unwrap_or(f64::MAX);
                        eprintln!(
                            "grid head_lr {head_lr:.0e} backbone_lr {backbone_lr:.0e}: val loss {bce:.4}"
                        );
                        let better = best
                            .as_ref()
                            .and_then(|b| b.metrics.get("val_bce").copied())
                            .is_none_or(|b| bce < b);
                        if better {
                            best = Some(report);
                        }
                    }
                }
                best.expect("non-empty grid")
            } else {
                semi_supervised(
                    &params,
                    &corpus.train,
                    &corpus.val,
                    &corpus.test,
                    task,
                    &plan,
                    seed,
                )?
            }
        }
        "impute" => {
            let summary = impute_batch(&params, &corpus.test, impute_rate, seed)?;
            let mut report = MetricsReport::new("imputation", "impute", seed);
            report.metrics.insert("mse".into(), summary.mse);
            report.metrics.insert("mad".into(), summary.mad);
            report
                .metrics
                .insert("count".into(), summary.count as f64);
            report
                .config
                .insert("impute.rate".into(), impute_rate.to_string());
            report
        }
        other => {
            return Err(CliError::Config(format!(
                "--protocol must be linear, semi, or impute, got {other:?}"
            )))
        }
    };

    report
        .config
        .insert("pretrain.objective".into(), objective);
    report
        .config
        .insert("eval.protocol".into(), args.protocol.clone());
    for (key, value) in config.echo() {
        report
            .config
            .entry(key.clone())
            .or_insert_with(|| value.clone());
    }
    emit_report(&report, &args.out)
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    common: Common,
    /// Pretrained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature table of the corpus the checkpoint was trained on.
    #[arg(long)]
    features: PathBuf,
    /// Event JSONL holding the stay to query.
    #[arg(long)]
    stay: PathBuf,
    /// Stay id to select when the file holds several.
    #[arg(long)]
    stay_id: Option<String>,
    /// Query "time,feature" (hours since stay start), repeatable.
    #[arg(long = "query", required = true)]
    queries: Vec<String>,
    /// JSON output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cmd_impute(args: ImputeArgs) -> Result<(), CliError> {
    configure_threads(args.common.threads)?;
    RunConfig::from_file(args.common.config.as_deref())?.reject_unknown()?;

    let queries: Vec<(f64, String)> = args
        .queries
        .iter()
        .map(|q| {
            q.split_once(',')
                .and_then(|(t, name)| {
                    let t: f64 = t.trim().parse().ok()?;
                    Some((t, name.trim().to_string()))
                })
                .ok_or_else(|| {
                    CliError::Config(format!("query {q:?}: expected \"time,feature\""))
                })
        })
        .collect::<Result<_, _>>()?;

    let (vocab, norm) = load_feature_table(&args.features)?;
    let (params, _) = load_checkpoint(&args.checkpoint, Some(vocab.len()))?;

    let outcome = ingest(&args.stay, Some(&vocab))?;
    let (ds, _) = apply_normalizer(&outcome.dataset, &outcome.vocabulary, &norm, &vocab);
    let stay = match &args.stay_id {
        Some(id) => ds
            .stays
            .iter()
            .find(|s| &s.stay_id == id)
            .ok_or_else(|| CliError::Config(format!("stay {id:?} not found")))?,
        None => match ds.stays.as_slice() {
            [only] => only,
            [] => return Err(CliError::Config("stay file holds no usable stays".into())),
            many => {
                return Err(CliError::Config(format!(
                    "stay file holds {} stays; pick one with --stay-id",
                    many.len()
                )))
            }
        },
    };

    let standardized = impute(&params, &vocab, stay, &queries)?;
    let rows: Vec<serde_json::Value> = queries
        .iter()
        .zip(&standardized)
        .map(|((t, name), z)| {
            // Reports in the feature's original units.
            let stats = &norm.stats[vocab.index_of(name).expect("query feature checked")];
            serde_json::json!({
                "stay_id": stay.stay_id,
                "t": t,
                "feature": name,
                "value": z * stats.std + stats.mean,
            })
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).expect("imputation rows serialize");
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?,
        None => println!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use crate::cli::testutil::{pretrain_ckpt, synth_corpus};
    use crate::cli::run;
    use crate::eval::MetricsReport;

    #[test]
    fn linear_protocol_writes_a_report_with_the_objective_echoed() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(dir.path(), 24, 11);
        let ckpt = pretrain_ckpt(dir.path(), &corpus, "masked", 11);
        let out = dir.path().join("linear.json");
        let conf = dir.path().join("eval.conf");
        std::fs::write(&conf, "eval.probe_epochs=40\n").unwrap();
        let code = run([
            "evseq",
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            corpus.to_str().unwrap(),
            "--protocol",
            "linear",
            "--task",
            "mortality",
            "--config",
            conf.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "11",
        ]);
        assert_eq!(code, 0);
        let report = MetricsReport::load(&out).unwrap();
        assert!(report.metrics.contains_key("auc_roc"));
        assert_eq!(report.config["pretrain.objective"], "masked");
        assert_eq!(report.config["eval.protocol"], "linear");
    }

    #[test]
    fn impute_protocol_emits_mse_and_mad() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(dir.path(), 24, 12);
        let ckpt = pretrain_ckpt(dir.path(), &corpus, "masked", 12);
        let out = dir.path().join("impute.json");
        let code = run([
            "evseq",
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            corpus.to_str().unwrap(),
            "--protocol",
            "impute",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "12",
        ]);
        assert_eq!(code, 0);
        let report = MetricsReport::load(&out).unwrap();
        assert!(report.metrics.contains_key("mse"));
        assert!(report.metrics.contains_key("mad"));
        assert_eq!(report.protocol, "impute");
    }

    #[test]
    fn semi_protocol_is_metric_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(dir.path(), 24, 13);
        let ckpt = pretrain_ckpt(dir.path(), &corpus, "masked", 13);
        let conf = dir.path().join("eval.conf");
        std::fs::write(&conf, "eval.max_epochs=2\neval.batch_size=8\n").unwrap();
        let reports: Vec<MetricsReport> = (0..2)
            .map(|i| {
                let out = dir.path().join(format!("semi-{i}.json"));
                let code = run([
                    "evseq",
                    "eval",
                    "--checkpoint",
                    ckpt.to_str().unwrap(),
                    "--data",
                    corpus.to_str().unwrap(),
                    "--protocol",
                    "semi",
                    "--label-fraction",
                    "0.8",
                    "--config",
                    conf.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                    "--seed",
                    "13",
                ]);
                assert_eq!(code, 0);
                MetricsReport::load(&out).unwrap()
            })
            .collect();
        assert_eq!(reports[0].metrics, reports[1].metrics);
        assert_eq!(reports[0].config["eval.label_fraction"], "0.8");
    }

    #[test]
    fn unknown_protocol_exits_with_validation_code() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(dir.path(), 24, 14);
        let ckpt = pretrain_ckpt(dir.path(), &corpus, "masked", 14);
        let code = run([
            "evseq",
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            corpus.to_str().unwrap(),
            "--protocol",
            "transfer",
            "--out",
            dir.path().join("x.json").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn single_stay_queries_return_raw_unit_values() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(dir.path(), 24, 15);
        let ckpt = pretrain_ckpt(dir.path(), &corpus, "masked", 15);
        // One stay from the corpus, re-written as its own file.
        let first_line = std::fs::read_to_string(corpus.join("test.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        let stay_file = dir.path().join("stay.jsonl");
        std::fs::write(&stay_file, format!("{first_line}\n")).unwrap();
        let out = dir.path().join("queries.json");
        let code = run([
            "evseq",
            "impute",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--features",
            corpus.join("features.json").to_str().unwrap(),
            "--stay",
            stay_file.to_str().unwrap(),
            "--query",
            "4.0,f00",
            "--query",
            "6.5,f03",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let rows: Vec<serde_json::Value> =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["feature"], "f00");
        assert!(rows[0]["value"].as_f64().unwrap().is_finite());
    }

    #[test]
    fn unknown_query_feature_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(dir.path(), 24, 16);
        let ckpt = pretrain_ckpt(dir.path(), &corpus, "masked", 16);
        let first_line = std::fs::read_to_string(corpus.join("test.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        let stay_file = dir.path().join("stay.jsonl");
        std::fs::write(&stay_file, format!("{first_line}\n")).unwrap();
        let code = run([
            "evseq",
            "impute",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--features",
            corpus.join("features.json").to_str().unwrap(),
            "--stay",
            stay_file.to_str().unwrap(),
            "--query",
            "4.0,lactate",
        ]);
        assert_eq!(code, 1);
    }
}
