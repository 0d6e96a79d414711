//! `pretrain`: objective selection, config assembly with mismatch
//! warnings, the epoch log, and improvement-gated checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;

use crate::eval::{linear_eval, EvalPlan, Task};
use crate::model::{save_checkpoint, ModelConfig, ModelParams};
use crate::objectives::{
    pretrain, EpochLog, GclConfig, Objective, ObjectiveError, OptimizerConfig, OptimizerKind,
    PretrainConfig,
};
use crate::rng::derive_seed;

use super::config::RunConfig;
use super::corpus::{load_corpus, Corpus};
use super::{configure_threads, CliError, Common};

const SELECT_STREAM: u64 = 0x53454C;

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory (from `synth` or `ingest`).
    #[arg(long)]
    data: PathBuf,
    /// Pretraining objective: gcl, simclr, masked, combined, forecast.
    #[arg(long)]
    objective: String,
    /// Checkpoint output path; a JSONL epoch log is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Moving-average rate of the per-example estimator.
    #[arg(long)]
    gamma: Option<f64>,
    /// Masked-loss weight in the combined objective.
    #[arg(long)]
    lambda_mask: Option<f64>,
    /// Fraction of events masked for value regression.
    #[arg(long)]
    mask_rate: Option<f64>,
    /// Checkpoint selection criterion: pretext-loss (default) scores by
    /// validation loss; linear-eval scores each epoch by a mortality
    /// probe on the validation split.
    #[arg(long, default_value = "pretext-loss")]
    select_by: String,
}

/// Keys that only apply to some objectives. A provided-but-inapplicable
/// key is warned about and ignored rather than rejected, so one config
/// file can drive a family of ablation runs.
fn applicable(key: &str, objective: Objective) -> bool {
    match key {
        "pretrain.gamma" | "pretrain.strict_eq2" => objective.uses_estimator(),
        "pretrain.tau" | "pretrain.exclude_self" => objective.is_contrastive(),
        "pretrain.lambda_mask" | "pretrain.disable_contrastive" => {
            objective == Objective::Combined
        }
        "pretrain.mask_rate" => matches!(objective, Objective::Masked | Objective::Combined),
        _ if key.starts_with("augment.") => objective.is_contrastive(),
        _ => true,
    }
}

fn screen_inapplicable(config: &mut RunConfig, objective: Objective) {
    let conditional = [
        "pretrain.gamma",
        "pretrain.strict_eq2",
        "pretrain.tau",
        "pretrain.exclude_self",
        "pretrain.lambda_mask",
        "pretrain.disable_contrastive",
        "pretrain.mask_rate",
        "augment.global_frac_min",
        "augment.global_frac_max",
        "augment.local_frac_min",
        "augment.local_frac_max",
        "augment.p_local",
        "augment.n_regions_min",
        "augment.n_regions_max",
        "augment.noise_sigma",
    ];
    for key in conditional {
        if config.provided(key) && !applicable(key, objective) {
            eprintln!(
                "warning: {key} does not apply to the {} objective; ignored",
                objective.as_str()
            );
            config.discard(key);
        }
    }
}

fn read_gcl(config: &mut RunConfig, objective: Objective) -> Result<GclConfig, CliError> {
    let d = GclConfig::default();
    let mut gcl = GclConfig {
        tau: config.f64_or("pretrain.tau", d.tau)?,
        gamma: config.f64_or("pretrain.gamma", d.gamma)?,
        lambda_mask: config.f64_or("pretrain.lambda_mask", d.lambda_mask)?,
        mask_rate: config.f64_or("pretrain.mask_rate", d.mask_rate)?,
        exclude_self: config.bool_or("pretrain.exclude_self", d.exclude_self)?,
        strict_eq2: config.bool_or("pretrain.strict_eq2", d.strict_eq2)?,
        disable_contrastive: config.bool_or("pretrain.disable_contrastive", d.disable_contrastive)?,
    };
    if objective == Objective::Forecast {
        // The forecast baseline ignores the sampled-mask rate entirely.
        gcl.mask_rate = d.mask_rate;
    }
    Ok(gcl)
}

fn read_augment(config: &mut RunConfig) -> Result<crate::augment::AugmentConfig, CliError> {
    let d = crate::augment::AugmentConfig::default();
    Ok(crate::augment::AugmentConfig {
        global_frac_range: (
            config.f64_or("augment.global_frac_min", d.global_frac_range.0)?,
            config.f64_or("augment.global_frac_max", d.global_frac_range.1)?,
        ),
        local_frac_range: (
            config.f64_or("augment.local_frac_min", d.local_frac_range.0)?,
            config.f64_or("augment.local_frac_max", d.local_frac_range.1)?,
        ),
        p_local: config.f64_or("augment.p_local", d.p_local)?,
        n_regions_range: (
            config.usize_or("augment.n_regions_min", d.n_regions_range.0)?,
            config.usize_or("augment.n_regions_max", d.n_regions_range.1)?,
        ),
        noise_sigma: config.f64_or("augment.noise_sigma", d.noise_sigma)?,
    })
}

fn read_optimizer(config: &mut RunConfig) -> Result<OptimizerConfig, CliError> {
    let d = OptimizerConfig::default();
    let kind = match config.get_str("pretrain.optimizer").as_deref() {
        None | Some("adam") => OptimizerKind::Adam,
        Some("momentum") => OptimizerKind::Momentum,
        Some(other) => {
            return Err(CliError::Config(format!(
                "pretrain.optimizer must be adam or momentum, got {other:?}"
            )))
        }
    };
    Ok(OptimizerConfig {
        kind,
        beta1: config.f64_or("pretrain.beta1", d.beta1)?,
        beta2: config.f64_or("pretrain.beta2", d.beta2)?,
        eps: config.f64_or("pretrain.eps", d.eps)?,
        weight_decay: config.f64_or("pretrain.weight_decay", d.weight_decay)?,
    })
}

fn read_model(config: &mut RunConfig, vocab_size: usize) -> Result<ModelConfig, CliError> {
    let d = ModelConfig::new(vocab_size);
    Ok(ModelConfig {
        d: config.usize_or("model.d", d.d)?,
        h: config.usize_or("model.h", d.h)?,
        layers: config.usize_or("model.layers", d.layers)?,
        p: config.usize_or("model.p", d.p)?,
        ff_mult: config.usize_or("model.ff_mult", d.ff_mult)?,
        vocab_size,
        n_classes: d.n_classes,
        use_projection: config.bool_or("model.use_projection", d.use_projection)?,
    })
}

fn log_line(log: &EpochLog, total: usize) -> String {
    let mut line = format!(
        "epoch {:>3}/{} lr {:.2e} train {:.4}",
        log.epoch + 1,
        total,
        log.lr,
        log.train_loss
    );
    if let Some(c) = log.contrastive {
        line.push_str(&format!(" nce {c:.4}"));
    }
    if let Some(m) = log.masked {
        line.push_str(&format!(" mask {m:.4}"));
    }
    line.push_str(&format!(" val {:.4}", log.val_loss));
    if let Some((mean, min, max)) = log.u_stats {
        line.push_str(&format!(" u {mean:.3}/{min:.3}/{max:.3}"));
    }
    if log.improved {
        line.push_str("  *");
    }
    line
}

fn save_improved(params: &ModelParams, objective: Objective, out: &Path) -> Result<(), CliError> {
    save_checkpoint(params, objective.as_str(), out)?;
    Ok(())
}

pub fn cmd_pretrain(args: PretrainArgs) -> Result<(), CliError> {
    configure_threads(args.common.threads)?;
    let objective = Objective::parse(&args.objective)?;
    let mut config = RunConfig::from_file(args.common.config.as_deref())?;
    if let Some(v) = args.epochs {
        config.set("pretrain.epochs", v);
    }
    if let Some(v) = args.batch_size {
        config.set("pretrain.batch_size", v);
    }
    if let Some(v) = args.lr {
        config.set("pretrain.lr", v);
    }
    if let Some(v) = args.warmup_epochs {
        config.set("pretrain.warmup_epochs", v);
    }
    if let Some(v) = args.tau {
        config.set("pretrain.tau", v);
    }
    if let Some(v) = args.gamma {
        config.set("pretrain.gamma", v);
    }
    if let Some(v) = args.lambda_mask {
        config.set("pretrain.lambda_mask", v);
    }
    if let Some(v) = args.mask_rate {
        config.set("pretrain.mask_rate", v);
    }
    screen_inapplicable(&mut config, objective);

    let Corpus {
        train, val, vocab, ..
    } = load_corpus(&args.data, None)?;
    let model_config = read_model(&mut config, vocab.len())?;
    let d = PretrainConfig::default();
    let pretrain_config = PretrainConfig {
        objective,
        gcl: read_gcl(&mut config, objective)?,
        augment: read_augment(&mut config)?,
        optimizer: read_optimizer(&mut config)?,
        lr: config.f64_or("pretrain.lr", d.lr)?,
        epochs: config.usize_or("pretrain.epochs", d.epochs)?,
        warmup_epochs: config.usize_or("pretrain.warmup_epochs", d.warmup_epochs)?,
        batch_size: config.usize_or("pretrain.batch_size", d.batch_size)?,
    };
    config.reject_unknown()?;

    let seed = args.common.seed;
    let log_path = args.out.with_extension("log.jsonl");
    let mut log_file = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|source| CliError::Io {
            path: log_path.display().to_string(),
            source,
        })?,
    );

    let mut save_error: Option<CliError> = None;
    let mut select_fn;
    let select: Option<&mut dyn FnMut(&ModelParams, usize) -> Result<f64, ObjectiveError>> =
        match args.select_by.as_str() {
            "pretext-loss" => None,
            "linear-eval" => {
                let (probe_train, probe_val) = (train.clone(), val.clone());
                select_fn = move |params: &ModelParams, epoch: usize| {
                    let plan = EvalPlan::default();
                    let report = linear_eval(
                        params,
                        &probe_train,
                        &probe_val,
                        &probe_val,
                        Task::Mortality,
                        &plan,
                        derive_seed(seed, &[SELECT_STREAM, epoch as u64]),
                    )
                    .map_err(|e| ObjectiveError::Config(e.to_string()))?;
                    report
                        .metrics
                        .get("auc_roc")
                        .copied()
                        .ok_or_else(|| ObjectiveError::Internal("probe reported no auc".into()))
                };
                Some(&mut select_fn)
            }
            other => {
                return Err(CliError::Config(format!(
                    "--select-by must be pretext-loss or linear-eval, got {other:?}"
                )))
            }
        };

    let epochs = pretrain_config.epochs;
    let out_path = args.out.clone();
    let mut on_epoch = |log: &EpochLog, params: &ModelParams| {
        println!("{}", log_line(log, epochs));
        if let Ok(json) = serde_json::to_string(log) {
            let _ = writeln!(log_file, "{json}");
        }
        if log.improved && save_error.is_none() {
            if let Err(e) = save_improved(params, objective, &out_path) {
                save_error = Some(e);
            }
        }
    };

    let outcome = pretrain(
        model_config,
        &train,
        &val,
        &pretrain_config,
        seed,
        select,
        Some(&mut on_epoch),
    )?;
    drop(log_file);
    if let Some(e) = save_error {
        return Err(e);
    }

    println!(
        "best epoch {} of {epochs}; checkpoint {} ; log {}",
        outcome.best_epoch + 1,
        args.out.display(),
        log_path.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use crate::cli::run;
    use crate::model::load_checkpoint;

    use super::*;

    fn tiny_corpus(dir: &Path, seed: &str) -> PathBuf {
        let out = dir.join("corpus");
        let code = run([
            "evseq",
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--n-stays",
            "24",
            "--n-features",
            "5",
            "--horizon-hours",
            "8",
            "--seed",
            seed,
        ]);
        assert_eq!(code, 0);
        out
    }

    fn tiny_model_conf(dir: &Path) -> PathBuf {
        let conf = dir.join("run.conf");
        std::fs::write(&conf, "model.d=16\nmodel.h=2\nmodel.p=8\nmodel.layers=1\n").unwrap();
        conf
    }

    #[test]
    fn combined_smoke_writes_a_loadable_checkpoint_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(dir.path(), "5");
        let conf = tiny_model_conf(dir.path());
        let ckpt = dir.path().join("model.ckpt");
        let code = run([
            "evseq",
            "pretrain",
            "--data",
            corpus.to_str().unwrap(),
            "--objective",
            "combined",
            "--out",
            ckpt.to_str().unwrap(),
            "--config",
            conf.to_str().unwrap(),
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--seed",
            "5",
        ]);
        assert_eq!(code, 0);
        let (params, objective) = load_checkpoint(&ckpt, None).unwrap();
        assert_eq!(objective, "combined");
        assert_eq!(params.config.d, 16);
        let log = std::fs::read_to_string(dir.path().join("model.log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(log.contains("\"u_stats\":["));
    }

    #[test]
    fn simclr_log_has_no_estimator_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(dir.path(), "6");
        let conf = tiny_model_conf(dir.path());
        let ckpt = dir.path().join("simclr.ckpt");
        let code = run([
            "evseq",
            "pretrain",
            "--data",
            corpus.to_str().unwrap(),
            "--objective",
            "simclr",
            "--out",
            ckpt.to_str().unwrap(),
            "--config",
            conf.to_str().unwrap(),
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--seed",
            "6",
        ]);
        assert_eq!(code, 0);
        let log = std::fs::read_to_string(dir.path().join("simclr.log.jsonl")).unwrap();
        for line in log.lines() {
            assert!(line.contains("\"u_stats\":null"), "{line}");
        }
    }

    #[test]
    fn inapplicable_keys_warn_and_do_not_fail() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(dir.path(), "7");
        let conf = dir.path().join("run.conf");
        std::fs::write(
            &conf,
            "model.d=16\nmodel.h=2\nmodel.p=8\nmodel.layers=1\npretrain.gamma=0.5\n",
        )
        .unwrap();
        let ckpt = dir.path().join("masked.ckpt");
        let code = run([
            "evseq",
            "pretrain",
            "--data",
            corpus.to_str().unwrap(),
            "--objective",
            "masked",
            "--out",
            ckpt.to_str().unwrap(),
            "--config",
            conf.to_str().unwrap(),
            "--epochs",
            "1",
            "--batch-size",
            "8",
            "--seed",
            "7",
        ]);
        assert_eq!(code, 0, "gamma must be ignored for the masked objective");
        assert!(ckpt.exists());
    }

    #[test]
    fn unknown_objective_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(dir.path(), "8");
        let code = run([
            "evseq",
            "pretrain",
            "--data",
            corpus.to_str().unwrap(),
            "--objective",
            "contrastive",
            "--out",
            dir.path().join("x.ckpt").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }
}
