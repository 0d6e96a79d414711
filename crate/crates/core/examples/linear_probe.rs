//! Linear evaluation: freeze the encoder, train a logistic probe on
//! its embeddings, and compare a pretrained model against a
//! random-initialized one on the mortality task.
//!
//!     cargo run --release --example linear_probe

use evseq::data::{
    apply_normalizer, fit_normalizer, split_dataset, synth_generate, BoundsSpec, SynthConfig,
};
use evseq::eval::{linear_eval, EvalPlan, Task};
use evseq::model::{ModelConfig, ModelParams};
use evseq::objectives::{pretrain, Objective, PretrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_stays: 400,
        ..SynthConfig::default()
    };
    let (data, vocab) = synth_generate(&synth, 11)?;
    let (train, val, test) = split_dataset(data, 11);
    let (norm, _) = fit_normalizer(&train, &vocab, &BoundsSpec::new())?;
    let train = apply_normalizer(&train, &vocab, &norm, &vocab).0;
    let val = apply_normalizer(&val, &vocab, &norm, &vocab).0;
    let test = apply_normalizer(&test, &vocab, &norm, &vocab).0;

    let model = ModelConfig {
        d: 32,
        h: 2,
        layers: 2,
        p: 16,
        ..ModelConfig::new(vocab.len())
    };
    let config = PretrainConfig {
        objective: Objective::Masked,
        epochs: 60,
        warmup_epochs: 2,
        batch_size: 32,
        lr: 3e-3,
        ..PretrainConfig::default()
    };
    println!(
        "pretraining {} for {} epochs on {} stays ...",
        config.objective.as_str(),
        config.epochs,
        train.len()
    );
    let outcome = pretrain(model.clone(), &train, &val, &config, 11, None, None)?;

    let plan = EvalPlan::default();
    let probe = |params: &ModelParams, tag: &str| -> Result<f64, Box<dyn std::error::Error>> {
        let report = linear_eval(params, &train, &val, &test, Task::Mortality, &plan, 11)?;
        let auc = report.metrics["auc_roc"];
        println!(
            "  {tag:<10} auc_roc {auc:.4}  auc_pr {:.4}",
            report.metrics["auc_pr"]
        );
        Ok(auc)
    };

    println!("frozen-encoder probes (test split):");
    let random = ModelParams::init(model, 11)?;
    let baseline = probe(&random, "random")?;
    let pretrained = probe(&outcome.best, "pretrained")?;
    println!(
        "\npretraining moved the probe by {:+.4} auc_roc",
        pretrained - baseline
    );
    Ok(())
}
