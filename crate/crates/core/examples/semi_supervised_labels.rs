//! Semi-supervised evaluation: fine-tune a pretrained encoder with a
//! fresh classifier head under shrinking label budgets. The head and
//! backbone train at different rates; labels are a stratified subset.
//!
//!     cargo run --release --example semi_supervised_labels

use evseq::data::{
    apply_normalizer, fit_normalizer, split_dataset, synth_generate, BoundsSpec, SynthConfig,
};
use evseq::eval::{semi_supervised, EvalPlan, Task};
use evseq::model::ModelConfig;
use evseq::objectives::{pretrain, Objective, PretrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_stays: 400,
        ..SynthConfig::default()
    };
    let (data, vocab) = synth_generate(&synth, 7)?;
    let (train, val, test) = split_dataset(data, 7);
    let (norm, _) = fit_normalizer(&train, &vocab, &BoundsSpec::new())?;
    let train = apply_normalizer(&train, &vocab, &norm, &vocab).0;
    let val = apply_normalizer(&val, &vocab, &norm, &vocab).0;
    let test = apply_normalizer(&test, &vocab, &norm, &vocab).0;

    let model = ModelConfig {
        d: 24,
        h: 2,
        layers: 1,
        p: 12,
        ..ModelConfig::new(vocab.len())
    };
    let config = PretrainConfig {
        objective: Objective::Masked,
        epochs: 40,
        warmup_epochs: 2,
        batch_size: 32,
        lr: 3e-3,
        ..PretrainConfig::default()
    };
    println!("pretraining ({} epochs) ...", config.epochs);
    let outcome = pretrain(model, &train, &val, &config, 7, None, None)?;

    println!("fine-tuning on shrinking label budgets:");
    for fraction in [1.0, 0.5, 0.2] {
        let plan = EvalPlan {
            label_fraction: fraction,
            max_epochs: 12,
            patience: 12,
            ..EvalPlan::default()
        };
        let report = semi_supervised(
            &outcome.best,
            &train,
            &val,
            &test,
            Task::Mortality,
            &plan,
            7,
        )?;
        println!(
            "  fraction {fraction:>4}: {} labeled stays, auc_roc {:.4}, best epoch {}",
            report.metrics["labeled_stays"],
            report.metrics["auc_roc"],
            report.metrics["best_epoch"]
        );
    }
    Ok(())
}
