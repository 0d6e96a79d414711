//! Runs a short pretraining schedule under each objective on the same
//! tiny corpus and prints the per-epoch log lines: contrastive runs
//! carry estimator statistics, masked runs a reconstruction loss, and
//! the combined objective both.
//!
//!     cargo run --release --example pretrain_objectives

use evseq::data::{split_dataset, synth_generate, SynthConfig};
use evseq::model::ModelConfig;
use evseq::objectives::{pretrain, Objective, PretrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_stays: 48,
        n_features: 6,
        horizon_hours: 12.0,
        ..SynthConfig::default()
    };
    let (data, vocab) = synth_generate(&synth, 5)?;
    let (train, val, _) = split_dataset(data, 5);

    let model = ModelConfig {
        d: 16,
        h: 2,
        layers: 1,
        p: 8,
        ..ModelConfig::new(vocab.len())
    };

    for objective in [
        Objective::Gcl,
        Objective::Simclr,
        Objective::Masked,
        Objective::Combined,
        Objective::Forecast,
    ] {
        let config = PretrainConfig {
            objective,
            epochs: 3,
            warmup_epochs: 1,
            batch_size: 8,
            ..PretrainConfig::default()
        };
        println!("== {} ==", objective.as_str());
        let mut show = |log: &evseq::objectives::EpochLog, _: &evseq::model::ModelParams| {
            let mut line = format!(
                "  epoch {} lr {:.1e} train {:8.4} val {:8.4}",
                log.epoch, log.lr, log.train_loss, log.val_loss
            );
            if let Some(c) = log.contrastive {
                line.push_str(&format!("  nce {c:7.4}"));
            }
            if let Some(m) = log.masked {
                line.push_str(&format!("  mask {m:7.4}"));
            }
            if let Some((mean, min, max)) = log.u_stats {
                line.push_str(&format!("  u {mean:.3}/{min:.3}/{max:.3}"));
            }
            println!("{line}");
        };
        let outcome = pretrain(model.clone(), &train, &val, &config, 5, None, Some(&mut show))?;
        println!("  best epoch: {}\n", outcome.best_epoch);
    }
    Ok(())
}
