//! Measurement imputation: ask a pretrained model for the value of a
//! feature at an arbitrary time inside a stay. The query is appended
//! as a masked triplet, so no extra training is needed beyond the
//! masked-value pretraining itself.
//!
//!     cargo run --release --example impute_queries

use evseq::data::{
    apply_normalizer, fit_normalizer, split_dataset, synth_generate, BoundsSpec, SynthConfig,
};
use evseq::eval::{impute, impute_batch};
use evseq::model::{ModelConfig, ModelParams};
use evseq::objectives::{pretrain, Objective, PretrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_stays: 120,
        n_features: 6,
        horizon_hours: 24.0,
        ..SynthConfig::default()
    };
    let (data, vocab) = synth_generate(&synth, 17)?;
    let (train, val, test) = split_dataset(data, 17);
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
        epochs: 30,
        warmup_epochs: 3,
        batch_size: 16,
        ..PretrainConfig::default()
    };
    println!("pretraining with masked-value regression ...");
    let outcome = pretrain(model.clone(), &train, &val, &config, 17, None, None)?;

    // Batch protocol: hide 10% of each held-out stay and reconstruct.
    let trained = impute_batch(&outcome.best, &test, 0.10, 17)?;
    let untrained = impute_batch(&ModelParams::init(model, 17)?, &test, 0.10, 17)?;
    println!(
        "held-out reconstruction over {} masked values (standardized units):",
        trained.count
    );
    println!(
        "  pretrained  mse {:.3}  mad {:.3}",
        trained.mse, trained.mad
    );
    println!(
        "  random init mse {:.3}  mad {:.3}",
        untrained.mse, untrained.mad
    );

    // Single-stay queries, converted back to raw units.
    let stay = &test.stays[0];
    let queries: Vec<(f64, String)> = vec![
        (4.0, "f00".into()),
        (10.0, "f02".into()),
        (23.5, "f05".into()),
    ];
    let predicted = impute(&outcome.best, &vocab, stay, &queries)?;
    println!("\nqueries against {}:", stay.stay_id);
    for ((t, name), z) in queries.iter().zip(&predicted) {
        let stats = &norm.stats[vocab.index_of(name).unwrap()];
        println!(
            "  {name} at t={t:>5.1} h -> {:.3} (standardized {z:+.3})",
            z * stats.std + stats.mean
        );
    }
    Ok(())
}
