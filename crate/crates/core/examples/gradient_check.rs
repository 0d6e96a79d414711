//! Central-difference check of a full training step: the analytic
//! parameter gradients from one masked-objective batch are compared
//! against numerical differences of the batch loss.
//!
//!     cargo run --release --example gradient_check

use evseq::augment::AugmentConfig;
use evseq::data::{synth_generate, StaySequence, SynthConfig};
use evseq::model::{ModelConfig, ModelParams};
use evseq::objectives::{batch_step, EstimatorState, GclConfig, Objective};
use rand::Rng;

fn batch_loss(params: &ModelParams, items: &[(usize, &StaySequence)], seed: u64) -> f64 {
    // Identical (seed, epoch, step) reproduces the same masks, so the
    // loss is a deterministic function of the parameters.
    let mut estimator = EstimatorState::new(items.len(), false);
    let (_, stats) = batch_step(
        params,
        items,
        Objective::Masked,
        &GclConfig::default(),
        &AugmentConfig::default(),
        &mut estimator,
        seed,
        0,
        0,
    )
    .expect("step");
    stats.loss
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_stays: 4,
        n_features: 5,
        horizon_hours: 6.0,
        ..SynthConfig::default()
    };
    let (data, _) = synth_generate(&synth, 3)?;
    let items: Vec<(usize, &StaySequence)> = data.stays.iter().enumerate().collect();

    let config = ModelConfig {
        d: 16,
        h: 2,
        layers: 1,
        p: 8,
        ..ModelConfig::new(5)
    };
    let params = ModelParams::init(config, 3)?;
    let mut estimator = EstimatorState::new(items.len(), false);
    let (grads, stats) = batch_step(
        &params,
        &items,
        Objective::Masked,
        &GclConfig::default(),
        &AugmentConfig::default(),
        &mut estimator,
        7,
        0,
        0,
    )?;
    println!("batch loss {:.6}", stats.loss);

    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut rng = evseq::rng::substream(7, &[0xC0FFEE]);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..12 {
        let ti = rng.random_range(0..grads.len());
        let len = grads[ti].len();
        let ci = rng.random_range(0..len);
        let analytic = grads[ti].data()[ci];

        let mut plus = params.clone();
        plus.tensors_mut()[ti].data_mut()[ci] += eps;
        let mut minus = params.clone();
        minus.tensors_mut()[ti].data_mut()[ci] -= eps;
        let numeric = (batch_loss(&plus, &items, 7) - batch_loss(&minus, &items, 7)) / (2.0 * eps);

        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        println!(
            "  {:<28}[{ci:>4}]  analytic {analytic:>12.3e}  numeric {numeric:>12.3e}  rel {rel:.2e}",
            names[ti]
        );
    }
    println!("\nworst relative error {worst:.3e}");
    assert!(worst < 1e-4, "gradient check failed");
    Ok(())
}
