//! Generates a labeled synthetic corpus, splits it, fits feature
//! statistics on the training split, and prints what came out.
//!
//!     cargo run --release --example synthesize_corpus

use evseq::data::{
    apply_normalizer, fit_normalizer, split_dataset, synth_generate, BoundsSpec, SynthConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig {
        n_stays: 120,
        n_features: 8,
        horizon_hours: 24.0,
        ..SynthConfig::default()
    };
    let (dataset, vocab) = synth_generate(&config, 7)?;

    let n_events: usize = dataset.stays.iter().map(|s| s.len()).sum();
    let mortality_rate = dataset
        .stays
        .iter()
        .filter_map(|s| s.mortality)
        .map(f64::from)
        .sum::<f64>()
        / dataset.len() as f64;
    println!(
        "{} stays, {} events ({:.1} per stay), mortality rate {:.2}",
        dataset.len(),
        n_events,
        n_events as f64 / dataset.len() as f64,
        mortality_rate
    );

    let stay = &dataset.stays[0];
    println!("\nfirst events of {}:", stay.stay_id);
    for ev in stay.events.iter().take(5) {
        println!("  t={:6.2} h  {}={:.3}", ev.t, vocab.def(ev.f).name, ev.v);
    }

    let (train, val, test) = split_dataset(dataset, 7);
    println!(
        "\nsplit: {} train / {} val / {} test",
        train.len(),
        val.len(),
        test.len()
    );

    let (norm, warnings) = fit_normalizer(&train, &vocab, &BoundsSpec::new())?;
    for w in warnings {
        println!("warning: {w}");
    }
    println!("\nper-feature statistics (train split):");
    for (i, stats) in norm.stats.iter().enumerate().take(4) {
        println!(
            "  {:<4} mean {:8.3}  std {:7.3}",
            vocab.def(i).name,
            stats.mean,
            stats.std
        );
    }

    let (standardized, report) = apply_normalizer(&test, &vocab, &norm, &vocab);
    let mean_abs: f64 = standardized
        .stays
        .iter()
        .flat_map(|s| s.events.iter().map(|e| e.v.abs()))
        .sum::<f64>()
        / standardized.stays.iter().map(|s| s.len()).sum::<usize>() as f64;
    println!(
        "\ntest split standardized: mean |v| = {mean_abs:.3} ({} events dropped)",
        report.dropped_out_of_bounds
    );
    Ok(())
}
