//! The ingestion pipeline on a hand-written event file: JSONL parsing
//! with categorical one-hot expansion, windowing, outlier bounds, and
//! standardization.
//!
//!     cargo run --release --example event_pipeline

use evseq::data::{apply_normalizer, fit_normalizer, ingest, window, BoundsSpec};

const EVENTS: &str = r#"{"stay_id":"a","events":[{"t":0.5,"f":"hr","v":82},{"t":1.0,"f":"rhythm","v":"sinus"},{"t":2.0,"f":"hr","v":88},{"t":60.0,"f":"hr","v":70}],"mortality":0}
{"stay_id":"b","events":[{"t":0.2,"f":"hr","v":954},{"t":3.0,"f":"hr","v":91},{"t":4.0,"f":"rhythm","v":"afib"}],"mortality":1}
{"stay_id":"c","events":[{"t":1.5,"f":"temp","v":37.2},{"t":2.5,"f":"hr","v":64}],"mortality":0}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("evseq-pipeline-demo");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("events.jsonl");
    std::fs::write(&path, EVENTS)?;

    let outcome = ingest(&path, None)?;
    println!("vocabulary ({} features):", outcome.vocabulary.len());
    for def in outcome.vocabulary.defs() {
        println!("  {:<12} {}", def.name, def.kind.as_str());
    }

    // Keep the first 48 hours; stay "a" loses its t=60 event.
    let (windowed, removed) = window(&outcome.dataset, 48.0)?;
    println!(
        "\nwindowed to 48 h: {} stays ({} dropped), {} events",
        windowed.len(),
        removed,
        windowed.stays.iter().map(|s| s.len()).sum::<usize>()
    );

    // Fit statistics with an outlier bound: the hr=954 reading is
    // excluded from the mean and dropped on application.
    let mut bounds = BoundsSpec::new();
    bounds.insert("hr".into(), (20.0, 250.0));
    let (norm, warnings) = fit_normalizer(&windowed, &outcome.vocabulary, &bounds)?;
    for w in warnings {
        println!("warning: {w}");
    }
    let hr = outcome.vocabulary.index_of("hr").unwrap();
    println!(
        "\nhr statistics with bounds 20..250: mean {:.2}, std {:.2}",
        norm.stats[hr].mean, norm.stats[hr].std
    );

    let (standardized, report) = apply_normalizer(
        &windowed,
        &outcome.vocabulary,
        &norm,
        &outcome.vocabulary,
    );
    println!(
        "standardized: {} out-of-bounds events dropped",
        report.dropped_out_of_bounds
    );
    let stay = &standardized.stays[0];
    println!("\nstay {} after the pipeline:", stay.stay_id);
    for ev in &stay.events {
        println!(
            "  t={:4.1} h  {}={:+.3}",
            ev.t,
            outcome.vocabulary.def(ev.f).name,
            ev.v
        );
    }
    Ok(())
}
