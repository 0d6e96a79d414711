//! `synth` and `ingest`: both end in a corpus directory.

use std::path::PathBuf;

use clap::Args;

use crate::data::{
    fit_normalizer, ingest, load_feature_table, split_dataset, synth_generate, window,
    BoundsSpec, SynthConfig,
};

use super::config::RunConfig;
use super::corpus::write_corpus;
use super::{configure_threads, CliError, Common};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of stays to generate.
    #[arg(long)]
    n_stays: Option<usize>,
    /// Number of measured features.
    #[arg(long)]
    n_features: Option<usize>,
    /// Hours of data per stay.
    #[arg(long)]
    horizon_hours: Option<f64>,
    /// Probability of flipping each mortality label.
    #[arg(long)]
    label_noise: Option<f64>,
    /// Measurement noise in latent units.
    #[arg(long)]
    obs_noise: Option<f64>,
}

pub fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    configure_threads(args.common.threads)?;
    let mut config = RunConfig::from_file(args.common.config.as_deref())?;
    if let Some(v) = args.n_stays {
        config.set("synth.n_stays", v);
    }
    if let Some(v) = args.n_features {
        config.set("synth.n_features", v);
    }
    if let Some(v) = args.horizon_hours {
        config.set("synth.horizon_hours", v);
    }
    if let Some(v) = args.label_noise {
        config.set("synth.label_noise", v);
    }
    if let Some(v) = args.obs_noise {
        config.set("synth.obs_noise", v);
    }

    let d = SynthConfig::default();
    let synth = SynthConfig {
        n_stays: config.usize_or("synth.n_stays", d.n_stays)?,
        n_features: config.usize_or("synth.n_features", d.n_features)?,
        horizon_hours: config.f64_or("synth.horizon_hours", d.horizon_hours)?,
        rate_range: (
            config.f64_or("synth.rate_min", d.rate_range.0)?,
            config.f64_or("synth.rate_max", d.rate_range.1)?,
        ),
        label_noise: config.f64_or("synth.label_noise", d.label_noise)?,
        latent_step: config.f64_or("synth.latent_step", d.latent_step)?,
        obs_noise: config.f64_or("synth.obs_noise", d.obs_noise)?,
    };
    config.reject_unknown()?;

    let (dataset, vocab) = synth_generate(&synth, args.common.seed)?;
    let (train, val, test) = split_dataset(dataset, args.common.seed);
    let (norm, warnings) = fit_normalizer(&train, &vocab, &BoundsSpec::new())?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    write_corpus(&args.out, [&train, &val, &test], &vocab, &norm)?;
    println!(
        "synth corpus: {} train / {} val / {} test stays, {} features -> {}",
        train.len(),
        val.len(),
        test.len(),
        vocab.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    common: Common,
    /// Input event JSONL (one stay per line).
    #[arg(long)]
    input: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Existing feature table: reuse its vocabulary and statistics
    /// instead of fitting new ones.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Truncate each stay to its first N hours.
    #[arg(long)]
    window_hours: Option<f64>,
}

fn parse_bounds(entries: Vec<(String, String)>) -> Result<BoundsSpec, CliError> {
    let mut bounds = BoundsSpec::new();
    for (key, value) in entries {
        let name = key.trim_start_matches("bounds.").to_string();
        let parsed = value.split_once(',').and_then(|(lo, hi)| {
            let lo: f64 = lo.trim().parse().ok()?;
            let hi: f64 = hi.trim().parse().ok()?;
            (lo <= hi).then_some((lo, hi))
        });
        let Some((lo, hi)) = parsed else {
            return Err(CliError::Config(format!(
                "key {key:?}: expected \"low,high\" with low <= high, got {value:?}"
            )));
        };
        bounds.insert(name, (lo, hi));
    }
    Ok(bounds)
}

pub fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    configure_threads(args.common.threads)?;
    let mut config = RunConfig::from_file(args.common.config.as_deref())?;
    if let Some(v) = args.window_hours {
        config.set("ingest.window_hours", v);
    }
    let bounds = parse_bounds(config.drain_prefix("bounds."))?;
    let window_hours = config.get_f64("ingest.window_hours")?;
    config.reject_unknown()?;

    let reused = match &args.features {
        Some(path) => {
            if !bounds.is_empty() {
                eprintln!(
                    "warning: bounds.* ignored; --features supplies fitted bounds and statistics"
                );
            }
            Some(load_feature_table(path)?)
        }
        None => None,
    };

    let outcome = ingest(&args.input, reused.as_ref().map(|(v, _)| v))?;
    for (name, count) in &outcome.unknown_features {
        eprintln!("warning: dropped {count} events with unknown feature {name:?}");
    }
    let mut dataset = outcome.dataset;
    if let Some(hours) = window_hours {
        let (windowed, removed) = window(&dataset, hours)?;
        if removed > 0 {
            eprintln!("warning: {removed} stays had no events inside the {hours} h window");
        }
        dataset = windowed;
    }
    let total = dataset.len();
    let (train, val, test) = split_dataset(dataset, args.common.seed);

    let (vocab, norm) = match reused {
        Some(pair) => pair,
        None => {
            let (norm, warnings) = fit_normalizer(&train, &outcome.vocabulary, &bounds)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            (outcome.vocabulary, norm)
        }
    };
    write_corpus(&args.out, [&train, &val, &test], &vocab, &norm)?;
    println!(
        "ingested {total} stays: {} train / {} val / {} test, {} features -> {}",
        train.len(),
        val.len(),
        test.len(),
        vocab.len(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use crate::cli::run;
    use crate::data::Dataset;

    use super::*;

    fn read(path: &std::path::Path) -> String {
        std::fs::read_to_string(path).unwrap()
    }

    #[test]
    fn synth_splits_seventy_fifteen_fifteen() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("corpus");
        let code = run([
            "evseq",
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--n-stays",
            "100",
            "--n-features",
            "6",
            "--horizon-hours",
            "12",
            "--seed",
            "7",
        ]);
        assert_eq!(code, 0);
        let count = |name: &str| read(&out.join(name)).lines().count();
        assert_eq!(count("train.jsonl"), 70);
        assert_eq!(count("val.jsonl"), 15);
        assert_eq!(count("test.jsonl"), 15);
    }

    #[test]
    fn synth_is_byte_identical_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for out in [&a, &b] {
            let code = run([
                "evseq",
                "synth",
                "--out",
                out.to_str().unwrap(),
                "--n-stays",
                "30",
                "--horizon-hours",
                "8",
                "--seed",
                "7",
            ]);
            assert_eq!(code, 0);
        }
        for name in ["train.jsonl", "val.jsonl", "test.jsonl", "features.json"] {
            assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name} differs");
        }
    }

    #[test]
    fn unknown_config_keys_exit_with_validation_code() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("run.conf");
        std::fs::write(&conf, "synth.n_stayz=50\n").unwrap();
        let code = run([
            "evseq",
            "synth",
            "--out",
            dir.path().join("c").to_str().unwrap(),
            "--config",
            conf.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn ingest_round_trips_a_written_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("corpus");
        assert_eq!(
            run([
                "evseq",
                "synth",
                "--out",
                out.to_str().unwrap(),
                "--n-stays",
                "20",
                "--horizon-hours",
                "8",
                "--seed",
                "3",
            ]),
            0
        );
        let again = dir.path().join("again");
        let code = run([
            "evseq",
            "ingest",
            "--input",
            out.join("train.jsonl").to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert_eq!(code, 0);
        let reread = ingest(&again.join("train.jsonl"), None).unwrap();
        assert!(reread.dataset.len() >= 10);
        assert!(reread.unknown_features.is_empty());
    }

    #[test]
    fn ingest_applies_bounds_and_window() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("events.jsonl");
        let mut lines = String::new();
        for i in 0..10 {
            lines.push_str(&format!(
                concat!(
                    "{{\"stay_id\":\"s{i}\",\"events\":[",
                    "{{\"t\":1.0,\"f\":\"hr\",\"v\":{v}}},",
                    "{{\"t\":30.0,\"f\":\"hr\",\"v\":70.0}}",
                    "],\"mortality\":{m}}}\n"
                ),
                i = i,
                v = if i == 0 { 500.0 } else { 60.0 + i as f64 },
                m = i % 2
            ));
        }
        std::fs::write(&input, lines).unwrap();
        let conf = dir.path().join("run.conf");
        std::fs::write(&conf, "bounds.hr=20,250\n").unwrap();
        let out = dir.path().join("corpus");
        let code = run([
            "evseq",
            "ingest",
            "--input",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--config",
            conf.to_str().unwrap(),
            "--window-hours",
            "24",
        ]);
        assert_eq!(code, 0);
        // The t=30 events fall outside the window, so each stay keeps one
        // event; the v=500 outlier survives in the raw file but the fitted
        // bounds exclude it from the table statistics.
        let (vocab, norm) = load_feature_table(&out.join("features.json")).unwrap();
        let hr = vocab.index_of("hr").unwrap();
        assert_eq!(norm.stats[hr].min, Some(20.0));
        assert_eq!(norm.stats[hr].max, Some(250.0));
        assert!(norm.stats[hr].mean < 100.0, "outlier leaked into the mean");
        let all: Dataset = ingest(&out.join("train.jsonl"), Some(&vocab)).unwrap().dataset;
        assert!(all.stays.iter().all(|s| s.events.iter().all(|e| e.t < 24.0)));
    }

    #[test]
    fn missing_input_is_an_io_exit() {
        let dir = tempfile::tempdir().unwrap();
        let code = run([
            "evseq",
            "ingest",
            "--input",
            "/nonexistent/events.jsonl",
            "--out",
            dir.path().join("c").to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }
}
