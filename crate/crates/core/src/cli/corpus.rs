//! Corpus directory conventions shared by the commands: three JSONL
//! splits plus one feature table, values stored raw and standardized
//! at load time with the table's statistics.

use std::path::Path;

use crate::data::{
    apply_normalizer, ingest, load_feature_table, save_feature_table, write_jsonl, Dataset,
    Normalizer, Vocabulary,
};
use crate::eval::MetricsReport;

use super::CliError;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const FEATURES_FILE: &str = "features.json";

pub(super) struct Corpus {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub vocab: Vocabulary,
}

pub(super) fn write_corpus(
    dir: &Path,
    splits: [&Dataset; 3],
    vocab: &Vocabulary,
    norm: &Normalizer,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for (ds, name) in splits.into_iter().zip([TRAIN_FILE, VAL_FILE, TEST_FILE]) {
        write_jsonl(ds, vocab, &dir.join(name))?;
    }
    save_feature_table(vocab, norm, &dir.join(FEATURES_FILE))?;
    Ok(())
}

/// Loads one split: events with feature names outside the table's
/// vocabulary are dropped and counted, values are standardized, and
/// out-of-bounds values are removed per the table's fitted bounds.
fn load_split(
    dir: &Path,
    name: &str,
    vocab: &Vocabulary,
    norm: &Normalizer,
) -> Result<Dataset, CliError> {
    let outcome = ingest(&dir.join(name), Some(vocab))?;
    let dropped_unknown: usize = outcome.unknown_features.values().sum();
    if dropped_unknown > 0 {
        eprintln!(
            "warning: {name}: dropped {dropped_unknown} events across {} features absent from the feature table",
            outcome.unknown_features.len()
        );
    }
    let (ds, report) = apply_normalizer(&outcome.dataset, &outcome.vocabulary, norm, vocab);
    if report.dropped_out_of_bounds > 0 || report.removed_stays > 0 {
        eprintln!(
            "warning: {name}: {} out-of-bounds events removed, {} stays left empty",
            report.dropped_out_of_bounds, report.removed_stays
        );
    }
    Ok(ds)
}

/// Loads a corpus directory, standardizing against `table` (defaults
/// to the directory's own feature table). Passing the table a model
/// was pretrained with lets a differently-featured corpus be evaluated
/// in that model's feature space: events are remapped by name.
pub(super) fn load_corpus(dir: &Path, table: Option<&Path>) -> Result<Corpus, CliError> {
    let default_table = dir.join(FEATURES_FILE);
    let (vocab, norm) = load_feature_table(table.unwrap_or(&default_table))?;
    Ok(Corpus {
        train: load_split(dir, TRAIN_FILE, &vocab, &norm)?,
        val: load_split(dir, VAL_FILE, &vocab, &norm)?,
        test: load_split(dir, TEST_FILE, &vocab, &norm)?,
        vocab,
    })
}

/// Writes a report and prints its metrics.
pub(super) fn emit_report(report: &MetricsReport, out: &Path) -> Result<(), CliError> {
    report.save(out)?;
    println!(
        "task {} / protocol {} / seed {}",
        report.task, report.protocol, report.seed
    );
    for (name, value) in &report.metrics {
        println!("  {name:<24} {value:.6}");
    }
    println!("report written to {}", out.display());
    Ok(())
}
