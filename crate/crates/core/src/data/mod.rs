//! Event-stream ingestion, normalization, splitting, windowing, and
//! synthetic corpus generation.

mod ingest;
mod pipeline;
mod synth;
mod types;

pub use ingest::{ingest, write_jsonl, IngestOutcome};
pub use pipeline::{
    apply_normalizer, fit_normalizer, load_feature_table, save_feature_table, split_dataset,
    window, ApplyReport, BoundsSpec,
};
pub use synth::{synth_generate, SynthConfig};
pub use types::{
    Dataset, FeatureDef, FeatureKind, FeatureStats, Normalizer, Split, StaySequence,
    TripletEvent, Vocabulary, PHENOTYPE_COUNT,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
