//! Line-delimited JSON event files: one stay per line.
//!
//! ```text
//! {"stay_id":"a","events":[{"t":2.0,"f":"hr","v":80.0}],"mortality":0,"phenotypes":[0,1,...]}
//! ```
//!
//! A string-valued `v` denotes a category: the event is one-hot
//! expanded to feature `"name=category"` with value 1.0. Names already
//! containing `=` are treated as pre-expanded categoricals.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{
    Dataset, FeatureKind, StaySequence, TripletEvent, Vocabulary, PHENOTYPE_COUNT,
};
use super::DataError;

#[derive(Serialize, Deserialize)]
struct StayRecord {
    stay_id: String,
    events: Vec<EventRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mortality: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phenotypes: Option<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    t: f64,
    f: String,
    v: serde_json::Value,
}

/// Result of an ingest: the parsed dataset, the vocabulary in effect,
/// and per-name counts of events dropped as unknown features.
#[derive(Debug)]
pub struct IngestOutcome {
    pub dataset: Dataset,
    pub vocabulary: Vocabulary,
    pub unknown_features: BTreeMap<String, usize>,
}

/// Parses a JSONL event file. With `vocabulary = None` the vocabulary
/// is built from the data in first-appearance order; otherwise events
/// with unseen feature names are dropped and counted.
pub fn ingest(path: &Path, vocabulary: Option<&Vocabulary>) -> Result<IngestOutcome, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut vocab = vocabulary.cloned().unwrap_or_default();
    let extend_vocab = vocabulary.is_none();
    let mut unknown: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut stays = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line_number = lineno + 1;
        let line = line.map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StayRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Parse {
                line: line_number,
                message: e.to_string(),
            })?;
        if !seen_ids.insert(record.stay_id.clone()) {
            return Err(DataError::Validation {
                line: line_number,
                message: format!("duplicate stay_id {:?}", record.stay_id),
            });
        }
        if let Some(ph) = &record.phenotypes {
            if ph.len() != PHENOTYPE_COUNT {
                return Err(DataError::Validation {
                    line: line_number,
                    message: format!(
                        "expected {PHENOTYPE_COUNT} phenotype bits, got {}",
                        ph.len()
                    ),
                });
            }
        }

        let mut events = Vec::with_capacity(record.events.len());
        for ev in record.events {
            if !(ev.t >= 0.0) {
                return Err(DataError::Validation {
                    line: line_number,
                    message: format!("negative or invalid time {}", ev.t),
                });
            }
            let (name, value, kind) = resolve_event(&ev, line_number)?;
            let f = if extend_vocab {
                vocab.intern(&name, kind)
            } else {
                match vocab.index_of(&name) {
                    Some(f) => f,
                    None => {
                        *unknown.entry(name).or_insert(0) += 1;
                        continue;
                    }
                }
            };
            events.push(TripletEvent { t: ev.t, v: value, f });
        }
        if events.is_empty() {
            return Err(DataError::Validation {
                line: line_number,
                message: format!("stay {:?} has no usable events", record.stay_id),
            });
        }
        let mut stay = StaySequence {
            stay_id: record.stay_id,
            events,
            mortality: record.mortality,
            phenotypes: record.phenotypes,
        };
        stay.sort_events();
        stays.push(stay);
    }

    Ok(IngestOutcome {
        dataset: Dataset::new(stays, path.display().to_string()),
        vocabulary: vocab,
        unknown_features: unknown,
    })
}

fn resolve_event(
    ev: &EventRecord,
    line: usize,
) -> Result<(String, f64, FeatureKind), DataError> {
    match &ev.v {
        serde_json::Value::Number(n) => {
            let v = n.as_f64().ok_or_else(|| DataError::Parse {
                line,
                message: format!("value {n} not representable"),
            })?;
            let kind = if ev.f.contains('=') {
                FeatureKind::Categorical
            } else {
                FeatureKind::Continuous
            };
            Ok((ev.f.clone(), v, kind))
        }
        serde_json::Value::String(cat) => {
            Ok((format!("{}={cat}", ev.f), 1.0, FeatureKind::Categorical))
        }
        other => Err(DataError::Parse {
            line,
            message: format!("event value must be number or string, got {other}"),
        }),
    }
}

/// Writes a dataset back to JSONL; `ingest` of the output reproduces
/// the dataset.
pub fn write_jsonl(ds: &Dataset, vocab: &Vocabulary, path: &Path) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for stay in &ds.stays {
        let record = StayRecord {
            stay_id: stay.stay_id.clone(),
            events: stay
                .events
                .iter()
                .map(|e| EventRecord {
                    t: e.t,
                    f: vocab.def(e.f).name.clone(),
                    v: serde_json::Value::from(e.v),
                })
                .collect(),
            mortality: stay.mortality,
            phenotypes: stay.phenotypes.clone(),
        };
        let line = serde_json::to_string(&record).map_err(|e| DataError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}
