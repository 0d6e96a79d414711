//! Normalization, windowing, and splitting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::types::{
    Dataset, FeatureKind, FeatureStats, Normalizer, Split, StaySequence, Vocabulary,
};
use super::DataError;
use crate::rng::substream;

/// Optional per-feature-name outlier bounds; events outside are
/// dropped, not clamped.
pub type BoundsSpec = BTreeMap<String, (f64, f64)>;

/// Population mean/std per feature over in-bounds training events.
/// Categorical features and features with no surviving events fall
/// back to identity stats; the latter are reported as warnings.
pub fn fit_normalizer(
    train: &Dataset,
    vocab: &Vocabulary,
    bounds: &BoundsSpec,
) -> Result<(Normalizer, Vec<String>), DataError> {
    if train.is_empty() {
        return Err(DataError::Config("cannot fit normalizer: empty training split".into()));
    }
    let mut sums = vec![0.0f64; vocab.len()];
    let mut sq_sums = vec![0.0f64; vocab.len()];
    let mut counts = vec![0usize; vocab.len()];
    let feature_bounds: Vec<Option<(f64, f64)>> = (0..vocab.len())
        .map(|i| bounds.get(&vocab.def(i).name).copied())
        .collect();

    for stay in &train.stays {
        for ev in &stay.events {
            if vocab.def(ev.f).kind == FeatureKind::Categorical {
                continue;
            }
            if let Some((lo, hi)) = feature_bounds[ev.f] {
                if ev.v < lo || ev.v > hi {
                    continue;
                }
            }
            sums[ev.f] += ev.v;
            sq_sums[ev.f] += ev.v * ev.v;
            counts[ev.f] += 1;
        }
    }

    let mut warnings = Vec::new();
    let stats = (0..vocab.len())
        .map(|i| {
            let def = vocab.def(i);
            let (min, max) = match feature_bounds[i] {
                Some((lo, hi)) => (Some(lo), Some(hi)),
                None => (None, None),
            };
            if def.kind == FeatureKind::Categorical {
                return FeatureStats { mean: 0.0, std: 1.0, min, max };
            }
            if counts[i] == 0 {
                warnings.push(format!(
                    "feature {:?}: no in-bounds training events; using mean 0, std 1",
                    def.name
                ));
                return FeatureStats { mean: 0.0, std: 1.0, min, max };
            }
            let n = counts[i] as f64;
            let mean = sums[i] / n;
            let var = (sq_sums[i] / n - mean * mean).max(0.0);
            let std = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
            FeatureStats { mean, std, min, max }
        })
        .collect();
    Ok((Normalizer { stats }, warnings))
}

/// Outcome counts from [`apply_normalizer`].
#[derive(Debug, Default, PartialEq, Eq)]
pub struct ApplyReport {
    /// Events whose feature name is absent from the normalizer's
    /// vocabulary (cross-dataset application).
    pub dropped_foreign: usize,
    /// Distinct foreign feature names seen.
    pub foreign_features: usize,
    /// Events outside the fitted outlier bounds.
    pub dropped_out_of_bounds: usize,
    /// Stays removed because no events survived.
    pub removed_stays: usize,
}

/// Standardizes continuous values with the normalizer's statistics,
/// remapping features by name into the normalizer's vocabulary (so a
/// normalizer fitted on one dataset can be applied to another). Events
/// with foreign features or out-of-bounds values are dropped.
pub fn apply_normalizer(
    ds: &Dataset,
    ds_vocab: &Vocabulary,
    norm: &Normalizer,
    norm_vocab: &Vocabulary,
) -> (Dataset, ApplyReport) {
    let mut report = ApplyReport::default();
    // Feature index translation ds -> normalizer, by name.
    let remap: Vec<Option<usize>> = (0..ds_vocab.len())
        .map(|i| norm_vocab.index_of(&ds_vocab.def(i).name))
        .collect();
    report.foreign_features = remap.iter().filter(|m| m.is_none()).count();

    let mut stays = Vec::with_capacity(ds.stays.len());
    for stay in &ds.stays {
        let mut events = Vec::with_capacity(stay.events.len());
        for ev in &stay.events {
            let Some(f) = remap[ev.f] else {
                report.dropped_foreign += 1;
                continue;
            };
            let st = &norm.stats[f];
            if !st.in_bounds(ev.v) {
                report.dropped_out_of_bounds += 1;
                continue;
            }
            let v = match norm_vocab.def(f).kind {
                FeatureKind::Continuous => (ev.v - st.mean) / st.std,
                FeatureKind::Categorical => ev.v,
            };
            events.push(super::types::TripletEvent { t: ev.t, v, f });
        }
        if events.is_empty() {
            report.removed_stays += 1;
            continue;
        }
        stays.push(StaySequence { events, ..stay.clone() });
    }
    let out = Dataset {
        stays,
        split: ds.split,
        provenance: ds.provenance.clone(),
    };
    (out, report)
}

/// Truncates each stay to events with t < hours (half-open window);
/// stays left empty are removed and counted.
pub fn window(ds: &Dataset, hours: f64) -> Result<(Dataset, usize), DataError> {
    if !(hours > 0.0) {
        return Err(DataError::Config(format!("window hours must be > 0, got {hours}")));
    }
    let mut removed = 0;
    let mut stays = Vec::with_capacity(ds.stays.len());
    for stay in &ds.stays {
        let events: Vec<_> = stay.events.iter().copied().filter(|e| e.t < hours).collect();
        if events.is_empty() {
            removed += 1;
            continue;
        }
        stays.push(StaySequence { events, ..stay.clone() });
    }
    let out = Dataset {
        stays,
        split: ds.split,
        provenance: ds.provenance.clone(),
    };
    Ok((out, removed))
}

const SPLIT_STREAM: u64 = 0x5350;

/// Shuffles stays with a seeded stream and cuts 70/15/15 (counts
/// rounded, within one stay of exact).
pub fn split_dataset(ds: Dataset, seed: u64) -> (Dataset, Dataset, Dataset) {
    let n = ds.stays.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, &[SPLIT_STREAM]);
    order.shuffle(&mut rng);

    let n_train = ((n as f64) * 0.70).round() as usize;
    let n_val = (((n as f64) * 0.15).round() as usize).min(n - n_train);

    let mut stays = ds.stays;
    let mut take = |idxs: &[usize]| -> Vec<StaySequence> {
        idxs.iter()
            .map(|&i| std::mem::replace(&mut stays[i], StaySequence {
                stay_id: String::new(),
                events: Vec::new(),
                mortality: None,
                phenotypes: None,
            }))
            .collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);

    let mk = |stays: Vec<StaySequence>, split: Split| Dataset {
        stays,
        split: Some(split),
        provenance: ds.provenance.clone(),
    };
    (
        mk(train, Split::Train),
        mk(val, Split::Val),
        mk(test, Split::Test),
    )
}

#[derive(Serialize, Deserialize)]
struct FeatureRecord {
    name: String,
    index: usize,
    kind: String,
    mean: f64,
    std: f64,
    min: Option<f64>,
    max: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct FeatureTableDoc {
    features: Vec<FeatureRecord>,
}

/// Writes the vocabulary and normalizer as one JSON document.
pub fn save_feature_table(
    vocab: &Vocabulary,
    norm: &Normalizer,
    path: &Path,
) -> Result<(), DataError> {
    let doc = FeatureTableDoc {
        features: (0..vocab.len())
            .map(|i| {
                let def = vocab.def(i);
                let st = &norm.stats[i];
                FeatureRecord {
                    name: def.name.clone(),
                    index: i,
                    kind: def.kind.as_str().to_string(),
                    mean: st.mean,
                    std: st.std,
                    min: st.min,
                    max: st.max,
                }
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&doc).expect("feature table serializes");
    std::fs::write(path, json).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_feature_table(path: &Path) -> Result<(Vocabulary, Normalizer), DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc: FeatureTableDoc = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    let mut vocab = Vocabulary::new();
    let mut stats = Vec::with_capacity(doc.features.len());
    for (i, rec) in doc.features.iter().enumerate() {
        if rec.index != i {
            return Err(DataError::Config(format!(
                "feature table indices must be contiguous; {:?} has index {} at position {i}",
                rec.name, rec.index
            )));
        }
        vocab.intern(&rec.name, FeatureKind::parse(&rec.kind)?);
        stats.push(FeatureStats {
            mean: rec.mean,
            std: rec.std,
            min: rec.min,
            max: rec.max,
        });
    }
    if vocab.len() != doc.features.len() {
        return Err(DataError::Config("duplicate names in feature table".into()));
    }
    Ok((vocab, Normalizer { stats }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::{FeatureDef, TripletEvent};

    fn toy_dataset() -> (Dataset, Vocabulary) {
        let vocab = Vocabulary::from_defs(vec![
            FeatureDef { name: "hr".into(), kind: FeatureKind::Continuous },
            FeatureDef { name: "gcs=3".into(), kind: FeatureKind::Categorical },
        ])
        .unwrap();
        let stays = vec![StaySequence {
            stay_id: "s1".into(),
            events: vec![
                TripletEvent { t: 0.0, v: 1.0, f: 0 },
                TripletEvent { t: 1.0, v: 2.0, f: 0 },
                TripletEvent { t: 2.0, v: 3.0, f: 0 },
                TripletEvent { t: 3.0, v: 1.0, f: 1 },
            ],
            mortality: Some(0),
            phenotypes: None,
        }];
        (Dataset::new(stays, "toy"), vocab)
    }

    #[test]
    fn fit_uses_population_statistics() {
        let (ds, vocab) = toy_dataset();
        let (norm, warnings) = fit_normalizer(&ds, &vocab, &BoundsSpec::new()).unwrap();
        assert!(warnings.is_empty());
        assert!((norm.stats[0].mean - 2.0).abs() < 1e-12);
        assert!((norm.stats[0].std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        // Categorical keeps identity stats.
        assert_eq!(norm.stats[1].mean, 0.0);
        assert_eq!(norm.stats[1].std, 1.0);
    }

    #[test]
    fn bounds_drop_events_from_stats_and_data() {
        let (mut ds, vocab) = toy_dataset();
        ds.stays[0].events.push(TripletEvent { t: 4.0, v: 42.0, f: 0 });
        let mut bounds = BoundsSpec::new();
        bounds.insert("hr".into(), (0.0, 10.0));
        let (norm, _) = fit_normalizer(&ds, &vocab, &bounds).unwrap();
        assert!((norm.stats[0].mean - 2.0).abs() < 1e-12);
        let (applied, report) = apply_normalizer(&ds, &vocab, &norm, &vocab);
        assert_eq!(report.dropped_out_of_bounds, 1);
        assert_eq!(applied.stays[0].events.len(), 4);
    }

    #[test]
    fn apply_standardizes_continuous_only() {
        let (ds, vocab) = toy_dataset();
        let norm = Normalizer {
            stats: vec![
                FeatureStats { mean: 80.0, std: 10.0, min: None, max: None },
                FeatureStats::identity(),
            ],
        };
        let mut raw = ds.clone();
        raw.stays[0].events[0].v = 80.0;
        raw.stays[0].events[1].v = 90.0;
        let (applied, _) = apply_normalizer(&raw, &vocab, &norm, &vocab);
        assert_eq!(applied.stays[0].events[0].v, 0.0);
        assert_eq!(applied.stays[0].events[1].v, 1.0);
        assert_eq!(applied.stays[0].events[3].v, 1.0); // categorical untouched
    }

    #[test]
    fn normalized_training_split_has_zero_mean_unit_std() {
        let (ds, vocab) = toy_dataset();
        let (norm, _) = fit_normalizer(&ds, &vocab, &BoundsSpec::new()).unwrap();
        let (applied, _) = apply_normalizer(&ds, &vocab, &norm, &vocab);
        let vals: Vec<f64> = applied.stays[0]
            .events
            .iter()
            .filter(|e| e.f == 0)
            .map(|e| e.v)
            .collect();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn foreign_features_dropped_with_count() {
        let (ds, vocab) = toy_dataset();
        let norm_vocab = Vocabulary::from_defs(vec![FeatureDef {
            name: "hr".into(),
            kind: FeatureKind::Continuous,
        }])
        .unwrap();
        let norm = Normalizer::identity(1);
        let (applied, report) = apply_normalizer(&ds, &vocab, &norm, &norm_vocab);
        assert_eq!(report.foreign_features, 1);
        assert_eq!(report.dropped_foreign, 1);
        assert_eq!(applied.stays[0].events.len(), 3);
    }

    #[test]
    fn window_is_half_open() {
        let (mut ds, _) = toy_dataset();
        ds.stays[0].events = vec![
            TripletEvent { t: 47.9, v: 1.0, f: 0 },
            TripletEvent { t: 48.0, v: 2.0, f: 0 },
        ];
        let (windowed, removed) = window(&ds, 48.0).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(windowed.stays[0].events.len(), 1);
        assert_eq!(windowed.stays[0].events[0].t, 47.9);
    }

    #[test]
    fn window_removes_and_counts_empty_stays() {
        let (mut ds, _) = toy_dataset();
        ds.stays[0].events = vec![TripletEvent { t: 50.0, v: 1.0, f: 0 }];
        let (windowed, removed) = window(&ds, 48.0).unwrap();
        assert_eq!(removed, 1);
        assert!(windowed.is_empty());
    }

    #[test]
    fn infinite_window_is_identity() {
        let (ds, _) = toy_dataset();
        let (windowed, removed) = window(&ds, f64::INFINITY).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(windowed.stays, ds.stays);
    }

    fn numbered_stays(n: usize) -> Dataset {
        let stays = (0..n)
            .map(|i| StaySequence {
                stay_id: format!("s{i}"),
                events: vec![TripletEvent { t: 0.0, v: 0.0, f: 0 }],
                mortality: None,
                phenotypes: None,
            })
            .collect();
        Dataset::new(stays, "numbered")
    }

    #[test]
    fn split_counts_are_70_15_15_for_100() {
        let (train, val, test) = split_dataset(numbered_stays(100), 7);
        assert_eq!((train.len(), val.len(), test.len()), (70, 15, 15));
    }

    #[test]
    fn splits_are_disjoint_deterministic_and_near_fractional() {
        for n in [10usize, 33, 101, 500] {
            let (a, b, c) = split_dataset(numbered_stays(n), 3);
            let (a2, _, _) = split_dataset(numbered_stays(n), 3);
            assert_eq!(a.stays, a2.stays);
            let mut ids: Vec<&str> = a
                .stays
                .iter()
                .chain(&b.stays)
                .chain(&c.stays)
                .map(|s| s.stay_id.as_str())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), n);
            assert!((a.len() as f64 - 0.70 * n as f64).abs() <= 1.0);
            assert!((b.len() as f64 - 0.15 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn feature_table_round_trips() {
        let (ds, vocab) = toy_dataset();
        let mut bounds = BoundsSpec::new();
        bounds.insert("hr".into(), (-5.0, 500.0));
        let (norm, _) = fit_normalizer(&ds, &vocab, &bounds).unwrap();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_feature_table(&vocab, &norm, tmp.path()).unwrap();
        let (v2, n2) = load_feature_table(tmp.path()).unwrap();
        assert_eq!(vocab, v2);
        assert_eq!(norm, n2);
    }
}
