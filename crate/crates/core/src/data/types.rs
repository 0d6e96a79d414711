use std::collections::HashMap;

use super::DataError;

pub const PHENOTYPE_COUNT: usize = 25;

/// One measurement: hours since stay start, value, feature index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletEvent {
    pub t: f64,
    pub v: f64,
    pub f: usize,
}

/// An ordered event sequence for one stay with optional task labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StaySequence {
    pub stay_id: String,
    pub events: Vec<TripletEvent>,
    pub mortality: Option<u8>,
    pub phenotypes: Option<Vec<u8>>,
}

impl StaySequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sorts by time, breaking ties by feature index then by the
    /// original order (stable sort).
    pub fn sort_events(&mut self) {
        self.events
            .sort_by(|a, b| a.t.total_cmp(&b.t).then(a.f.cmp(&b.f)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Continuous,
    /// One-hot expanded category; value is always 1.0 and never
    /// standardized.
    Categorical,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Continuous => "continuous",
            FeatureKind::Categorical => "categorical",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DataError> {
        match s {
            "continuous" => Ok(FeatureKind::Continuous),
            "categorical" => Ok(FeatureKind::Categorical),
            other => Err(DataError::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ordered feature-name to index map; indices are contiguous from 0.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    features: Vec<FeatureDef>,
    by_name: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_defs(defs: Vec<FeatureDef>) -> Result<Self, DataError> {
        let mut v = Self::new();
        for def in defs {
            if v.by_name.contains_key(&def.name) {
                return Err(DataError::Config(format!(
                    "duplicate feature name {:?}",
                    def.name
                )));
            }
            v.by_name.insert(def.name.clone(), v.features.len());
            v.features.push(def);
        }
        Ok(v)
    }

    /// Returns the feature's index, registering it if new.
    pub fn intern(&mut self, name: &str, kind: FeatureKind) -> usize {
        if let Some(&idx) = self.by_name.get(name) {
            return idx;
        }
        let idx = self.features.len();
        self.by_name.insert(name.to_string(), idx);
        self.features.push(FeatureDef {
            name: name.to_string(),
            kind,
        });
        idx
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn def(&self, index: usize) -> &FeatureDef {
        &self.features[index]
    }

    pub fn defs(&self) -> &[FeatureDef] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
    }
}

/// Per-feature standardization statistics and optional outlier bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl FeatureStats {
    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
            min: None,
            max: None,
        }
    }

    pub fn in_bounds(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }
}

/// Standardization table parallel to a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub stats: Vec<FeatureStats>,
}

impl Normalizer {
    pub fn identity(n: usize) -> Self {
        Self {
            stats: vec![FeatureStats::identity(); n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A list of stays with a split tag and provenance note.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub stays: Vec<StaySequence>,
    pub split: Option<Split>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(stays: Vec<StaySequence>, provenance: impl Into<String>) -> Self {
        Self {
            stays,
            split: None,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.stays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stays.is_empty()
    }
}
