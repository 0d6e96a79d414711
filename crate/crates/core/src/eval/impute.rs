//! Value imputation: query a measurement at a time point, or score
//! reconstruction over randomly masked values.

use rayon::prelude::*;

use crate::data::{Dataset, StaySequence, TripletEvent, Vocabulary};
use crate::model::{BoundModel, ModelParams};
use crate::numerics::Tape;
use crate::objectives::sample_mask;
use crate::rng::substream;

use super::metrics::regression_errors;
use super::EvalError;

const IMPUTE_STREAM: u64 = 0x494D5055;

/// Predicts the value of feature `name` at time `t` for one stay by
/// inserting the query as a masked event at its time position and
/// reading the value head there.
pub fn impute(
    params: &ModelParams,
    vocab: &Vocabulary,
    stay: &StaySequence,
    queries: &[(f64, String)],
) -> Result<Vec<f64>, EvalError> {
    queries
        .par_iter()
        .map(|(t, name)| -> Result<f64, EvalError> {
            if !t.is_finite() || *t < 0.0 {
                return Err(EvalError::Config(format!(
                    "query time must be a nonnegative number, got {t}"
                )));
            }
            let f = vocab.index_of(name).ok_or_else(|| {
                EvalError::Vocabulary(format!("unknown feature '{name}'"))
            })?;
            if f >= params.config.vocab_size {
                return Err(EvalError::Vocabulary(format!(
                    "feature '{name}' (index {f}) outside the encoder vocabulary of {}",
                    params.config.vocab_size
                )));
            }
            let mut tagged: Vec<(TripletEvent, bool)> = stay
                .events
                .iter()
                .map(|&e| (e, false))
                .collect();
            tagged.push((TripletEvent { t: *t, v: 0.0, f }, true));
            tagged.sort_by(|a, b| a.0.t.total_cmp(&b.0.t).then(a.0.f.cmp(&b.0.f)));
            let events: Vec<TripletEvent> = tagged.iter().map(|(e, _)| *e).collect();
            let mask: Vec<bool> = tagged.iter().map(|(_, q)| *q).collect();
            let position = mask.iter().position(|&q| q).expect("query present");

            let mut tape = Tape::new();
            let bound = BoundModel::bind_frozen(&mut tape, params);
            let outputs = bound.forward(&mut tape, &events, &mask)?;
            let pred = bound.predict_values(&mut tape, outputs, &[position])?;
            Ok(tape.value(pred).get(0, 0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ImputeSummary {
    pub mse: f64,
    pub mad: f64,
    /// Number of masked values scored.
    pub count: usize,
}

/// Masks a fraction of each stay's values at random, reconstructs
/// them, and reports pooled errors against the held-out truth. Errors
/// are computed only at masked positions.
pub fn impute_batch(
    params: &ModelParams,
    data: &Dataset,
    rate: f64,
    seed: u64,
) -> Result<ImputeSummary, EvalError> {
    if data.stays.is_empty() {
        return Err(EvalError::Config("no stays to impute".into()));
    }
    let pairs: Vec<Vec<(f64, f64)>> = data
        .stays
        .par_iter()
        .enumerate()
        .map(|(idx, stay)| -> Result<Vec<(f64, f64)>, EvalError> {
            let mut rng = substream(seed, &[IMPUTE_STREAM, idx as u64]);
            let mask = sample_mask(stay.events.len(), rate, &mut rng)
                .map_err(|e| EvalError::Config(e.to_string()))?;
            let indices: Vec<usize> = mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect();
            if indices.is_empty() {
                return Ok(Vec::new());
            }
            let mut tape = Tape::new();
            let bound = BoundModel::bind_frozen(&mut tape, params);
            let outputs = bound.forward(&mut tape, &stay.events, &mask)?;
            let pred = bound.predict_values(&mut tape, outputs, &indices)?;
            let values = tape.value(pred);
            Ok(indices
                .iter()
                .enumerate()
                .map(|(row, &i)| (values.get(row, 0), stay.events[i].v))
                .collect())
        })
        .collect::<Result<_, _>>()?;

    let mut predictions = Vec::new();
    let mut targets = Vec::new();
    for stay_pairs in pairs {
        for (p, t) in stay_pairs {
            predictions.push(p);
            targets.push(t);
        }
    }
    let (mse, mad) = regression_errors(&predictions, &targets)?;
    Ok(ImputeSummary {
        mse,
        mad,
        count: predictions.len(),
    })
}

#[cfg(test)]
mod tests {
    use crate::data::{synth_generate, FeatureDef, FeatureKind, SynthConfig};
    use crate::model::ModelConfig;

    use super::*;

    fn tiny_world() -> (ModelParams, Dataset, Vocabulary) {
        let config = SynthConfig {
            n_stays: 6,
            n_features: 4,
            horizon_hours: 12.0,
            ..SynthConfig::default()
        };
        let (data, vocab) = synth_generate(&config, 41).unwrap();
        let mut mc = ModelConfig::new(vocab.len());
        mc.d = 16;
        mc.h = 2;
        mc.layers = 1;
        mc.p = 8;
        mc.ff_mult = 2;
        let params = ModelParams::init(mc, 5).unwrap();
        (params, data, vocab)
    }

    #[test]
    fn query_matches_a_hand_built_masked_forward() {
        let (params, data, vocab) = tiny_world();
        let stay = &data.stays[0];
        let name = vocab.def(2).name.clone();
        let t_query = (stay.events[0].t + stay.events[1].t) / 2.0;
        let got = impute(&params, &vocab, stay, &[(t_query, name)]).unwrap()[0];

        let mut events = stay.events.clone();
        events.push(TripletEvent { t: t_query, v: 0.0, f: 2 });
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.f.cmp(&b.f)));
        let position = events
            .iter()
            .position(|e| e.t == t_query && e.f == 2)
            .unwrap();
        let mut mask = vec![false; events.len()];
        mask[position] = true;
        let mut tape = Tape::new();
        let bound = BoundModel::bind_frozen(&mut tape, &params);
        let outputs = bound.forward(&mut tape, &events, &mask).unwrap();
        let pred = bound.predict_values(&mut tape, outputs, &[position]).unwrap();
        assert_eq!(got, tape.value(pred).get(0, 0));
        assert!(got.is_finite());
    }

    #[test]
    fn unknown_feature_is_a_vocabulary_error() {
        let (params, data, vocab) = tiny_world();
        let err = impute(&params, &vocab, &data.stays[0], &[(1.0, "no_such".into())]);
        assert!(matches!(err, Err(EvalError::Vocabulary(_))));
    }

    #[test]
    fn query_outside_encoder_vocabulary_is_rejected() {
        let (params, data, _) = tiny_world();
        // A wider vocabulary than the encoder was built for.
        let defs: Vec<FeatureDef> = (0..10)
            .map(|i| FeatureDef {
                name: format!("f{i}"),
                kind: FeatureKind::Continuous,
            })
            .collect();
        let wide = Vocabulary::from_defs(defs).unwrap();
        let err = impute(&params, &wide, &data.stays[0], &[(1.0, "f9".into())]);
        assert!(matches!(err, Err(EvalError::Vocabulary(_))));
    }

    #[test]
    fn batch_mode_scores_masked_positions_only() {
        let (params, data, _) = tiny_world();
        let summary = impute_batch(&params, &data, 0.10, 7).unwrap();
        let expected: usize = data
            .stays
            .iter()
            .map(|s| (0.10 * s.events.len() as f64).ceil() as usize)
            .sum();
        assert_eq!(summary.count, expected);
        assert!(summary.mse >= 0.0 && summary.mad >= 0.0);
        let again = impute_batch(&params, &data, 0.10, 7).unwrap();
        assert_eq!(summary.mse, again.mse);
        assert_eq!(summary.mad, again.mad);
    }
}
