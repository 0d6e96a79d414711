//! Triplet embedding, causal transformer encoder, heads, and
//! checkpoint I/O.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use forward::BoundModel;
pub use params::{LayerParams, ModelConfig, ModelParams};

use crate::numerics::{NumericsError, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Central-difference check of a scalar objective over every model
/// parameter; returns the worst relative error. Rebuilds the graph on
/// each probe, so `build` must be deterministic.
pub fn model_grad_check<F>(
    params: &ModelParams,
    step: f64,
    build: F,
) -> Result<f64, ModelError>
where
    F: Fn(&BoundModel, &mut Tape) -> Result<Var, ModelError>,
{
    let eval = |p: &ModelParams| -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, p);
        let root = build(&bound, &mut tape)?;
        Ok(tape.value(root).item()?)
    };

    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params);
    let root = build(&bound, &mut tape)?;
    tape.backward(root)?;
    let grads = bound.grads(&tape)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for ti in 0..grads.len() {
        for ci in 0..grads[ti].len() {
            let orig = probe.tensors_mut()[ti].data()[ci];
            probe.tensors_mut()[ti].data_mut()[ci] = orig + step;
            let plus = eval(&probe)?;
            probe.tensors_mut()[ti].data_mut()[ci] = orig - step;
            let minus = eval(&probe)?;
            probe.tensors_mut()[ti].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads[ti].data()[ci];
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TripletEvent;
    use crate::numerics::NdArray;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d: 8,
            h: 2,
            layers: 2,
            p: 4,
            ff_mult: 2,
            vocab_size: 3,
            n_classes: 1,
            use_projection: true,
        }
    }

    fn tiny_params(seed: u64) -> ModelParams {
        ModelParams::init(tiny_config(), seed).unwrap()
    }

    fn toy_events(t: usize) -> Vec<TripletEvent> {
        (0..t)
            .map(|j| TripletEvent {
                t: j as f64 * 1.5,
                v: (j as f64).sin(),
                f: j % 3,
            })
            .collect()
    }

    #[test]
    fn config_requires_divisible_heads() {
        let mut c = tiny_config();
        c.h = 3;
        assert!(ModelParams::init(c, 0).is_err());
    }

    #[test]
    fn time_encode_zero_phase_at_zero_time_is_zero() {
        let mut params = tiny_params(0);
        params.time_phi = NdArray::zeros(1, 8);
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params);
        let t_col = tape.constant(NdArray::col(&[0.0]));
        let out = bound.time_encode(&mut tape, t_col).unwrap();
        assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn time_encode_constant_case() {
        let mut params = tiny_params(0);
        params.time_omega = NdArray::zeros(1, 8);
        params.time_phi = NdArray::full(1, 8, 0.7);
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params);
        let t_col = tape.constant(NdArray::col(&[3.0, 9.0]));
        let out = bound.time_encode(&mut tape, t_col).unwrap();
        for row in 0..2 {
            let r = tape.value(out).row_slice(row);
            assert!((r[0] - 0.7).abs() < 1e-15);
            for v in &r[1..] {
                assert!((v - 0.7f64.sin()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_parameters_embed_to_zero_matrix() {
        let mut params = tiny_params(0);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params);
        let tokens = bound
            .embed_sequence(&mut tape, &toy_events(4), &[false; 4])
            .unwrap();
        assert_eq!(tape.value(tokens).shape(), &[5, 8]);
        assert!(tape.value(tokens).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn masked_row_ignores_value_but_keeps_feature_and_time() {
        let params = tiny_params(1);
        let mut events = toy_events(4);
        let mask = [false, true, false, false];

        let embed = |events: &[TripletEvent]| {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &params);
            let tokens = bound.embed_sequence(&mut tape, events, &mask).unwrap();
            tape.value(tokens).clone()
        };
        let base = embed(&events);
        events[1].v += 100.0;
        let value_changed = embed(&events);
        assert_eq!(base.row_slice(1), value_changed.row_slice(1));
        assert_eq!(base.data(), value_changed.data());

        events[1].f = (events[1].f + 1) % 3;
        let feature_changed = embed(&events);
        assert_ne!(base.row_slice(1), feature_changed.row_slice(1));
    }

    #[test]
    fn masked_value_gets_exactly_zero_gradient() {
        let params = tiny_params(2);
        let events = toy_events(5);
        let mask = [false, false, true, false, true];
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params);
        let t_col = tape.constant(NdArray::col(
            &events.iter().map(|e| e.t).collect::<Vec<_>>(),
        ));
        // Values as a trainable leaf so their gradient is observable.
        let v_col = tape.param(NdArray::col(
            &events.iter().map(|e| e.v).collect::<Vec<_>>(),
        ));
        let features: Vec<usize> = events.iter().map(|e| e.f).collect();
        let tokens = bound
            .embed_sequence_vars(&mut tape, t_col, v_col, &features, &mask)
            .unwrap();
        let out = bound.encode(&mut tape, tokens).unwrap();
        let sq = tape.square(out).unwrap();
        let root = tape.reduce_mean(sq).unwrap();
        tape.backward(root).unwrap();
        let vg = tape.grad(v_col).unwrap();
        assert_eq!(vg.data()[2], 0.0);
        assert_eq!(vg.data()[4], 0.0);
        assert!(vg.data()[0] != 0.0);
    }

    #[test]
    fn causal_outputs_ignore_future_tokens() {
        let params = tiny_params(3);
        let mut events = toy_events(6);
        let run = |events: &[TripletEvent]| {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &params);
            let out = bound.forward(&mut tape, events, &[false; 6]).unwrap();
            tape.value(out).clone()
        };
        let base = run(&events);
        for perturbed_pos in [3usize, 5] {
            let mut ev = events.clone();
            ev[perturbed_pos].v += 7.5;
            let changed = run(&ev);
            for k in 0..perturbed_pos {
                assert_eq!(
                    base.row_slice(k),
                    changed.row_slice(k),
                    "row {k} changed by perturbing position {perturbed_pos}"
                );
            }
            assert_ne!(
                base.row_slice(perturbed_pos),
                changed.row_slice(perturbed_pos)
            );
        }
        // Class token (last row) sees everything.
        events[0].v += 1.0;
        let changed = run(&events);
        assert_ne!(base.row_slice(6), changed.row_slice(6));
    }

    #[test]
    fn single_token_sequence_encodes() {
        let params = tiny_params(4);
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params);
        let out = bound
            .forward(&mut tape, &toy_events(1), &[false])
            .unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 8]);
        assert!(tape.value(out).is_finite());
    }

    #[test]
    fn sequence_embedding_is_unit_norm_and_deterministic() {
        let params = tiny_params(5);
        let run = || {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &params);
            let out = bound.forward(&mut tape, &toy_events(4), &[false; 4]).unwrap();
            let z = bound.sequence_embedding(&mut tape, out).unwrap();
            tape.value(z).clone()
        };
        let z1 = run();
        let z2 = run();
        assert_eq!(z1.data(), z2.data());
        let norm: f64 = z1.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_projection_returns_normalized_cls_output() {
        let mut params = tiny_params(6);
        params.config.use_projection = false;
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params);
        let out = bound.forward(&mut tape, &toy_events(3), &[false; 3]).unwrap();
        let z = bound.sequence_embedding(&mut tape, out).unwrap();
        let cls = tape.value(out).row_slice(3).to_vec();
        let norm: f64 = cls.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (zi, ci) in tape.value(z).data().iter().zip(&cls) {
            assert!((zi - ci / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_value_head_predicts_its_bias() {
        let mut params = tiny_params(7);
        for v in params.value_head_w.data_mut() {
            *v = 0.0;
        }
        params.value_head_b = NdArray::full(1, 1, 2.5);
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params);
        let out = bound.forward(&mut tape, &toy_events(4), &[false; 4]).unwrap();
        let pred = bound.predict_values(&mut tape, out, &[0, 2]).unwrap();
        assert_eq!(tape.value(pred).data(), &[2.5, 2.5]);
        assert!(bound.predict_values(&mut tape, out, &[]).is_err());
    }

    #[test]
    fn full_tiny_model_passes_gradient_check() {
        let params = tiny_params(8);
        let events = toy_events(5);
        let mask = [false, true, false, false, true];
        let err = model_grad_check(&params, 1e-5, |bound, tape| {
            let out = bound.forward(tape, &events, &mask)?;
            let z = bound.sequence_embedding(tape, out)?;
            let pred = bound.predict_values(tape, out, &[1, 4])?;
            let logits = bound.classifier_logits(tape, out)?;
            let zsum = tape.reduce_sum(z)?;
            let psq = tape.square(pred)?;
            let psum = tape.reduce_sum(psq)?;
            let lsq = tape.square(logits)?;
            let lsum = tape.reduce_sum(lsq)?;
            let a = tape.add(zsum, psum)?;
            Ok(tape.add(a, lsum)?)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let params = tiny_params(9);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&params, "combined", tmp.path()).unwrap();
        let (loaded, objective) = load_checkpoint(tmp.path(), Some(3)).unwrap();
        assert_eq!(objective, "combined");
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_vocab_mismatch_names_vocabulary() {
        let params = tiny_params(10);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&params, "gcl", tmp.path()).unwrap();
        let err = load_checkpoint(tmp.path(), Some(2)).unwrap_err();
        assert!(err.to_string().contains("vocabulary"));
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let params = tiny_params(11);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&params, "gcl", tmp.path()).unwrap();
        let full = std::fs::read_to_string(tmp.path()).unwrap();
        std::fs::write(tmp.path(), &full[..full.len() / 2]).unwrap();
        assert!(load_checkpoint(tmp.path(), None).is_err());
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let params = tiny_params(12);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&params, "gcl", tmp.path()).unwrap();
        let text = std::fs::read_to_string(tmp.path())
            .unwrap()
            .replace("\"version\":1", "\"version\":9");
        std::fs::write(tmp.path(), text).unwrap();
        let err = load_checkpoint(tmp.path(), None).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
