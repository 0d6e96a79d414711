//! One gradient step over a batch: independent per-item graphs feed a
//! small combining graph, whose gradient is then pushed back through
//! each item.

use rayon::prelude::*;

use crate::augment::{sample_pair, AugmentConfig};
use crate::data::StaySequence;
use crate::model::BoundModel;
use crate::model::ModelParams;
use crate::numerics::{NdArray, Tape, Var};
use crate::rng::substream;

use super::contrastive::{contrastive_term_g, gcl_surrogate_loss, info_nce_graph};
use super::estimator::EstimatorState;
use super::masking::{forecast_mask, sample_mask};
use super::{GclConfig, Objective, ObjectiveError};

/// Stream tag for per-item training randomness.
pub const STEP_STREAM: u64 = 0x53544550;
/// Stream tag for the per-epoch shuffle.
pub const SHUFFLE_STREAM: u64 = 0x53485546;
/// Stream tag for fixed validation views.
pub const VAL_STREAM: u64 = 0x56414C;
/// Stream tag for model initialization.
pub const MODEL_STREAM: u64 = 0x4D4F44;

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    /// Contrastive component, when the objective has one.
    pub contrastive: Option<f64>,
    /// Masked value-regression component (pooled MSE), when present.
    pub masked: Option<f64>,
}

pub(super) struct ItemPass {
    pub(super) tape: Tape,
    bound: BoundModel,
    pub(super) z_a: Option<Var>,
    pub(super) z_b: Option<Var>,
    pub(super) sse: Option<Var>,
    pub(super) masked_count: usize,
}

fn masked_sse(
    tape: &mut Tape,
    bound: &BoundModel,
    outputs: Var,
    events: &[crate::data::TripletEvent],
    mask: &[bool],
) -> Result<(Var, usize), ObjectiveError> {
    let indices: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    let targets = NdArray::col(&indices.iter().map(|&i| events[i].v).collect::<Vec<_>>());
    let pred = bound.predict_values(tape, outputs, &indices)?;
    let targets = tape.constant(targets);
    let neg_t = tape.neg(targets)?;
    let diff = tape.add(pred, neg_t)?;
    let sq = tape.square(diff)?;
    let sse = tape.reduce_sum(sq)?;
    Ok((sse, indices.len()))
}

pub(super) fn build_item(
    params: &ModelParams,
    stay: &StaySequence,
    objective: Objective,
    mask_rate: f64,
    augment: &AugmentConfig,
    rng: &mut impl rand::Rng,
) -> Result<ItemPass, ObjectiveError> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params);
    let mut pass = ItemPass {
        tape: Tape::new(),
        bound,
        z_a: None,
        z_b: None,
        sse: None,
        masked_count: 0,
    };

    match objective {
        Objective::Gcl | Objective::Simclr | Objective::Combined => {
            let (view_a, view_b) = sample_pair(stay, augment, rng)?;
            let events_a = view_a.events(stay);
            let mask_a = if objective == Objective::Combined {
                sample_mask(events_a.len(), mask_rate, rng)?
            } else {
                vec![false; events_a.len()]
            };
            let out_a = pass.bound.forward(&mut tape, &events_a, &mask_a)?;
            pass.z_a = Some(pass.bound.sequence_embedding(&mut tape, out_a)?);
            if mask_a.iter().any(|&m| m) {
                let (sse, count) =
                    masked_sse(&mut tape, &pass.bound, out_a, &events_a, &mask_a)?;
                pass.sse = Some(sse);
                pass.masked_count = count;
            }
            let events_b = view_b.events(stay);
            let out_b = pass
                .bound
                .forward(&mut tape, &events_b, &vec![false; events_b.len()])?;
            pass.z_b = Some(pass.bound.sequence_embedding(&mut tape, out_b)?);
        }
        Objective::Masked | Objective::Forecast => {
            let events = &stay.events;
            let mask = if objective == Objective::Masked {
                sample_mask(events.len(), mask_rate, rng)?
            } else {
                forecast_mask(events.len())
            };
            if !mask.iter().any(|&m| m) {
                return Err(ObjectiveError::Config(format!(
                    "stay {} produced an empty mask (length {}, rate {mask_rate})",
                    stay.stay_id,
                    events.len()
                )));
            }
            let out = pass.bound.forward(&mut tape, events, &mask)?;
            let (sse, count) = masked_sse(&mut tape, &pass.bound, out, events, &mask)?;
            pass.sse = Some(sse);
            pass.masked_count = count;
        }
    }
    pass.tape = tape;
    Ok(pass)
}

pub(super) fn stack_embeddings(passes: &[ItemPass], pick_a: bool) -> Result<NdArray, ObjectiveError> {
    let rows: Vec<Vec<f64>> = passes
        .iter()
        .map(|p| {
            let var = if pick_a { p.z_a } else { p.z_b };
            var.map(|v| p.tape.value(v).row_slice(0).to_vec())
                .ok_or_else(|| ObjectiveError::Internal("missing embedding".into()))
        })
        .collect::<Result<_, _>>()?;
    NdArray::from_rows(&rows).map_err(ObjectiveError::from)
}

/// Computes the batch loss and its gradient with respect to every
/// parameter tensor (canonical order). For the variance-reduced
/// objective the per-example estimates are refreshed from this batch's
/// contrastive terms before any gradient is formed.
#[allow(clippy::too_many_arguments)]
pub fn batch_step(
    params: &ModelParams,
    items: &[(usize, &StaySequence)],
    objective: Objective,
    gcl: &GclConfig,
    augment: &AugmentConfig,
    estimator: &mut EstimatorState,
    seed: u64,
    epoch: usize,
    step: usize,
) -> Result<(Vec<NdArray>, StepStats), ObjectiveError> {
    if items.is_empty() {
        return Err(ObjectiveError::Config("empty batch".into()));
    }
    let b = items.len();

    let mut passes: Vec<ItemPass> = items
        .par_iter()
        .enumerate()
        .map(|(slot, (_, stay))| {
            let mut rng = substream(
                seed,
                &[STEP_STREAM, epoch as u64, step as u64, slot as u64],
            );
            build_item(params, stay, objective, gcl.mask_rate, augment, &mut rng)
        })
        .collect::<Result<_, _>>()?;

    // Combining graph over the stacked embeddings and pooled errors.
    let mut top = Tape::new();
    let mut z_a_top = None;
    let mut z_b_top = None;
    let mut contrastive_var = None;
    let want_contrastive = objective.is_contrastive()
        && !(objective == Objective::Combined && gcl.disable_contrastive);
    if want_contrastive {
        let za = top.param(stack_embeddings(&passes, true)?);
        let zb = top.param(stack_embeddings(&passes, false)?);
        z_a_top = Some(za);
        z_b_top = Some(zb);
        let loss = match objective {
            Objective::Simclr => info_nce_graph(&mut top, za, zb, gcl.tau)?,
            _ => {
                let z_a_val = top.value(za).clone();
                let z_b_val = top.value(zb).clone();
                let mut u_batch = Vec::with_capacity(b);
                for (slot, (index, _)) in items.iter().enumerate() {
                    let g_a = contrastive_term_g(
                        z_a_val.row_slice(slot),
                        &z_b_val,
                        slot,
                        gcl.tau,
                        gcl.exclude_self,
                    )?;
                    let g_b = contrastive_term_g(
                        z_b_val.row_slice(slot),
                        &z_a_val,
                        slot,
                        gcl.tau,
                        gcl.exclude_self,
                    )?;
                    u_batch.push(estimator.update(*index, g_a, g_b, gcl.gamma, b)?);
                }
                let (loss, _) =
                    gcl_surrogate_loss(&mut top, za, zb, gcl.tau, gcl.exclude_self, &u_batch)?;
                loss
            }
        };
        contrastive_var = Some(loss);
    }

    let mut sse_top = None;
    let mut masked_var = None;
    let total_masked: usize = passes.iter().map(|p| p.masked_count).sum();
    if total_masked > 0 {
        let sse_col = NdArray::col(
            &passes
                .iter()
                .map(|p| {
                    p.sse
                        .map(|v| p.tape.value(v).item())
                        .transpose()
                        .map(|o| o.unwrap_or(0.0))
                })
                .collect::<Result<Vec<_>, _>>()?,
        );
        let col = top.param(sse_col);
        sse_top = Some(col);
        let sum = top.reduce_sum(col)?;
        masked_var = Some(top.scale(sum, 1.0 / total_masked as f64)?);
    }

    let total = match (contrastive_var, masked_var) {
        (Some(c), Some(m)) => {
            let scaled = top.scale(m, gcl.lambda_mask)?;
            top.add(c, scaled)?
        }
        (Some(c), None) => c,
        (None, Some(m)) => m,
        (None, None) => {
            return Err(ObjectiveError::Internal(
                "batch produced neither loss component".into(),
            ))
        }
    };
    top.backward(total)?;

    let stats = StepStats {
        loss: top.value(total).item()?,
        contrastive: contrastive_var.map(|v| top.value(v).item()).transpose()?,
        masked: masked_var.map(|v| top.value(v).item()).transpose()?,
    };

    let dz_a = z_a_top.map(|v| top.grad(v)).transpose()?;
    let dz_b = z_b_top.map(|v| top.grad(v)).transpose()?;
    let dsse = sse_top.map(|v| top.grad(v)).transpose()?;

    // Push the combining gradient through each item graph and sum the
    // parameter gradients.
    let grad_sets: Vec<Vec<NdArray>> = passes
        .par_iter_mut()
        .enumerate()
        .map(|(slot, pass)| -> Result<Vec<NdArray>, ObjectiveError> {
            let mut seeds: Vec<(Var, NdArray)> = Vec::new();
            if let (Some(z_a), Some(dz)) = (pass.z_a, dz_a.as_ref()) {
                seeds.push((z_a, NdArray::new(vec![1, dz.cols()], dz.row_slice(slot).to_vec())?));
            }
            if let (Some(z_b), Some(dz)) = (pass.z_b, dz_b.as_ref()) {
                seeds.push((z_b, NdArray::new(vec![1, dz.cols()], dz.row_slice(slot).to_vec())?));
            }
            if let (Some(sse), Some(ds)) = (pass.sse, dsse.as_ref()) {
                seeds.push((sse, NdArray::scalar(ds.get(slot, 0))));
            }
            pass.tape.backward_seeded(&seeds)?;
            pass.bound.grads(&pass.tape).map_err(ObjectiveError::from)
        })
        .collect::<Result<_, _>>()?;

    let mut grads = grad_sets
        .into_iter()
        .reduce(|mut acc, set| {
            for (a, s) in acc.iter_mut().zip(&set) {
                for (x, y) in a.data_mut().iter_mut().zip(s.data()) {
                    *x += y;
                }
            }
            acc
        })
        .expect("nonempty batch");
    // Per-item graphs each carry the full 1/B (and 1/|M| pooling)
    // factor already, so summed item gradients only need the seeds'
    // scaling, which backward_seeded provided. Nothing further here,
    // but gradients for tensors untouched by an item are zeros and the
    // sum stays shape-aligned.
    for g in &mut grads {
        debug_assert!(g.is_finite());
    }

    Ok((grads, stats))
}

#[cfg(test)]
mod tests {
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::{ModelConfig, ModelParams};

    use super::*;

    fn tiny_setup(n: usize) -> (ModelParams, crate::data::Dataset) {
        let config = SynthConfig {
            n_stays: n,
            n_features: 5,
            horizon_hours: 24.0,
            ..SynthConfig::default()
        };
        let (data, _) = synth_generate(&config, 77).unwrap();
        let mut mc = ModelConfig::new(5);
        mc.d = 16;
        mc.h = 2;
        mc.layers = 1;
        mc.p = 8;
        mc.ff_mult = 2;
        let params = ModelParams::init(mc, 7).unwrap();
        (params, data)
    }

    fn batch<'a>(data: &'a crate::data::Dataset, n: usize) -> Vec<(usize, &'a StaySequence)> {
        data.stays.iter().take(n).enumerate().collect()
    }

    #[test]
    fn batch_step_is_deterministic() {
        let (params, data) = tiny_setup(6);
        let items = batch(&data, 4);
        let gcl = GclConfig::default();
        let aug = AugmentConfig::default();
        let run = || {
            let mut est = EstimatorState::new(6, false);
            batch_step(&params, &items, Objective::Gcl, &gcl, &aug, &mut est, 5, 0, 0).unwrap()
        };
        let (g1, s1) = run();
        let (g2, s2) = run();
        assert_eq!(s1.loss, s2.loss);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn objectives_produce_expected_components() {
        let (params, data) = tiny_setup(6);
        let items = batch(&data, 3);
        let gcl = GclConfig::default();
        let aug = AugmentConfig::default();
        let mut est = EstimatorState::new(6, false);
        let (_, s) = batch_step(&params, &items, Objective::Gcl, &gcl, &aug, &mut est, 1, 0, 0)
            .unwrap();
        assert!(s.contrastive.is_some() && s.masked.is_none());
        let (_, s) =
            batch_step(&params, &items, Objective::Masked, &gcl, &aug, &mut est, 1, 0, 0).unwrap();
        assert!(s.contrastive.is_none() && s.masked.is_some());
        let (_, s) = batch_step(
            &params,
            &items,
            Objective::Combined,
            &gcl,
            &aug,
            &mut est,
            1,
            0,
            0,
        )
        .unwrap();
        assert!(s.contrastive.is_some() && s.masked.is_some());
        let expected = s.contrastive.unwrap() + gcl.lambda_mask * s.masked.unwrap();
        assert!((s.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn gcl_updates_estimates_for_batch_members_only() {
        let (params, data) = tiny_setup(6);
        let items: Vec<(usize, &StaySequence)> =
            vec![(2, &data.stays[2]), (5, &data.stays[5])];
        let gcl = GclConfig::default();
        let aug = AugmentConfig::default();
        let mut est = EstimatorState::new(6, false);
        batch_step(&params, &items, Objective::Gcl, &gcl, &aug, &mut est, 3, 0, 0).unwrap();
        assert!(est.get(2) > 0.0 && est.get(5) > 0.0);
        assert_eq!(est.get(0), 0.0);
        assert_eq!(est.get(1), 0.0);
    }

    #[test]
    fn simclr_leaves_estimates_untouched() {
        let (params, data) = tiny_setup(4);
        let items = batch(&data, 3);
        let gcl = GclConfig::default();
        let aug = AugmentConfig::default();
        let mut est = EstimatorState::new(4, false);
        batch_step(&params, &items, Objective::Simclr, &gcl, &aug, &mut est, 3, 0, 0).unwrap();
        assert!(est.stats().is_none());
    }

    #[test]
    fn whole_step_gradient_matches_central_differences_for_masked() {
        // End to end finite-difference check through item tapes, the
        // combining tape, and the seeded backward pass.
        let (params, data) = tiny_setup(4);
        let items = batch(&data, 2);
        let gcl = GclConfig::default();
        let aug = AugmentConfig::default();
        let loss_of = |p: &ModelParams| {
            let mut est = EstimatorState::new(4, false);
            let (_, s) =
                batch_step(p, &items, Objective::Masked, &gcl, &aug, &mut est, 11, 0, 0).unwrap();
            s.loss
        };
        let mut est = EstimatorState::new(4, false);
        let (grads, _) =
            batch_step(&params, &items, Objective::Masked, &gcl, &aug, &mut est, 11, 0, 0)
                .unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut checked = 0usize;
        for (k, (_, tensor)) in params.named().iter().enumerate() {
            let len = tensor.data().len();
            let stride = (len / 5).max(1);
            for i in (0..len).step_by(stride) {
                let mut plus = params.clone();
                plus.tensors_mut()[k].data_mut()[i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[k].data_mut()[i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let g = grads[k].data()[i];
                worst = worst.max((g - fd).abs() / fd.abs().max(1.0));
                checked += 1;
            }
        }
        assert!(checked > 50);
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn whole_step_gradient_matches_central_differences_for_gcl() {
        // The estimator is refreshed identically at every probe, so
        // finite differences see the same detached coefficients as the
        // analytic step only if u depends on params; freeze u instead
        // by reusing one estimator state and gamma = 1 on a single
        // batch: every probe recomputes u from its own embeddings, so
        // probe twice with a *fixed* estimator fed through strict mode
        // is not possible. Instead check the surrogate directly: fix
        // u by running the analytic step first, then probe with an
        // estimator that always reproduces those values via gamma = 1
        // and a pre-seeded state. Simpler and still end to end: treat
        // u as a function of params (gamma = 1), which makes the
        // surrogate value differentiable as the pooled log loss; its
        // analytic gradient is what the step computes.
        let (params, data) = tiny_setup(4);
        let items = batch(&data, 3);
        let gcl = GclConfig {
            gamma: 1.0,
            ..GclConfig::default()
        };
        let aug = AugmentConfig::default();
        let pooled_loss = |p: &ModelParams| {
            // Pooled log objective mean_i [-s_ii + ln((g_a+g_b)/(2B))]
            // over the same deterministic views.
            let mut est = EstimatorState::new(4, false);
            let (_, s) =
                batch_step(p, &items, Objective::Gcl, &gcl, &aug, &mut est, 13, 0, 0).unwrap();
            let b = items.len() as f64;
            // Convert the surrogate value to the pooled value: the two
            // differ per item by u_i - ln u_i - ln(2B) + 1... avoid
            // that algebra by recomputing from the estimator, whose
            // post-step u_i equal (g_a + g_b) / (2B) under gamma = 1.
            let mut total = 0.0;
            for (slot, (idx, _)) in items.iter().enumerate() {
                let u = est.get(*idx);
                // surrogate per-item: -s_ii + (g_a+g_b)/(2B u) = -s_ii + 1
                // pooled per-item: -s_ii + ln u
                // so pooled = surrogate - 1 + ln u, per item.
                let _ = slot;
                total += u.ln() - 1.0;
            }
            s.loss + total / b
        };
        let mut est = EstimatorState::new(4, false);
        let (grads, _) =
            batch_step(&params, &items, Objective::Gcl, &gcl, &aug, &mut est, 13, 0, 0).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, (_, tensor)) in params.named().iter().enumerate() {
            let len = tensor.data().len();
            let stride = (len / 3).max(1);
            for i in (0..len).step_by(stride) {
                let mut plus = params.clone();
                plus.tensors_mut()[k].data_mut()[i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[k].data_mut()[i] -= h;
                let fd = (pooled_loss(&plus) - pooled_loss(&minus)) / (2.0 * h);
                let g = grads[k].data()[i];
                worst = worst.max((g - fd).abs() / fd.abs().max(1.0));
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn forecast_masks_only_the_tail() {
        let (params, data) = tiny_setup(4);
        let items = batch(&data, 2);
        let gcl = GclConfig::default();
        let aug = AugmentConfig::default();
        let mut est = EstimatorState::new(4, false);
        let (_, s) = batch_step(
            &params,
            &items,
            Objective::Forecast,
            &gcl,
            &aug,
            &mut est,
            2,
            0,
            0,
        )
        .unwrap();
        assert!(s.masked.unwrap() > 0.0);
    }
}
