//! The pretraining loop: shuffled batches, estimator refreshes before
//! each gradient, optimizer steps under a warmup-cosine schedule, and
//! checkpoint selection on a validation score.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::augment::AugmentConfig;
use crate::data::{Dataset, StaySequence};
use crate::model::{ModelConfig, ModelParams};
use crate::rng::{derive_seed, substream};

use super::contrastive::info_nce;
use super::estimator::EstimatorState;
use super::optim::{cosine_warmup_lr, Optimizer, OptimizerConfig};
use super::step::{
    batch_step, build_item, stack_embeddings, MODEL_STREAM, SHUFFLE_STREAM, VAL_STREAM,
};
use super::{GclConfig, Objective, ObjectiveError};

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub objective: Objective,
    pub gcl: GclConfig,
    pub augment: AugmentConfig,
    pub optimizer: OptimizerConfig,
    pub lr: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Gcl,
            gcl: GclConfig::default(),
            augment: AugmentConfig::default(),
            optimizer: OptimizerConfig::default(),
            lr: 1e-3,
            epochs: 30,
            warmup_epochs: 5,
            batch_size: 64,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        self.gcl.validate()?;
        self.augment.validate()?;
        self.optimizer.validate()?;
        if self.lr <= 0.0 {
            return Err(ObjectiveError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(ObjectiveError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ObjectiveError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub contrastive: Option<f64>,
    pub masked: Option<f64>,
    pub val_loss: f64,
    /// (mean, min, max) of touched estimates, for estimator runs.
    pub u_stats: Option<(f64, f64, f64)>,
    pub score: f64,
    pub improved: bool,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub best: ModelParams,
    pub last: ModelParams,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
}

fn eligible(stay: &StaySequence, objective: Objective) -> bool {
    if objective.is_contrastive() {
        stay.events.len() >= 2
    } else {
        !stay.events.is_empty()
    }
}

/// Validation loss with views and masks fixed per item, so epochs
/// compare like for like. Contrastive objectives are scored with the
/// plain in-batch loss (estimates are training-set state and do not
/// extend to held-out examples); masked components use pooled MSE.
fn validation_loss(
    params: &ModelParams,
    val: &Dataset,
    config: &PretrainConfig,
    seed: u64,
) -> Result<Option<f64>, ObjectiveError> {
    let objective = config.objective;
    let indices: Vec<usize> = (0..val.stays.len())
        .filter(|&i| eligible(&val.stays[i], objective))
        .collect();
    if indices.is_empty() {
        return Ok(None);
    }
    let want_contrastive = objective.is_contrastive()
        && !(objective == Objective::Combined && config.gcl.disable_contrastive);

    let mut total = 0.0;
    let mut weight = 0.0;
    for chunk in indices.chunks(config.batch_size) {
        if want_contrastive && chunk.len() < 2 {
            continue;
        }
        let passes = chunk
            .par_iter()
            .map(|&i| {
                let mut rng = substream(seed, &[VAL_STREAM, i as u64]);
                build_item(
                    params,
                    &val.stays[i],
                    objective,
                    config.gcl.mask_rate,
                    &config.augment,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut batch_loss = 0.0;
        if want_contrastive {
            let z_a = stack_embeddings(&passes, true)?;
            let z_b = stack_embeddings(&passes, false)?;
            batch_loss += info_nce(&z_a, &z_b, config.gcl.tau)?;
        }
        let masked_total: usize = passes.iter().map(|p| p.masked_count).sum();
        if masked_total > 0 {
            let sse: f64 = passes
                .iter()
                .filter_map(|p| p.sse.map(|v| p.tape.value(v).item()))
                .collect::<Result<Vec<_>, _>>()?
                .iter()
                .sum();
            let mse = sse / masked_total as f64;
            batch_loss += if want_contrastive {
                config.gcl.lambda_mask * mse
            } else {
                mse
            };
        }
        total += batch_loss * chunk.len() as f64;
        weight += chunk.len() as f64;
    }
    Ok((weight > 0.0).then(|| total / weight))
}

/// Full pretraining run. Model weights come from `seed`, as do the
/// per-epoch shuffles and every view/mask draw, so two calls with the
/// same inputs produce identical outcomes. `select` overrides the
/// default checkpoint score of negative validation loss; `on_epoch`
/// observes each epoch's log line and the current weights as they are
/// produced (e.g. to persist improved checkpoints).
pub fn pretrain(
    model_config: ModelConfig,
    train: &Dataset,
    val: &Dataset,
    config: &PretrainConfig,
    seed: u64,
    mut select: Option<&mut dyn FnMut(&ModelParams, usize) -> Result<f64, ObjectiveError>>,
    mut on_epoch: Option<&mut dyn FnMut(&EpochLog, &ModelParams)>,
) -> Result<PretrainOutcome, ObjectiveError> {
    config.validate()?;
    let objective = config.objective;
    let eligible_indices: Vec<usize> = (0..train.stays.len())
        .filter(|&i| eligible(&train.stays[i], objective))
        .collect();
    if eligible_indices.is_empty() {
        return Err(ObjectiveError::Config(format!(
            "no training stays usable for the {} objective",
            objective.as_str()
        )));
    }

    let mut params = ModelParams::init(model_config, derive_seed(seed, &[MODEL_STREAM]))?;
    let mut optimizer = Optimizer::new(config.optimizer, &params)?;
    let mut estimator = EstimatorState::new(train.stays.len(), config.gcl.strict_eq2);

    let mut best = params.clone();
    let mut best_epoch = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = cosine_warmup_lr(config.lr, epoch, config.warmup_epochs, config.epochs);
        let mut order = eligible_indices.clone();
        let mut shuffle_rng = substream(seed, &[SHUFFLE_STREAM, epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut contrastive_sum: Option<f64> = None;
        let mut masked_sum: Option<f64> = None;
        let mut weight = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            if objective.is_contrastive() && chunk.len() < 2 {
                continue;
            }
            let items: Vec<(usize, &StaySequence)> =
                chunk.iter().map(|&i| (i, &train.stays[i])).collect();
            let (grads, stats) = batch_step(
                &params,
                &items,
                objective,
                &config.gcl,
                &config.augment,
                &mut estimator,
                seed,
                epoch,
                step,
            )?;
            optimizer.step(&mut params, &grads, lr)?;
            let w = chunk.len() as f64;
            loss_sum += stats.loss * w;
            if let Some(c) = stats.contrastive {
                *contrastive_sum.get_or_insert(0.0) += c * w;
            }
            if let Some(m) = stats.masked {
                *masked_sum.get_or_insert(0.0) += m * w;
            }
            weight += w;
        }
        if weight == 0.0 {
            return Err(ObjectiveError::Config(
                "every batch was skipped; increase the dataset or lower batch_size".into(),
            ));
        }
        let train_loss = loss_sum / weight;

        let val_loss = validation_loss(&params, val, config, seed)?.unwrap_or(train_loss);
        let score = match select.as_mut() {
            Some(f) => f(&params, epoch)?,
            None => -val_loss,
        };
        let improved = score > best_score;
        if improved {
            best_score = score;
            best_epoch = epoch;
            best = params.clone();
        }

        let log = EpochLog {
            epoch,
            lr,
            train_loss,
            contrastive: contrastive_sum.map(|s| s / weight),
            masked: masked_sum.map(|s| s / weight),
            val_loss,
            u_stats: if objective.uses_estimator() {
                estimator.stats()
            } else {
                None
            },
            score,
            improved,
        };
        if let Some(f) = on_epoch.as_mut() {
            f(&log, &params);
        }
        logs.push(log);
    }

    Ok(PretrainOutcome {
        best,
        last: params,
        best_epoch,
        logs,
    })
}

#[cfg(test)]
mod tests {
    use crate::data::{synth_generate, SynthConfig};

    use super::*;

    fn tiny_data(n: usize, seed: u64) -> Dataset {
        let config = SynthConfig {
            n_stays: n,
            n_features: 5,
            horizon_hours: 12.0,
            ..SynthConfig::default()
        };
        synth_generate(&config, seed).unwrap().0
    }

    fn tiny_model() -> ModelConfig {
        let mut mc = ModelConfig::new(5);
        mc.d = 16;
        mc.h = 2;
        mc.layers = 1;
        mc.p = 8;
        mc.ff_mult = 2;
        mc
    }

    fn tiny_run(objective: Objective, epochs: usize) -> PretrainOutcome {
        let train = tiny_data(8, 3);
        let val = tiny_data(4, 4);
        let config = PretrainConfig {
            objective,
            epochs,
            warmup_epochs: 1,
            batch_size: 4,
            ..PretrainConfig::default()
        };
        pretrain(tiny_model(), &train, &val, &config, 11, None, None).unwrap()
    }

    #[test]
    fn same_seed_reproduces_the_run_bit_for_bit() {
        let a = tiny_run(Objective::Gcl, 2);
        let b = tiny_run(Objective::Gcl, 2);
        assert_eq!(a.best_epoch, b.best_epoch);
        for (la, lb) in a.logs.iter().zip(&b.logs) {
            assert_eq!(la.train_loss, lb.train_loss);
            assert_eq!(la.val_loss, lb.val_loss);
        }
        for ((_, ta), (_, tb)) in a.last.named().iter().zip(b.last.named()) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn estimator_stats_appear_only_for_estimator_objectives() {
        let gcl = tiny_run(Objective::Gcl, 1);
        assert!(gcl.logs[0].u_stats.is_some());
        let simclr = tiny_run(Objective::Simclr, 1);
        assert!(simclr.logs[0].u_stats.is_none());
        let masked = tiny_run(Objective::Masked, 1);
        assert!(masked.logs[0].u_stats.is_none());
    }

    #[test]
    fn best_checkpoint_tracks_the_score() {
        let out = tiny_run(Objective::Masked, 3);
        let best_by_val = out
            .logs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .unwrap()
            .epoch;
        assert_eq!(out.best_epoch, best_by_val);
        assert!(out.logs[out.best_epoch].improved);
    }

    #[test]
    fn selection_callback_overrides_validation_loss() {
        let train = tiny_data(8, 3);
        let val = tiny_data(4, 4);
        let config = PretrainConfig {
            objective: Objective::Masked,
            epochs: 3,
            warmup_epochs: 1,
            batch_size: 4,
            ..PretrainConfig::default()
        };
        let mut scores = vec![0.1, 0.9, 0.2].into_iter();
        let mut select = |_: &ModelParams, _: usize| Ok(scores.next().unwrap());
        let out = pretrain(
            tiny_model(),
            &train,
            &val,
            &config,
            11,
            Some(&mut select),
            None,
        )
        .unwrap();
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn training_reduces_the_masked_loss() {
        let out = tiny_run(Objective::Masked, 8);
        let first = out.logs.first().unwrap().train_loss;
        let last = out.logs.last().unwrap().train_loss;
        assert!(
            last < first,
            "masked loss should fall: first {first}, last {last}"
        );
    }

    #[test]
    fn rejects_degenerate_configs() {
        let train = tiny_data(4, 3);
        let val = tiny_data(2, 4);
        let bad = PretrainConfig {
            lr: 0.0,
            ..PretrainConfig::default()
        };
        assert!(matches!(
            pretrain(tiny_model(), &train, &val, &bad, 1, None, None),
            Err(ObjectiveError::Config(_))
        ));
    }
}
