//! Parameter updates and the learning-rate schedule.

use crate::model::ModelParams;
use crate::numerics::NdArray;

use super::ObjectiveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Moving-average gradient step: v <- (1 - beta1) v + beta1 g,
    /// w <- w - lr v. At beta1 = 1 this is plain gradient descent.
    Momentum,
    /// Adam with bias correction and decoupled weight decay applied
    /// before the adaptive step.
    Adam,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.beta1 > 0.0 && self.beta1 <= 1.0) {
            return Err(ObjectiveError::Config(format!(
                "beta1 must lie in (0,1], got {}",
                self.beta1
            )));
        }
        if !(0.0..1.0).contains(&self.beta2) && self.kind == OptimizerKind::Adam {
            return Err(ObjectiveError::Config(format!(
                "beta2 must lie in [0,1), got {}",
                self.beta2
            )));
        }
        if self.eps <= 0.0 {
            return Err(ObjectiveError::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(ObjectiveError::Config(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Stateful optimizer whose buffers mirror the canonical tensor order
/// of the parameters it was built against.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    m1: Vec<Vec<f64>>,
    m2: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ModelParams) -> Result<Self, ObjectiveError> {
        config.validate()?;
        let sizes: Vec<usize> = params
            .named()
            .iter()
            .map(|(_, t)| t.data().len())
            .collect();
        let m1 = sizes.iter().map(|s| vec![0.0; *s]).collect();
        let m2 = match config.kind {
            OptimizerKind::Adam => sizes.iter().map(|s| vec![0.0; *s]).collect(),
            OptimizerKind::Momentum => Vec::new(),
        };
        Ok(Self {
            config,
            m1,
            m2,
            t: 0,
        })
    }

    /// One in-place update; `grads` must follow canonical tensor order.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[NdArray],
        lr: f64,
    ) -> Result<(), ObjectiveError> {
        let lrs = vec![lr; grads.len()];
        self.step_grouped(params, grads, &lrs)
    }

    /// Like [`step`](Self::step) with one learning rate per tensor,
    /// for fine-tuning recipes that treat the head and the backbone
    /// differently.
    pub fn step_grouped(
        &mut self,
        params: &mut ModelParams,
        grads: &[NdArray],
        lrs: &[f64],
    ) -> Result<(), ObjectiveError> {
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() || lrs.len() != tensors.len() {
            return Err(ObjectiveError::Internal(format!(
                "{} gradient tensors and {} rates for {} parameters",
                grads.len(),
                lrs.len(),
                tensors.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        for (k, tensor) in tensors.iter_mut().enumerate() {
            let lr = lrs[k];
            let g = grads[k].data();
            if g.len() != self.m1[k].len() {
                return Err(ObjectiveError::Internal(format!(
                    "gradient tensor {k} has {} entries, expected {}",
                    g.len(),
                    self.m1[k].len()
                )));
            }
            let w = tensor.data_mut();
            match c.kind {
                OptimizerKind::Momentum => {
                    let v = &mut self.m1[k];
                    for i in 0..w.len() {
                        v[i] = (1.0 - c.beta1) * v[i] + c.beta1 * g[i];
                        w[i] -= lr * (v[i] + c.weight_decay * w[i]);
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(self.t as i32);
                    let bc2 = 1.0 - c.beta2.powi(self.t as i32);
                    let m = &mut self.m1[k];
                    let v = &mut self.m2[k];
                    for i in 0..w.len() {
                        w[i] *= 1.0 - lr * c.weight_decay;
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Linear warmup over the first `warmup` epochs, then a half-cosine
/// decay from the base rate toward zero at `total` epochs.
pub fn cosine_warmup_lr(base: f64, epoch: usize, warmup: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    if warmup > 0 && epoch < warmup {
        return base * (epoch + 1) as f64 / warmup as f64;
    }
    if total <= warmup {
        return base;
    }
    let progress = ((epoch - warmup) as f64 / (total - warmup) as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
