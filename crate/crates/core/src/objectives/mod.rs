//! Pretraining objectives: contrastive losses with and without the
//! per-example moving-average estimator, masked value regression, the
//! combined and forecasting variants, and the optimizer loop.

pub mod contrastive;
pub mod estimator;
pub mod masking;
pub mod optim;
pub mod step;
pub mod train;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("objective config: {0}")]
    Config(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which loss drives pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Variance-reduced contrastive loss with the per-example
    /// estimator.
    Gcl,
    /// Plain in-batch contrastive loss (no estimator).
    Simclr,
    /// Masked value regression on the full sequence.
    Masked,
    /// Contrastive plus masked regression on the global view.
    Combined,
    /// Mask the final tenth of each sequence.
    Forecast,
}

impl Objective {
    pub fn parse(name: &str) -> Result<Self, ObjectiveError> {
        match name {
            "gcl" => Ok(Self::Gcl),
            "simclr" => Ok(Self::Simclr),
            "masked" => Ok(Self::Masked),
            "combined" => Ok(Self::Combined),
            "forecast" => Ok(Self::Forecast),
            other => Err(ObjectiveError::Config(format!(
                "unknown objective '{other}' (expected gcl, simclr, masked, combined or forecast)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gcl => "gcl",
            Self::Simclr => "simclr",
            Self::Masked => "masked",
            Self::Combined => "combined",
            Self::Forecast => "forecast",
        }
    }

    /// Whether the loss has a paired-view contrastive component.
    pub fn is_contrastive(self) -> bool {
        matches!(self, Self::Gcl | Self::Simclr | Self::Combined)
    }

    /// Whether the per-example estimator is maintained.
    pub fn uses_estimator(self) -> bool {
        matches!(self, Self::Gcl | Self::Combined)
    }
}

/// Hyperparameters shared by the contrastive and masking objectives.
#[derive(Debug, Clone, Copy)]
pub struct GclConfig {
    pub tau: f64,
    pub gamma: f64,
    pub lambda_mask: f64,
    pub mask_rate: f64,
    /// Drop the j = i term from the contrastive sums.
    pub exclude_self: bool,
    /// Literal first-touch estimator update (see [`estimator`]).
    pub strict_eq2: bool,
    /// Ablation: drop the contrastive path from the combined loss.
    pub disable_contrastive: bool,
}

impl Default for GclConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            gamma: 0.9,
            lambda_mask: 1.0,
            mask_rate: 0.10,
            exclude_self: false,
            strict_eq2: false,
            disable_contrastive: false,
        }
    }
}

impl GclConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.tau <= 0.0 {
            return Err(ObjectiveError::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ObjectiveError::Config(format!(
                "gamma must lie in (0,1], got {}",
                self.gamma
            )));
        }
        if self.lambda_mask < 0.0 {
            return Err(ObjectiveError::Config(format!(
                "lambda_mask must be nonnegative, got {}",
                self.lambda_mask
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(ObjectiveError::Config(format!(
                "mask_rate must lie in [0,1], got {}",
                self.mask_rate
            )));
        }
        Ok(())
    }
}

pub use contrastive::{contrastive_term_g, gcl_surrogate_loss, info_nce, info_nce_graph};
pub use estimator::EstimatorState;
pub use masking::{forecast_mask, masked_loss, sample_mask};
pub use optim::{cosine_warmup_lr, Optimizer, OptimizerConfig, OptimizerKind};
pub use step::{batch_step, StepStats};
pub use train::{pretrain, EpochLog, PretrainConfig, PretrainOutcome};
