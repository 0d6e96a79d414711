//! Self-supervised pretraining for long, irregularly sampled event
//! time series.
//!
//! Events are (time, value, feature) triplets; a causal transformer
//! summarizes each sequence into an embedding trained with a
//! variance-reduced contrastive objective plus masked-value
//! regression, then evaluated with linear probes, semi-supervised
//! fine-tuning, and imputation.

pub mod augment;
pub mod cli;
pub mod data;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod rng;
