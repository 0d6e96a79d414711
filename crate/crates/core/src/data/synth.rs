//! Synthetic labeled corpora for desk-scale experiments.
//!
//! Each stay follows a 2-d latent random walk on an hourly grid;
//! features observe a fixed linear projection of the interpolated
//! latent state plus noise, at times drawn from per-feature Poisson
//! processes. Mortality thresholds a fixed projection of the
//! time-averaged latent state (with optional label flips) and the 25
//! phenotype bits are signs of other projections of the same average,
//! so every label rewards aggregating evidence across the whole stay.
//!
//! Streams are keyed per (seed, stay) and (seed, feature), never by
//! the feature count, so an `n_features = 69` corpus contains the
//! `n_features = 17` corpus as its first 17 indices, event for event.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::types::{Dataset, FeatureKind, StaySequence, TripletEvent, Vocabulary, PHENOTYPE_COUNT};
use super::DataError;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_stays: usize,
    pub n_features: usize,
    /// Hours of data generated per stay.
    pub horizon_hours: f64,
    /// Per-feature Poisson event rate drawn uniformly from this range
    /// (events per hour).
    pub rate_range: (f64, f64),
    /// Probability a mortality label is flipped.
    pub label_noise: f64,
    /// Standard deviation of each hourly latent random-walk increment.
    pub latent_step: f64,
    /// Observation noise added to each measurement, in latent units.
    pub obs_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stays: 200,
            n_features: 17,
            horizon_hours: 48.0,
            rate_range: (0.08, 0.16),
            label_noise: 0.1,
            latent_step: 0.35,
            obs_noise: 0.3,
        }
    }
}

const STREAM_FEATURE: u64 = 1;
const STREAM_STAY: u64 = 2;
const STREAM_EVENTS: u64 = 3;
const STREAM_LABEL: u64 = 4;
const STREAM_PHENOTYPE: u64 = 5;

/// Mortality threshold quantile: 75th percentile of the analytic
/// mean-score distribution, giving ~25% prevalence before flips.
const MORTALITY_Z: f64 = 0.674_489_750_196_081_7;

struct FeatureParams {
    loading: [f64; 2],
    scale: f64,
    offset: f64,
    rate: f64,
}

fn feature_params(seed: u64, j: usize, rate_range: (f64, f64)) -> FeatureParams {
    let mut rng = substream(seed, &[STREAM_FEATURE, j as u64]);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let gain: f64 = rng.random_range(0.8..1.2);
    let scale: f64 = rng.random_range(0.5..2.0);
    let offset: f64 = rng.random_range(-3.0..3.0);
    let rate: f64 = rng.random_range(rate_range.0..=rate_range.1);
    FeatureParams {
        loading: [gain * angle.cos(), gain * angle.sin()],
        scale,
        offset,
        rate,
    }
}

fn latent_path(seed: u64, i: usize, steps: usize, step_sigma: f64) -> Vec<[f64; 2]> {
    let mut rng = substream(seed, &[STREAM_STAY, i as u64]);
    let mut path = Vec::with_capacity(steps + 1);
    let mut x = [
        StandardNormal.sample(&mut rng),
        StandardNormal.sample(&mut rng),
    ];
    path.push(x);
    for _ in 0..steps {
        let dx: f64 = StandardNormal.sample(&mut rng);
        let dy: f64 = StandardNormal.sample(&mut rng);
        x = [x[0] + step_sigma * dx, x[1] + step_sigma * dy];
        path.push(x);
    }
    path
}

fn latent_at(path: &[[f64; 2]], t: f64) -> [f64; 2] {
    let k = (t.floor() as usize).min(path.len() - 2);
    let frac = t - k as f64;
    [
        path[k][0] * (1.0 - frac) + path[k + 1][0] * frac,
        path[k][1] * (1.0 - frac) + path[k + 1][1] * frac,
    ]
}

/// Generates a labeled synthetic dataset; byte-identical for identical
/// `(config, seed)`.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<(Dataset, Vocabulary), DataError> {
    if config.n_features < 1 {
        return Err(DataError::Config("n_features must be at least 1".into()));
    }
    if config.n_stays < 1 {
        return Err(DataError::Config("n_stays must be at least 1".into()));
    }
    if !(config.horizon_hours > 0.0) {
        return Err(DataError::Config("horizon_hours must be positive".into()));
    }
    if config.rate_range.0 <= 0.0 || config.rate_range.1 < config.rate_range.0 {
        return Err(DataError::Config(format!(
            "invalid rate range {:?}",
            config.rate_range
        )));
    }

    let mut vocab = Vocabulary::new();
    let features: Vec<FeatureParams> = (0..config.n_features)
        .map(|j| {
            vocab.intern(&format!("f{j:02}"), FeatureKind::Continuous);
            feature_params(seed, j, config.rate_range)
        })
        .collect();

    let steps = config.horizon_hours.ceil() as usize;
    let phen_dirs: Vec<[f64; 2]> = (0..PHENOTYPE_COUNT)
        .map(|k| {
            let mut rng = substream(seed, &[STREAM_PHENOTYPE, k as u64]);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            [angle.cos(), angle.sin()]
        })
        .collect();
    // Labels project the time-averaged latent state. With x_k = x_0 +
    // s * sum_{j<=k} xi_j averaged over k = 0..H, each component has
    // variance 1 + s^2 * H(2H+1) / (6(H+1)).
    let h = steps as f64;
    let s2 = config.latent_step * config.latent_step;
    let score_std = (1.0 + s2 * h * (2.0 * h + 1.0) / (6.0 * (h + 1.0))).sqrt();
    let threshold = MORTALITY_Z * score_std;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;

    let mut stays = Vec::with_capacity(config.n_stays);
    for i in 0..config.n_stays {
        let path = latent_path(seed, i, steps, config.latent_step);

        let mut events = Vec::new();
        for (j, fp) in features.iter().enumerate() {
            let mut rng = substream(seed, &[STREAM_EVENTS, i as u64, j as u64]);
            let gap = Exp::new(fp.rate).expect("positive rate");
            let mut t: f64 = gap.sample(&mut rng);
            while t < config.horizon_hours {
                let x = latent_at(&path, t);
                let noise: f64 = StandardNormal.sample(&mut rng);
                let signal = fp.loading[0] * x[0] + fp.loading[1] * x[1];
                let v = fp.scale * (signal + config.obs_noise * noise) + fp.offset;
                events.push(TripletEvent { t, v, f: j });
                t += gap.sample(&mut rng);
            }
        }
        if events.is_empty() {
            // Degenerate configs (tiny horizon or rate) still owe one
            // event per stay.
            let x = latent_at(&path, 0.0);
            let fp = &features[0];
            let v = fp.scale * (fp.loading[0] * x[0] + fp.loading[1] * x[1]) + fp.offset;
            events.push(TripletEvent { t: 0.0, v, f: 0 });
        }

        let mean = path.iter().fold([0.0f64; 2], |acc, p| {
            [acc[0] + p[0], acc[1] + p[1]]
        });
        let mean = [mean[0] / path.len() as f64, mean[1] / path.len() as f64];

        let score = (mean[0] + mean[1]) * inv_sqrt2;
        let mut label = u8::from(score > threshold);
        let mut label_rng = substream(seed, &[STREAM_LABEL, i as u64]);
        if label_rng.random::<f64>() < config.label_noise {
            label = 1 - label;
        }
        let phenotypes: Vec<u8> = phen_dirs
            .iter()
            .map(|d| u8::from(d[0] * mean[0] + d[1] * mean[1] > 0.0))
            .collect();

        let mut stay = StaySequence {
            stay_id: format!("synth-{i:05}"),
            events,
            mortality: Some(label),
            phenotypes: Some(phenotypes),
        };
        stay.sort_events();
        stays.push(stay);
    }

    Ok((
        Dataset::new(stays, format!("synth seed {seed}")),
        vocab,
    ))
}
