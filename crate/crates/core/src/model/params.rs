use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;

use crate::numerics::NdArray;
use crate::rng::substream;

use super::ModelError;

const MODEL_STREAM: u64 = 0x4D4F44;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Model width.
    pub d: usize,
    /// Attention heads.
    pub h: usize,
    /// Transformer layers.
    pub layers: usize,
    /// Projection (contrastive embedding) width.
    pub p: usize,
    /// Feed-forward width multiplier.
    pub ff_mult: usize,
    /// Vocabulary size (feature count).
    pub vocab_size: usize,
    /// Classifier output width (1 mortality, 25 phenotypes).
    pub n_classes: usize,
    /// When false the contrastive embedding is the normalized class
    /// token itself and `p` is forced to `d`.
    pub use_projection: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            d: 64,
            h: 4,
            layers: 2,
            p: 32,
            ff_mult: 4,
            vocab_size,
            n_classes: 1,
            use_projection: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.h == 0 || self.layers == 0 || self.ff_mult == 0 {
            return Err(ModelError::Config("zero-sized model dimension".into()));
        }
        if self.d % self.h != 0 {
            return Err(ModelError::Config(format!(
                "width {} not divisible by {} heads",
                self.d, self.h
            )));
        }
        if self.vocab_size == 0 {
            return Err(ModelError::Config("empty vocabulary".into()));
        }
        if self.use_projection && self.p == 0 {
            return Err(ModelError::Config("projection width must be positive".into()));
        }
        Ok(())
    }

    /// Width of the contrastive embedding z.
    pub fn embedding_width(&self) -> usize {
        if self.use_projection {
            self.p
        } else {
            self.d
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: NdArray,
    pub ln1_bias: NdArray,
    pub wq: NdArray,
    pub wk: NdArray,
    pub wv: NdArray,
    pub wo: NdArray,
    pub ln2_gain: NdArray,
    pub ln2_bias: NdArray,
    pub ff1_w: NdArray,
    pub ff1_b: NdArray,
    pub ff2_w: NdArray,
    pub ff2_b: NdArray,
}

/// All trainable tensors. The order of [`ModelParams::named`] is the
/// canonical flattening used by optimizers, gradients, and
/// checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub value_w: NdArray,
    pub value_b: NdArray,
    pub feature_table: NdArray,
    pub time_omega: NdArray,
    pub time_phi: NdArray,
    pub cls_token: NdArray,
    pub mask_token: NdArray,
    pub layers: Vec<LayerParams>,
    pub final_ln_gain: NdArray,
    pub final_ln_bias: NdArray,
    pub value_head_w: NdArray,
    pub value_head_b: NdArray,
    pub proj_w: NdArray,
    pub proj_b: NdArray,
    pub classifier_w: NdArray,
    pub classifier_b: NdArray,
}

fn randn(rng: &mut ChaCha8Rng, m: usize, n: usize, std: f64) -> NdArray {
    let data = (0..m * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    NdArray::new(vec![m, n], data).expect("shape consistent")
}

fn xavier(rng: &mut ChaCha8Rng, m: usize, n: usize) -> NdArray {
    randn(rng, m, n, (2.0 / (m + n) as f64).sqrt())
}

impl ModelParams {
    /// Seeded initialization: Xavier for linear maps, small normal for
    /// tables and tokens, log-spaced frequencies for the time encoder.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = substream(seed, &[MODEL_STREAM]);
        let d = config.d;
        let ff = config.ff_mult * d;

        // Periods log-spaced from half an hour to four days; the
        // first component is the linear (non-periodic) term.
        let mut omega = vec![0.04];
        let mut phi = vec![0.0];
        for k in 1..d {
            let frac = (k - 1) as f64 / (d.max(2) - 2).max(1) as f64;
            let period = 0.5 * (96.0f64 / 0.5).powf(frac);
            omega.push(std::f64::consts::TAU / period);
            phi.push(rng.random_range(0.0..std::f64::consts::TAU));
        }

        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gain: NdArray::full(1, d, 1.0),
                ln1_bias: NdArray::zeros(1, d),
                wq: xavier(&mut rng, d, d),
                wk: xavier(&mut rng, d, d),
                wv: xavier(&mut rng, d, d),
                wo: xavier(&mut rng, d, d),
                ln2_gain: NdArray::full(1, d, 1.0),
                ln2_bias: NdArray::zeros(1, d),
                ff1_w: xavier(&mut rng, d, ff),
                ff1_b: NdArray::zeros(1, ff),
                ff2_w: xavier(&mut rng, ff, d),
                ff2_b: NdArray::zeros(1, d),
            })
            .collect();

        Ok(Self {
            value_w: xavier(&mut rng, 1, d),
            value_b: NdArray::zeros(1, d),
            feature_table: randn(&mut rng, config.vocab_size, d, 0.02),
            time_omega: NdArray::new(vec![1, d], omega).expect("shape consistent"),
            time_phi: NdArray::new(vec![1, d], phi).expect("shape consistent"),
            cls_token: randn(&mut rng, 1, d, 0.02),
            mask_token: randn(&mut rng, 1, d, 0.02),
            layers,
            final_ln_gain: NdArray::full(1, d, 1.0),
            final_ln_bias: NdArray::zeros(1, d),
            // Kept small so an untrained head predicts near zero: on
            // standardized targets its reconstruction error then starts
            // at the target variance instead of above it.
            value_head_w: randn(&mut rng, d, 1, 0.02),
            value_head_b: NdArray::zeros(1, 1),
            proj_w: xavier(&mut rng, d, config.p),
            proj_b: NdArray::zeros(1, config.p),
            classifier_w: xavier(&mut rng, d, config.n_classes),
            classifier_b: NdArray::zeros(1, config.n_classes),
            config,
        })
    }

    /// Replaces the classifier head with a freshly initialized one of
    /// a new output width (e.g. switching mortality -> phenotypes).
    pub fn reset_classifier(&mut self, n_classes: usize, seed: u64) {
        let mut rng = substream(seed, &[MODEL_STREAM, 0xC1A5]);
        self.config.n_classes = n_classes;
        self.classifier_w = xavier(&mut rng, self.config.d, n_classes);
        self.classifier_b = NdArray::zeros(1, n_classes);
    }

    /// Canonical (name, tensor) flattening.
    pub fn named(&self) -> Vec<(String, &NdArray)> {
        let mut out: Vec<(String, &NdArray)> = vec![
            ("embed.value_w".into(), &self.value_w),
            ("embed.value_b".into(), &self.value_b),
            ("embed.feature_table".into(), &self.feature_table),
            ("embed.time_omega".into(), &self.time_omega),
            ("embed.time_phi".into(), &self.time_phi),
            ("embed.cls_token".into(), &self.cls_token),
            ("embed.mask_token".into(), &self.mask_token),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend([
                (format!("layers.{l}.ln1_gain"), &layer.ln1_gain),
                (format!("layers.{l}.ln1_bias"), &layer.ln1_bias),
                (format!("layers.{l}.wq"), &layer.wq),
                (format!("layers.{l}.wk"), &layer.wk),
                (format!("layers.{l}.wv"), &layer.wv),
                (format!("layers.{l}.wo"), &layer.wo),
                (format!("layers.{l}.ln2_gain"), &layer.ln2_gain),
                (format!("layers.{l}.ln2_bias"), &layer.ln2_bias),
                (format!("layers.{l}.ff1_w"), &layer.ff1_w),
                (format!("layers.{l}.ff1_b"), &layer.ff1_b),
                (format!("layers.{l}.ff2_w"), &layer.ff2_w),
                (format!("layers.{l}.ff2_b"), &layer.ff2_b),
            ]);
        }
        out.extend([
            ("final_ln.gain".to_string(), &self.final_ln_gain),
            ("final_ln.bias".to_string(), &self.final_ln_bias),
            ("heads.value_w".to_string(), &self.value_head_w),
            ("heads.value_b".to_string(), &self.value_head_b),
            ("heads.proj_w".to_string(), &self.proj_w),
            ("heads.proj_b".to_string(), &self.proj_b),
            ("heads.classifier_w".to_string(), &self.classifier_w),
            ("heads.classifier_b".to_string(), &self.classifier_b),
        ]);
        out
    }

    /// Mutable view in the same order as [`named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut NdArray> {
        let mut out: Vec<&mut NdArray> = vec![
            &mut self.value_w,
            &mut self.value_b,
            &mut self.feature_table,
            &mut self.time_omega,
            &mut self.time_phi,
            &mut self.cls_token,
            &mut self.mask_token,
        ];
        for layer in self.layers.iter_mut() {
            out.extend([
                &mut layer.ln1_gain,
                &mut layer.ln1_bias,
                &mut layer.wq,
                &mut layer.wk,
                &mut layer.wv,
                &mut layer.wo,
                &mut layer.ln2_gain,
                &mut layer.ln2_bias,
                &mut layer.ff1_w,
                &mut layer.ff1_b,
                &mut layer.ff2_w,
                &mut layer.ff2_b,
            ]);
        }
        out.extend([
            &mut self.final_ln_gain,
            &mut self.final_ln_bias,
            &mut self.value_head_w,
            &mut self.value_head_b,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.classifier_w,
            &mut self.classifier_b,
        ]);
        out
    }

    pub fn n_tensors(&self) -> usize {
        15 + 12 * self.layers.len()
    }

    pub fn n_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}
