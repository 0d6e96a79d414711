//! Linear evaluation and semi-supervised fine-tuning.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{Dataset, StaySequence, PHENOTYPE_COUNT};
use crate::model::{BoundModel, ModelParams};
use crate::numerics::{matmul_into, matmul_tn_into, NdArray, Tape};
use crate::objectives::{cosine_warmup_lr, Optimizer, OptimizerConfig};
use crate::rng::{derive_seed, substream};

use super::metrics::{auc_pr, auc_roc, multilabel_aggregate, RankMetric};
use super::report::MetricsReport;
use super::EvalError;

/// Documented sweep values for the fine-tuning recipe.
pub const HEAD_LR_GRID: [f64; 3] = [0.001, 0.01, 0.1];
pub const BACKBONE_LR_GRID: [f64; 4] = [1e-4, 5e-4, 8e-4, 1e-3];
pub const BATCH_GRID: [usize; 3] = [8, 16, 32];
pub const MAX_EPOCH_RANGE: (usize, usize) = (2, 50);

const SUBSAMPLE_STREAM: u64 = 0x53554253;
const HEAD_STREAM: u64 = 0x48454144;
const FT_SHUFFLE_STREAM: u64 = 0x46545348;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Mortality,
    Phenotypes,
}

impl Task {
    pub fn parse(name: &str) -> Result<Self, EvalError> {
        match name {
            "mortality" => Ok(Self::Mortality),
            "phenotype" | "phenotypes" => Ok(Self::Phenotypes),
            other => Err(EvalError::Config(format!(
                "unknown task '{other}' (expected mortality or phenotype)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mortality => "mortality",
            Self::Phenotypes => "phenotype",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Self::Mortality => 1,
            Self::Phenotypes => PHENOTYPE_COUNT,
        }
    }

    /// Label row for a stay, when the stay carries this task's label.
    pub fn labels(self, stay: &StaySequence) -> Option<Vec<u8>> {
        match self {
            Self::Mortality => stay.mortality.map(|m| vec![m]),
            Self::Phenotypes => stay.phenotypes.clone(),
        }
    }
}

/// Protocol hyperparameters; defaults sit at the documented grid
/// midpoints.
#[derive(Debug, Clone, Copy)]
pub struct EvalPlan {
    pub label_fraction: f64,
    pub head_lr: f64,
    pub backbone_lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Linear-probe optimizer settings.
    pub probe_lr: f64,
    pub probe_epochs: usize,
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            label_fraction: 1.0,
            head_lr: 0.01,
            backbone_lr: 5e-4,
            patience: 5,
            max_epochs: 50,
            batch_size: 16,
            probe_lr: 0.1,
            probe_epochs: 200,
        }
    }
}

impl EvalPlan {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(EvalError::Config(format!(
                "label fraction must lie in (0,1], got {}",
                self.label_fraction
            )));
        }
        if self.patience == 0 {
            return Err(EvalError::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(EvalError::Config(
                "max_epochs and batch_size must be at least 1".into(),
            ));
        }
        if self.head_lr <= 0.0 || self.backbone_lr <= 0.0 || self.probe_lr <= 0.0 {
            return Err(EvalError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    fn snapshot(&self, config: &mut BTreeMap<String, String>) {
        config.insert("eval.label_fraction".into(), self.label_fraction.to_string());
        config.insert("eval.head_lr".into(), self.head_lr.to_string());
        config.insert("eval.backbone_lr".into(), self.backbone_lr.to_string());
        config.insert("eval.patience".into(), self.patience.to_string());
        config.insert("eval.max_epochs".into(), self.max_epochs.to_string());
        config.insert("eval.batch_size".into(), self.batch_size.to_string());
        config.insert("eval.probe_lr".into(), self.probe_lr.to_string());
        config.insert("eval.probe_epochs".into(), self.probe_epochs.to_string());
    }
}

/// Stays carrying this task's label, with their label rows.
fn labeled(ds: &Dataset, task: Task) -> (Vec<usize>, Vec<Vec<u8>>) {
    let mut indices = Vec::new();
    let mut labels = Vec::new();
    for (i, stay) in ds.stays.iter().enumerate() {
        if stay.events.is_empty() {
            continue;
        }
        if let Some(row) = task.labels(stay) {
            indices.push(i);
            labels.push(row);
        }
    }
    (indices, labels)
}

/// Class-token encoder outputs for the given stays, one row each; the
/// encoder runs frozen.
pub fn embed_stays(
    params: &ModelParams,
    stays: &[&StaySequence],
) -> Result<NdArray, EvalError> {
    if stays.is_empty() {
        return Err(EvalError::Config("no stays to embed".into()));
    }
    let rows: Vec<Vec<f64>> = stays
        .par_iter()
        .map(|stay| -> Result<Vec<f64>, EvalError> {
            let mut tape = Tape::new();
            let bound = BoundModel::bind_frozen(&mut tape, params);
            let outputs = bound.forward(&mut tape, &stay.events, &vec![false; stay.events.len()])?;
            let rows = tape.value(outputs).rows();
            Ok(tape.value(outputs).row_slice(rows - 1).to_vec())
        })
        .collect::<Result<_, _>>()?;
    NdArray::from_rows(&rows).map_err(EvalError::from)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy with logits.
fn bce(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

fn label_matrix(labels: &[Vec<u8>], n_classes: usize) -> Result<NdArray, EvalError> {
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|row| {
            if row.len() != n_classes {
                return Err(EvalError::Config(format!(
                    "label row has {} entries, expected {n_classes}",
                    row.len()
                )));
            }
            Ok(row.iter().map(|&l| l as f64).collect())
        })
        .collect::<Result<_, _>>()?;
    NdArray::from_rows(&rows).map_err(EvalError::from)
}

struct LogReg {
    w: NdArray,
    b: NdArray,
}

impl LogReg {
    fn logits(&self, x: &NdArray) -> NdArray {
        let mut out = vec![0.0; x.rows() * self.w.cols()];
        matmul_into(x, &self.w, &mut out);
        for row in 0..x.rows() {
            for c in 0..self.w.cols() {
                out[row * self.w.cols() + c] += self.b.get(0, c);
            }
        }
        NdArray::new(vec![x.rows(), self.w.cols()], out).expect("shape consistent")
    }

    fn loss(&self, x: &NdArray, y: &NdArray) -> f64 {
        let s = self.logits(x);
        let mut total = 0.0;
        for (l, t) in s.data().iter().zip(y.data()) {
            total += bce(*l, *t);
        }
        total / s.data().len() as f64
    }
}

/// Full-batch logistic regression with Adam and a cosine schedule,
/// keeping the iterate with the best validation loss.
fn train_logreg(
    x: &NdArray,
    y: &NdArray,
    x_val: &NdArray,
    y_val: &NdArray,
    lr: f64,
    epochs: usize,
) -> LogReg {
    let (n, d) = (x.rows(), x.cols());
    let c = y.cols();
    let mut model = LogReg {
        w: NdArray::zeros(d, c),
        b: NdArray::zeros(1, c),
    };
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m_w = vec![0.0; d * c];
    let mut v_w = vec![0.0; d * c];
    let mut m_b = vec![0.0; c];
    let mut v_b = vec![0.0; c];

    let mut best = LogReg {
        w: model.w.clone(),
        b: model.b.clone(),
    };
    let mut best_val = f64::INFINITY;
    for epoch in 0..epochs {
        let rate = cosine_warmup_lr(lr, epoch, 0, epochs);
        let s = model.logits(x);
        // d mean-BCE / d logit = (sigmoid(s) - y) / (n c)
        let scale = 1.0 / (n * c) as f64;
        let g = NdArray::new(
            vec![n, c],
            s.data()
                .iter()
                .zip(y.data())
                .map(|(l, t)| (sigmoid(*l) - t) * scale)
                .collect(),
        )
        .expect("shape consistent");
        let mut g_w = vec![0.0; d * c];
        matmul_tn_into(x, &g, &mut g_w);
        let mut g_b = vec![0.0; c];
        for row in 0..n {
            for col in 0..c {
                g_b[col] += g.get(row, col);
            }
        }
        let t = (epoch + 1) as i32;
        let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let adam = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                w[i] -= rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
        };
        adam(model.w.data_mut(), &g_w, &mut m_w, &mut v_w);
        adam(model.b.data_mut(), &g_b, &mut m_b, &mut v_b);

        let val = model.loss(x_val, y_val);
        if val < best_val {
            best_val = val;
            best.w = model.w.clone();
            best.b = model.b.clone();
        }
    }
    best
}

fn rank_metrics(
    task: Task,
    scores: &[Vec<f64>],
    labels: &[Vec<u8>],
    metrics: &mut BTreeMap<String, f64>,
) -> Result<(), EvalError> {
    match task {
        Task::Mortality => {
            let s: Vec<f64> = scores.iter().map(|r| r[0]).collect();
            let l: Vec<u8> = labels.iter().map(|r| r[0]).collect();
            metrics.insert("auc_roc".into(), auc_roc(&s, &l)?);
            metrics.insert("auc_pr".into(), auc_pr(&s, &l)?);
        }
        Task::Phenotypes => {
            let roc = multilabel_aggregate(scores, labels, RankMetric::AucRoc)?;
            let pr = multilabel_aggregate(scores, labels, RankMetric::AucPr)?;
            metrics.insert("auc_roc_macro".into(), roc.macro_value);
            metrics.insert("auc_roc_micro".into(), roc.micro_value);
            metrics.insert("auc_pr_macro".into(), pr.macro_value);
            metrics.insert("auc_pr_micro".into(), pr.micro_value);
            metrics.insert("labels_skipped".into(), roc.skipped as f64);
        }
    }
    Ok(())
}

fn split_stays<'d>(ds: &'d Dataset, indices: &[usize]) -> Vec<&'d StaySequence> {
    indices.iter().map(|&i| &ds.stays[i]).collect()
}

/// Train a classifier on frozen class-token outputs and report test
/// metrics. The encoder receives no updates; this is asserted, not
/// assumed.
pub fn linear_eval(
    params: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    task: Task,
    plan: &EvalPlan,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    plan.validate()?;
    let start = Instant::now();
    let frozen_before = params.clone();

    let (train_idx, train_labels) = labeled(train, task);
    let (val_idx, val_labels) = labeled(val, task);
    let (test_idx, test_labels) = labeled(test, task);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(EvalError::Config(format!(
            "task {} needs labeled train and test stays",
            task.as_str()
        )));
    }
    let c = task.n_classes();
    let x = embed_stays(params, &split_stays(train, &train_idx))?;
    let y = label_matrix(&train_labels, c)?;
    let (x_val, y_val) = if val_idx.is_empty() {
        (x.clone(), y.clone())
    } else {
        (
            embed_stays(params, &split_stays(val, &val_idx))?,
            label_matrix(&val_labels, c)?,
        )
    };
    let model = train_logreg(&x, &y, &x_val, &y_val, plan.probe_lr, plan.probe_epochs);

    let x_test = embed_stays(params, &split_stays(test, &test_idx))?;
    let logits = model.logits(&x_test);
    let scores: Vec<Vec<f64>> = (0..x_test.rows())
        .map(|i| logits.row_slice(i).iter().map(|&s| sigmoid(s)).collect())
        .collect();

    let mut report = MetricsReport::new(task.as_str(), "linear", seed);
    rank_metrics(task, &scores, &test_labels, &mut report.metrics)?;
    report
        .metrics
        .insert("val_bce".into(), model.loss(&x_val, &y_val));
    plan.snapshot(&mut report.config);
    report.runtime_s = start.elapsed().as_secs_f64();

    for ((_, before), (_, after)) in frozen_before.named().iter().zip(params.named()) {
        if before.data() != after.data() {
            return Err(EvalError::Config(
                "backbone parameters changed during linear evaluation".into(),
            ));
        }
    }
    report.validate()?;
    Ok(report)
}

/// Deterministic stratified subsample of ceil(fraction * n) rows.
/// Binary labels are stratified exactly; multilabel rows fall back to
/// a uniform draw.
pub fn subsample_labeled(
    labels: &[Vec<u8>],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, EvalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::Config(format!(
            "label fraction must lie in (0,1], got {fraction}"
        )));
    }
    let n = labels.len();
    if n == 0 {
        return Err(EvalError::Config("no labeled examples".into()));
    }
    let target = ((fraction * n as f64).ceil() as usize).min(n);
    let mut rng = substream(seed, &[SUBSAMPLE_STREAM]);

    if labels[0].len() != 1 {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let mut picked: Vec<usize> = all.into_iter().take(target).collect();
        picked.sort_unstable();
        return Ok(picked);
    }

    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, row) in labels.iter().enumerate() {
        by_class[row[0] as usize].push(i);
    }
    for class in &mut by_class {
        class.shuffle(&mut rng);
    }
    // Largest-remainder allocation of the target across classes.
    let exact: Vec<f64> = by_class
        .iter()
        .map(|c| fraction * c.len() as f64)
        .collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: Vec<(usize, f64)> = exact
        .iter()
        .enumerate()
        .map(|(k, e)| (k, e - e.floor()))
        .collect();
    rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut short = target.saturating_sub(take.iter().sum::<usize>());
    for (k, _) in rest.iter().cycle() {
        if short == 0 {
            break;
        }
        if take[*k] < by_class[*k].len() {
            take[*k] += 1;
            short -= 1;
        }
    }
    if take.iter().any(|&t| t < 2) {
        return Err(EvalError::Config(format!(
            "fraction {fraction} leaves a class with fewer than 2 labeled examples \
             (allocation {take:?})"
        )));
    }
    let mut picked: Vec<usize> = by_class
        .iter()
        .zip(&take)
        .flat_map(|(class, &t)| class.iter().take(t).copied())
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

fn fine_tune_batch(
    params: &ModelParams,
    stays: &[&StaySequence],
    labels: &[&Vec<u8>],
) -> Result<Vec<NdArray>, EvalError> {
    let b = stays.len();
    let c = params.config.n_classes;
    let results: Vec<Vec<NdArray>> = stays
        .par_iter()
        .zip(labels.par_iter())
        .map(|(stay, row)| -> Result<Vec<NdArray>, EvalError> {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, params);
            let outputs =
                bound.forward(&mut tape, &stay.events, &vec![false; stay.events.len()])?;
            let logits = bound.classifier_logits(&mut tape, outputs)?;
            let values = tape.value(logits).clone();
            let mut seed_row = vec![0.0; c];
            for (k, slot) in seed_row.iter_mut().enumerate() {
                // d mean-BCE / d logit, averaged over batch and labels.
                *slot = (sigmoid(values.get(0, k)) - row[k] as f64) / (b * c) as f64;
            }
            let seed = NdArray::new(vec![1, c], seed_row)?;
            tape.backward_seeded(&[(logits, seed)])?;
            bound.grads(&tape).map_err(EvalError::from)
        })
        .collect::<Result<_, _>>()?;

    let mut iter = results.into_iter();
    let mut grads = iter.next().expect("nonempty batch");
    for set in iter {
        for (a, s) in grads.iter_mut().zip(&set) {
            for (x, y) in a.data_mut().iter_mut().zip(s.data()) {
                *x += y;
            }
        }
    }
    Ok(grads)
}

fn classifier_loss(
    params: &ModelParams,
    stays: &[&StaySequence],
    labels: &[Vec<u8>],
) -> Result<f64, EvalError> {
    let c = params.config.n_classes;
    let total: f64 = stays
        .par_iter()
        .zip(labels.par_iter())
        .map(|(stay, row)| -> Result<f64, EvalError> {
            let mut tape = Tape::new();
            let bound = BoundModel::bind_frozen(&mut tape, params);
            let outputs =
                bound.forward(&mut tape, &stay.events, &vec![false; stay.events.len()])?;
            let logits = bound.classifier_logits(&mut tape, outputs)?;
            let values = tape.value(logits);
            let mut loss = 0.0;
            for k in 0..c {
                loss += bce(values.get(0, k), row[k] as f64);
            }
            Ok(loss / c as f64)
        })
        .sum::<Result<f64, _>>()?;
    Ok(total / stays.len() as f64)
}

fn classifier_scores(
    params: &ModelParams,
    stays: &[&StaySequence],
) -> Result<Vec<Vec<f64>>, EvalError> {
    stays
        .par_iter()
        .map(|stay| -> Result<Vec<f64>, EvalError> {
            let mut tape = Tape::new();
            let bound = BoundModel::bind_frozen(&mut tape, params);
            let outputs =
                bound.forward(&mut tape, &stay.events, &vec![false; stay.events.len()])?;
            let logits = bound.classifier_logits(&mut tape, outputs)?;
            Ok(tape
                .value(logits)
                .row_slice(0)
                .iter()
                .map(|&s| sigmoid(s))
                .collect())
        })
        .collect()
}

/// Fine-tune the whole model on a label subsample with separate head
/// and backbone learning rates, early-stopping on validation loss,
/// then report test metrics from the best iterate.
pub fn semi_supervised(
    params: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    task: Task,
    plan: &EvalPlan,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    plan.validate()?;
    let start = Instant::now();

    let (train_idx, train_labels) = labeled(train, task);
    let (val_idx, val_labels) = labeled(val, task);
    let (test_idx, test_labels) = labeled(test, task);
    if train_idx.is_empty() || val_idx.is_empty() || test_idx.is_empty() {
        return Err(EvalError::Config(format!(
            "task {} needs labeled train, val and test stays",
            task.as_str()
        )));
    }
    let picked = subsample_labeled(&train_labels, plan.label_fraction, seed)?;
    let sub_idx: Vec<usize> = picked.iter().map(|&k| train_idx[k]).collect();
    let sub_labels: Vec<Vec<u8>> = picked.iter().map(|&k| train_labels[k].clone()).collect();

    let c = task.n_classes();
    let mut model = params.clone();
    model.config.n_classes = c;
    model.reset_classifier(c, derive_seed(seed, &[HEAD_STREAM]));

    let lrs: Vec<f64> = model
        .named()
        .iter()
        .map(|(name, _)| {
            if name.starts_with("heads.classifier") {
                plan.head_lr
            } else {
                plan.backbone_lr
            }
        })
        .collect();
    let mut optimizer = Optimizer::new(OptimizerConfig::default(), &model)
        .map_err(|e| EvalError::Config(e.to_string()))?;

    let val_stays = split_stays(val, &val_idx);
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_improved = 0usize;
    let mut order: Vec<usize> = (0..sub_idx.len()).collect();
    for epoch in 0..plan.max_epochs {
        let mut rng = substream(seed, &[FT_SHUFFLE_STREAM, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(plan.batch_size) {
            let stays: Vec<&StaySequence> =
                chunk.iter().map(|&k| &train.stays[sub_idx[k]]).collect();
            let labels: Vec<&Vec<u8>> = chunk.iter().map(|&k| &sub_labels[k]).collect();
            let grads = fine_tune_batch(&model, &stays, &labels)?;
            optimizer
                .step_grouped(&mut model, &grads, &lrs)
                .map_err(|e| EvalError::Config(e.to_string()))?;
        }
        let val_loss = classifier_loss(&model, &val_stays, &val_labels)?;
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            since_improved = 0;
        } else {
            since_improved += 1;
            if since_improved >= plan.patience {
                break;
            }
        }
    }

    let scores = classifier_scores(&best, &split_stays(test, &test_idx))?;
    let mut report = MetricsReport::new(task.as_str(), "semi", seed);
    rank_metrics(task, &scores, &test_labels, &mut report.metrics)?;
    report.metrics.insert("val_bce".into(), best_val);
    report.metrics.insert("best_epoch".into(), best_epoch as f64);
    report
        .metrics
        .insert("labeled_stays".into(), sub_idx.len() as f64);
    plan.snapshot(&mut report.config);
    report.runtime_s = start.elapsed().as_secs_f64();
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use crate::data::{synth_generate, SynthConfig};
    use crate::model::ModelConfig;

    use super::*;

    fn probe_from_features(
        features: Vec<Vec<f64>>,
        labels: Vec<Vec<u8>>,
        epochs: usize,
    ) -> (f64, Vec<Vec<f64>>) {
        let x = NdArray::from_rows(&features).unwrap();
        let y = label_matrix(&labels, labels[0].len()).unwrap();
        let model = train_logreg(&x, &y, &x, &y, 0.1, epochs);
        let logits = model.logits(&x);
        let scores: Vec<Vec<f64>> = (0..x.rows())
            .map(|i| logits.row_slice(i).iter().map(|&s| sigmoid(s)).collect())
            .collect();
        (model.loss(&x, &y), scores)
    }

    #[test]
    fn probe_separates_label_revealing_features() {
        let mut rng = substream(3, &[1]);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..80 {
            let y = (i % 2) as u8;
            features.push(vec![
                y as f64 + rng.random_range(-0.05..0.05),
                rng.random_range(-1.0..1.0),
            ]);
            labels.push(vec![y]);
        }
        let (_, scores) = probe_from_features(features, labels.clone(), 150);
        let s: Vec<f64> = scores.iter().map(|r| r[0]).collect();
        let l: Vec<u8> = labels.iter().map(|r| r[0]).collect();
        assert!(auc_roc(&s, &l).unwrap() >= 0.99);
    }

    #[test]
    fn probe_stays_near_chance_on_noise() {
        let mut rng = substream(9, &[2]);
        let n = 400;
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<Vec<u8>> = (0..n).map(|i| vec![(i % 2) as u8]).collect();
        // Score held-out noise with a probe trained on other noise.
        let x = NdArray::from_rows(&features[..200]).unwrap();
        let y = label_matrix(&labels[..200], 1).unwrap();
        let model = train_logreg(&x, &y, &x, &y, 0.1, 100);
        let x_test = NdArray::from_rows(&features[200..]).unwrap();
        let logits = model.logits(&x_test);
        let s: Vec<f64> = (0..200).map(|i| logits.get(i, 0)).collect();
        let l: Vec<u8> = labels[200..].iter().map(|r| r[0]).collect();
        let auc = auc_roc(&s, &l).unwrap();
        assert!((0.4..=0.6).contains(&auc), "null auc {auc}");
    }

    #[test]
    fn subsample_is_deterministic_and_stratified() {
        let labels: Vec<Vec<u8>> = (0..100).map(|i| vec![u8::from(i % 4 == 0)]).collect();
        let a = subsample_labeled(&labels, 0.2, 5).unwrap();
        let b = subsample_labeled(&labels, 0.2, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        let positives = a.iter().filter(|&&i| labels[i][0] == 1).count();
        assert_eq!(positives, 5, "a quarter of the draw should be positive");
        let c = subsample_labeled(&labels, 0.2, 6).unwrap();
        assert_ne!(a, c, "different seeds draw different subsets");
    }

    #[test]
    fn subsample_rejects_starved_classes() {
        let labels: Vec<Vec<u8>> = (0..100).map(|i| vec![u8::from(i == 0)]).collect();
        assert!(matches!(
            subsample_labeled(&labels, 0.05, 1),
            Err(EvalError::Config(_))
        ));
    }

    #[test]
    fn subsample_full_fraction_takes_everything() {
        let labels: Vec<Vec<u8>> = (0..10).map(|i| vec![(i % 2) as u8]).collect();
        let all = subsample_labeled(&labels, 1.0, 3).unwrap();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    fn tiny_world() -> (ModelParams, Dataset, Dataset, Dataset) {
        let config = SynthConfig {
            n_stays: 30,
            n_features: 5,
            horizon_hours: 12.0,
            ..SynthConfig::default()
        };
        let (train, _) = synth_generate(&config, 21).unwrap();
        let (val, _) = synth_generate(&config, 22).unwrap();
        let (test, _) = synth_generate(&config, 23).unwrap();
        let mut mc = ModelConfig::new(5);
        mc.d = 16;
        mc.h = 2;
        mc.layers = 1;
        mc.p = 8;
        mc.ff_mult = 2;
        let params = ModelParams::init(mc, 9).unwrap();
        (params, train, val, test)
    }

    #[test]
    fn linear_eval_reports_and_leaves_backbone_untouched() {
        let (params, train, val, test) = tiny_world();
        let before: Vec<Vec<f64>> = params.named().iter().map(|(_, t)| t.data().to_vec()).collect();
        let plan = EvalPlan {
            probe_epochs: 30,
            ..EvalPlan::default()
        };
        let report =
            linear_eval(&params, &train, &val, &test, Task::Mortality, &plan, 4).unwrap();
        assert!(report.metrics.contains_key("auc_roc"));
        assert!(report.metrics.contains_key("auc_pr"));
        assert_eq!(report.protocol, "linear");
        let after: Vec<Vec<f64>> = params.named().iter().map(|(_, t)| t.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn semi_supervised_runs_and_reports() {
        let (params, train, val, test) = tiny_world();
        let plan = EvalPlan {
            max_epochs: 2,
            batch_size: 8,
            ..EvalPlan::default()
        };
        let report =
            semi_supervised(&params, &train, &val, &test, Task::Mortality, &plan, 4).unwrap();
        assert_eq!(report.protocol, "semi");
        assert!(report.metrics.contains_key("auc_roc"));
        assert_eq!(report.metrics["labeled_stays"], 30.0);
        assert!(report.metrics["best_epoch"] < 2.0);
    }

    #[test]
    fn phenotype_task_reports_both_aggregations() {
        let (params, train, val, test) = tiny_world();
        let plan = EvalPlan {
            probe_epochs: 20,
            ..EvalPlan::default()
        };
        let report =
            linear_eval(&params, &train, &val, &test, Task::Phenotypes, &plan, 4).unwrap();
        for key in ["auc_roc_macro", "auc_roc_micro", "auc_pr_macro", "auc_pr_micro"] {
            assert!(report.metrics.contains_key(key), "missing {key}");
        }
    }
}
