//! Forward passes: parameters bound onto a tape, token embedding,
//! causal encoder stack, and heads.

use std::sync::Arc;

use crate::data::TripletEvent;
use crate::numerics::{NdArray, Tape, Var, ATTENTION_MASK_FILL};

use super::params::{ModelConfig, ModelParams};
use super::ModelError;

const EMBED_TENSORS: usize = 7;
const LAYER_TENSORS: usize = 12;

/// Model parameters materialized as tape nodes, in the canonical
/// [`ModelParams::named`] order.
pub struct BoundModel {
    pub config: ModelConfig,
    vars: Vec<Var>,
}

impl BoundModel {
    /// Binds every tensor as trainable.
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        Self::bind_selective(tape, params, |_| true)
    }

    /// Binds every tensor as a detached constant (frozen model).
    pub fn bind_frozen(tape: &mut Tape, params: &ModelParams) -> Self {
        Self::bind_selective(tape, params, |_| false)
    }

    /// Binds tensors whose canonical name satisfies the predicate as
    /// trainable, the rest as constants.
    pub fn bind_selective(
        tape: &mut Tape,
        params: &ModelParams,
        trainable: impl Fn(&str) -> bool,
    ) -> Self {
        let vars = params
            .named()
            .into_iter()
            .map(|(name, tensor)| {
                if trainable(&name) {
                    tape.param(tensor.clone())
                } else {
                    tape.constant(tensor.clone())
                }
            })
            .collect();
        Self {
            config: params.config.clone(),
            vars,
        }
    }

    /// Gradients for every bound tensor in canonical order; zero
    /// arrays for constants (which receive none).
    pub fn grads(&self, tape: &Tape) -> Result<Vec<NdArray>, ModelError> {
        self.vars
            .iter()
            .map(|&v| {
                tape.grad(v).or_else(|_| {
                    let shape = tape.value(v).shape().to_vec();
                    let len = shape.iter().product();
                    Ok(NdArray::new(shape, vec![0.0; len])?)
                })
            })
            .collect()
    }

    fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    fn layer_var(&self, layer: usize, slot: usize) -> Var {
        self.vars[EMBED_TENSORS + LAYER_TENSORS * layer + slot]
    }

    fn tail_var(&self, slot: usize) -> Var {
        self.vars[EMBED_TENSORS + LAYER_TENSORS * self.config.layers + slot]
    }

    fn value_w(&self) -> Var { self.var(0) }
    fn value_b(&self) -> Var { self.var(1) }
    fn feature_table(&self) -> Var { self.var(2) }
    fn time_omega(&self) -> Var { self.var(3) }
    fn time_phi(&self) -> Var { self.var(4) }
    fn cls_token(&self) -> Var { self.var(5) }
    fn mask_token(&self) -> Var { self.var(6) }
    fn final_ln_gain(&self) -> Var { self.tail_var(0) }
    fn final_ln_bias(&self) -> Var { self.tail_var(1) }
    fn value_head_w(&self) -> Var { self.tail_var(2) }
    fn value_head_b(&self) -> Var { self.tail_var(3) }
    fn proj_w(&self) -> Var { self.tail_var(4) }
    fn proj_b(&self) -> Var { self.tail_var(5) }
    pub fn classifier_w(&self) -> Var { self.tail_var(6) }
    pub fn classifier_b(&self) -> Var { self.tail_var(7) }

    /// Learnable time encoding of a T x 1 column of hours: component 0
    /// is linear, the rest sinusoidal.
    pub fn time_encode(&self, tape: &mut Tape, t_col: Var) -> Result<Var, ModelError> {
        let lin = tape.matmul(t_col, self.time_omega())?;
        let lin = tape.add_row(lin, self.time_phi())?;
        if self.config.d == 1 {
            return Ok(lin);
        }
        let head = tape.slice_cols(lin, 0, 1)?;
        let rest = tape.slice_cols(lin, 1, self.config.d)?;
        let rest = tape.sin(rest)?;
        Ok(tape.concat_cols(&[head, rest])?)
    }

    /// Token matrix for a sequence given time/value columns already on
    /// the tape. Masked positions swap the value summand for the mask
    /// token (via an exact 0/1 row scale, so masked values never enter
    /// the graph); feature and time summands always remain. The class
    /// token is appended as the last row.
    pub fn embed_sequence_vars(
        &self,
        tape: &mut Tape,
        t_col: Var,
        v_col: Var,
        features: &[usize],
        mask: &[bool],
    ) -> Result<Var, ModelError> {
        let t = features.len();
        if t == 0 {
            return Err(ModelError::Config("cannot embed an empty sequence".into()));
        }
        if mask.len() != t
            || tape.value(t_col).shape() != [t, 1]
            || tape.value(v_col).shape() != [t, 1]
        {
            return Err(ModelError::Config(format!(
                "sequence length mismatch: {} features, {} mask bits",
                t,
                mask.len()
            )));
        }

        let value_lin = tape.matmul(v_col, self.value_w())?;
        let value_lin = tape.add_row(value_lin, self.value_b())?;
        let keep = NdArray::new(
            vec![t, 1],
            mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect(),
        )?;
        let keep = tape.constant(keep);
        let mut value_part = tape.scale_rows(value_lin, keep)?;
        if mask.iter().any(|&m| m) {
            let sel = NdArray::new(
                vec![t, 1],
                mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            )?;
            let sel = tape.constant(sel);
            let mask_part = tape.matmul(sel, self.mask_token())?;
            value_part = tape.add(value_part, mask_part)?;
        }

        let feat = tape.gather_rows(self.feature_table(), Arc::new(features.to_vec()))?;
        let time = self.time_encode(tape, t_col)?;
        let body = tape.add(value_part, feat)?;
        let body = tape.add(body, time)?;
        Ok(tape.concat_rows(&[body, self.cls_token()])?)
    }

    /// Token matrix for a stay's events; times and values enter as
    /// constants.
    pub fn embed_sequence(
        &self,
        tape: &mut Tape,
        events: &[TripletEvent],
        mask: &[bool],
    ) -> Result<Var, ModelError> {
        let t = events.len();
        let t_col = NdArray::new(vec![t.max(1), 1], events.iter().map(|e| e.t).collect());
        let v_col = NdArray::new(vec![t.max(1), 1], events.iter().map(|e| e.v).collect());
        let (t_col, v_col) = match (t_col, v_col) {
            (Ok(a), Ok(b)) => (tape.constant(a), tape.constant(b)),
            _ => return Err(ModelError::Config("cannot embed an empty sequence".into())),
        };
        let features: Vec<usize> = events.iter().map(|e| e.f).collect();
        self.embed_sequence_vars(tape, t_col, v_col, &features, mask)
    }

    /// Pre-norm causal transformer stack plus final layer norm.
    /// Position k attends to positions <= k; the class token (last
    /// row) attends to everything.
    pub fn encode(&self, tape: &mut Tape, tokens: Var) -> Result<Var, ModelError> {
        let rows = tape.value(tokens).rows();
        let d = self.config.d;
        let heads = self.config.h;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let causal: Arc<Vec<bool>> = Arc::new(
            (0..rows * rows).map(|k| k % rows > k / rows).collect(),
        );

        let mut x = tokens;
        for layer in 0..self.config.layers {
            let ln = |tape: &mut Tape, x: Var, gain: Var, bias: Var| -> Result<Var, ModelError> {
                let n = tape.layer_norm(x)?;
                let n = tape.mul_row(n, gain)?;
                Ok(tape.add_row(n, bias)?)
            };

            let g1 = self.layer_var(layer, 0);
            let b1 = self.layer_var(layer, 1);
            let xn = ln(tape, x, g1, b1)?;
            let q = tape.matmul(xn, self.layer_var(layer, 2))?;
            let k = tape.matmul(xn, self.layer_var(layer, 3))?;
            let v = tape.matmul(xn, self.layer_var(layer, 4))?;
            let mut head_outs = Vec::with_capacity(heads);
            for hi in 0..heads {
                let (lo, hi_col) = (hi * hd, (hi + 1) * hd);
                let qh = tape.slice_cols(q, lo, hi_col)?;
                let kh = tape.slice_cols(k, lo, hi_col)?;
                let vh = tape.slice_cols(v, lo, hi_col)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale)?;
                let scores = tape.masked_fill(scores, Arc::clone(&causal), ATTENTION_MASK_FILL)?;
                let probs = tape.row_softmax(scores)?;
                head_outs.push(tape.matmul(probs, vh)?);
            }
            let merged = tape.concat_cols(&head_outs)?;
            let attn = tape.matmul(merged, self.layer_var(layer, 5))?;
            x = tape.add(x, attn)?;

            let g2 = self.layer_var(layer, 6);
            let b2 = self.layer_var(layer, 7);
            let xn = ln(tape, x, g2, b2)?;
            let f = tape.matmul(xn, self.layer_var(layer, 8))?;
            let f = tape.add_row(f, self.layer_var(layer, 9))?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, self.layer_var(layer, 10))?;
            let f = tape.add_row(f, self.layer_var(layer, 11))?;
            x = tape.add(x, f)?;
        }

        let n = tape.layer_norm(x)?;
        let n = tape.mul_row(n, self.final_ln_gain())?;
        Ok(tape.add_row(n, self.final_ln_bias())?)
    }

    /// Unit-norm contrastive embedding z from the class-token output
    /// (last row of `outputs`).
    pub fn sequence_embedding(&self, tape: &mut Tape, outputs: Var) -> Result<Var, ModelError> {
        let rows = tape.value(outputs).rows();
        let cls = tape.slice_rows(outputs, rows - 1, rows)?;
        let z = if self.config.use_projection {
            let z = tape.matmul(cls, self.proj_w())?;
            tape.add_row(z, self.proj_b())?
        } else {
            cls
        };
        Ok(tape.l2_normalize_rows(z)?)
    }

    /// Value-head predictions at the masked positions, |M| x 1.
    pub fn predict_values(
        &self,
        tape: &mut Tape,
        outputs: Var,
        mask_indices: &[usize],
    ) -> Result<Var, ModelError> {
        if mask_indices.is_empty() {
            return Err(ModelError::Config("predict_values requires a nonempty mask".into()));
        }
        let rows = tape.value(outputs).rows();
        if let Some(&bad) = mask_indices.iter().find(|&&i| i + 1 >= rows) {
            return Err(ModelError::Config(format!(
                "mask index {bad} out of range for {} tokens",
                rows - 1
            )));
        }
        let picked = tape.gather_rows(outputs, Arc::new(mask_indices.to_vec()))?;
        let pred = tape.matmul(picked, self.value_head_w())?;
        Ok(tape.add_row(pred, self.value_head_b())?)
    }

    /// Classifier logits from the class-token output, 1 x C.
    pub fn classifier_logits(&self, tape: &mut Tape, outputs: Var) -> Result<Var, ModelError> {
        let rows = tape.value(outputs).rows();
        let cls = tape.slice_rows(outputs, rows - 1, rows)?;
        let logits = tape.matmul(cls, self.classifier_w())?;
        Ok(tape.add_row(logits, self.classifier_b())?)
    }

    /// Embed + encode in one call.
    pub fn forward(
        &self,
        tape: &mut Tape,
        events: &[TripletEvent],
        mask: &[bool],
    ) -> Result<Var, ModelError> {
        let tokens = self.embed_sequence(tape, events, mask)?;
        self.encode(tape, tokens)
    }
}
