//! Contrastive losses over paired unit-norm sequence embeddings.

use crate::numerics::{NdArray, Tape, Var};

use super::ObjectiveError;

fn check_pair(z_a: &NdArray, z_b: &NdArray, tau: f64) -> Result<usize, ObjectiveError> {
    if tau <= 0.0 {
        return Err(ObjectiveError::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if z_a.shape() != z_b.shape() {
        return Err(ObjectiveError::Config(format!(
            "embedding stacks must share a shape, got {:?} vs {:?}",
            z_a.shape(),
            z_b.shape()
        )));
    }
    Ok(z_a.rows())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric cross-entropy over in-batch similarities: the anchor row
/// of one view must pick out its partner among all rows of the other
/// view, averaged over both directions and the batch.
pub fn info_nce(z_a: &NdArray, z_b: &NdArray, tau: f64) -> Result<f64, ObjectiveError> {
    let b = check_pair(z_a, z_b, tau)?;
    let mut total = 0.0;
    for i in 0..b {
        total += direction_term(z_a.row_slice(i), z_b, i, tau).ln();
        total += direction_term(z_b.row_slice(i), z_a, i, tau).ln();
    }
    Ok(total / b as f64)
}

// One direction's softmax denominator ratio: sum_j exp((s_ij-s_ii)/tau),
// computed with the positive pair shifted out for stability.
fn direction_term(anchor: &[f64], other: &NdArray, i: usize, tau: f64) -> f64 {
    let pos = dot(anchor, other.row_slice(i)) / tau;
    (0..other.rows())
        .map(|j| (dot(anchor, other.row_slice(j)) / tau - pos).exp())
        .sum()
}

/// Unnormalized contrastive mass for one anchor against every row of
/// the opposing view: g = sum_j exp(s_ij / tau), optionally excluding
/// the matched pair j = i.
pub fn contrastive_term_g(
    anchor: &[f64],
    other: &NdArray,
    i: usize,
    tau: f64,
    exclude_self: bool,
) -> Result<f64, ObjectiveError> {
    if tau <= 0.0 {
        return Err(ObjectiveError::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if i >= other.rows() {
        return Err(ObjectiveError::Config(format!(
            "anchor index {i} out of range for {} rows",
            other.rows()
        )));
    }
    let mut g = 0.0;
    for j in 0..other.rows() {
        if exclude_self && j == i {
            continue;
        }
        g += (dot(anchor, other.row_slice(j)) / tau).exp();
    }
    Ok(g)
}

/// Shared similarity subgraph: the scaled-score diagonal as a column
/// and per-row / per-column exponential sums.
struct SimilarityGraph {
    s_diag: Var,
    g_a: Var,
    g_b: Var,
}

fn similarity_graph(
    tape: &mut Tape,
    z_a: Var,
    z_b: Var,
    tau: f64,
    exclude_self: bool,
) -> Result<SimilarityGraph, ObjectiveError> {
    let b = tape.value(z_a).rows();
    let z_b_t = tape.transpose(z_b)?;
    let scores = tape.matmul(z_a, z_b_t)?;
    let s = tape.scale(scores, 1.0 / tau)?;
    let e = tape.exp(s)?;

    let identity = {
        let mut m = NdArray::zeros(b, b);
        for i in 0..b {
            m.set(i, i, 1.0);
        }
        tape.constant(m)
    };
    let ones = tape.constant(NdArray::full(b, 1, 1.0));
    let s_masked = tape.mul(s, identity)?;
    let s_diag = tape.matmul(s_masked, ones)?;
    let e_masked = tape.mul(e, identity)?;
    let e_diag = tape.matmul(e_masked, ones)?;

    let mut g_a = tape.matmul(e, ones)?;
    let e_t = tape.transpose(e)?;
    let mut g_b = tape.matmul(e_t, ones)?;
    if exclude_self {
        let neg_diag = tape.neg(e_diag)?;
        g_a = tape.add(g_a, neg_diag)?;
        g_b = tape.add(g_b, neg_diag)?;
    }
    Ok(SimilarityGraph { s_diag, g_a, g_b })
}

/// In-graph symmetric cross-entropy; its value equals [`info_nce`] and
/// its gradient flows through every similarity, denominators included.
pub fn info_nce_graph(
    tape: &mut Tape,
    z_a: Var,
    z_b: Var,
    tau: f64,
) -> Result<Var, ObjectiveError> {
    check_pair(tape.value(z_a), tape.value(z_b), tau)?;
    let sim = similarity_graph(tape, z_a, z_b, tau, false)?;
    let ln_a = tape.ln(sim.g_a)?;
    let ln_b = tape.ln(sim.g_b)?;
    let sums = tape.add(ln_a, ln_b)?;
    let neg_diag = tape.neg(sim.s_diag)?;
    let two_neg = tape.scale(neg_diag, 2.0)?;
    let per_item = tape.add(sums, two_neg)?;
    Ok(tape.reduce_mean(per_item)?)
}

/// Surrogate whose gradient matches the variance-reduced contrastive
/// objective: the alignment term keeps its score gradient while each
/// item's repulsion mass is weighted by a detached 1/(2B u_i) built
/// from estimates updated for this step. Returns the loss node and the
/// per-item (g_a, g_b) values read off the graph, in batch order.
pub fn gcl_surrogate_loss(
    tape: &mut Tape,
    z_a: Var,
    z_b: Var,
    tau: f64,
    exclude_self: bool,
    u_batch: &[f64],
) -> Result<(Var, Vec<(f64, f64)>), ObjectiveError> {
    let b = check_pair(tape.value(z_a), tape.value(z_b), tau)?;
    if u_batch.len() != b {
        return Err(ObjectiveError::Internal(format!(
            "{} estimates supplied for a batch of {b}",
            u_batch.len()
        )));
    }
    if let Some(bad) = u_batch.iter().find(|u| !(**u > 0.0)) {
        return Err(ObjectiveError::Internal(format!(
            "estimate u = {bad} not positive; estimates must be \
             updated before the loss is assembled"
        )));
    }
    let sim = similarity_graph(tape, z_a, z_b, tau, exclude_self)?;
    let terms: Vec<(f64, f64)> = (0..b)
        .map(|i| (tape.value(sim.g_a).get(i, 0), tape.value(sim.g_b).get(i, 0)))
        .collect();

    let coeff = NdArray::col(
        &u_batch
            .iter()
            .map(|u| 1.0 / (2.0 * b as f64 * u))
            .collect::<Vec<_>>(),
    );
    let coeff = tape.constant(coeff);
    let g_sum = tape.add(sim.g_a, sim.g_b)?;
    let repulsion = tape.mul(g_sum, coeff)?;
    let neg_diag = tape.neg(sim.s_diag)?;
    let per_item = tape.add(neg_diag, repulsion)?;
    let loss = tape.reduce_mean(per_item)?;
    Ok((loss, terms))
}
