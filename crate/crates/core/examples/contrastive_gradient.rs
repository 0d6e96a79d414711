//! The contrastive machinery in isolation. InfoNCE closed forms first;
//! then the estimator-weighted surrogate: when every u_i equals its
//! exact full-batch average, the surrogate's gradient IS the gradient
//! of the pooled log loss, checked here against central differences.
//!
//!     cargo run --release --example contrastive_gradient

use evseq::numerics::{NdArray, Tape};
use evseq::objectives::{contrastive_term_g, gcl_surrogate_loss, info_nce};
use rand::Rng;

fn unit_rows(n: usize, d: usize, seed: u64) -> NdArray {
    let mut rng = evseq::rng::substream(seed, &[0x47]);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    NdArray::from_rows(&rows).expect("embedding matrix")
}

/// Pooled symmetric log loss, computed in closed form from values.
fn pooled_loss(z_a: &NdArray, z_b: &NdArray, tau: f64) -> f64 {
    let n = z_a.rows();
    (0..n)
        .map(|i| {
            let s_ii = z_a
                .row_slice(i)
                .iter()
                .zip(z_b.row_slice(i))
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / tau;
            let g_a = contrastive_term_g(z_a.row_slice(i), z_b, i, tau, false).unwrap();
            let g_b = contrastive_term_g(z_b.row_slice(i), z_a, i, tau, false).unwrap();
            -s_ii + ((g_a + g_b) / (2.0 * n as f64)).ln()
        })
        .sum::<f64>()
        / n as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Closed forms: a single pair has no negatives, and two identical
    // embeddings split the softmax evenly.
    let single = NdArray::from_rows(&[vec![0.6, 0.8]])?;
    println!("info_nce, B=1:          {:+.3e}", info_nce(&single, &single, 0.1)?);
    let pair = NdArray::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]])?;
    println!(
        "info_nce, B=2 all-equal: {:.12} (2 ln 2 = {:.12})",
        info_nce(&pair, &pair, 0.5)?,
        2.0 * (2.0f64).ln()
    );

    let (n, d, tau) = (6, 4, 0.2);
    let z_a = unit_rows(n, d, 1);
    let z_b = unit_rows(n, d, 2);

    // Exact full-batch averages play the role of converged estimates.
    let u: Vec<f64> = (0..n)
        .map(|i| {
            let g_a = contrastive_term_g(z_a.row_slice(i), &z_b, i, tau, false).unwrap();
            let g_b = contrastive_term_g(z_b.row_slice(i), &z_a, i, tau, false).unwrap();
            (g_a + g_b) / (2.0 * n as f64)
        })
        .collect();

    let mut tape = Tape::new();
    let za = tape.param(z_a.clone());
    let zb = tape.param(z_b.clone());
    let (loss, _) = gcl_surrogate_loss(&mut tape, za, zb, tau, false, &u)?;
    tape.backward(loss)?;
    let analytic = tape.grad(za)?;

    println!("\nsurrogate gradient vs central differences of the pooled log loss:");
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..d {
            let mut plus = z_a.clone();
            plus.set(i, j, plus.get(i, j) + eps);
            let mut minus = z_a.clone();
            minus.set(i, j, minus.get(i, j) - eps);
            let numeric = (pooled_loss(&plus, &z_b, tau) - pooled_loss(&minus, &z_b, tau))
                / (2.0 * eps);
            worst = worst.max((analytic.get(i, j) - numeric).abs());
        }
    }
    println!("  max |analytic - numeric| over all {} entries: {worst:.3e}", n * d);

    // Stale estimates bend the gradient: scale u away from the truth
    // and the surrogate no longer differentiates the pooled loss.
    let stale: Vec<f64> = u.iter().map(|v| v * 3.0).collect();
    let mut tape = Tape::new();
    let za = tape.param(z_a.clone());
    let zb = tape.param(z_b);
    let (loss, _) = gcl_surrogate_loss(&mut tape, za, zb, tau, false, &stale)?;
    tape.backward(loss)?;
    let bent = tape.grad(za)?;
    let deviation = analytic
        .data()
        .iter()
        .zip(bent.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("  with 3x-stale estimates the gradient moves by {deviation:.3e}");
    Ok(())
}
