//! With a frozen encoder the per-example moving average u_i tracks its
//! target g* geometrically: the gap shrinks by exactly (1 - gamma) per
//! full-batch update.
//!
//!     cargo run --release --example estimator_convergence

use evseq::numerics::NdArray;
use evseq::objectives::{contrastive_term_g, EstimatorState};
use rand::Rng;

fn unit_rows(n: usize, d: usize, seed: u64) -> NdArray {
    let mut rng = evseq::rng::substream(seed, &[0xE5]);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    NdArray::from_rows(&rows).expect("embedding matrix")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, d, tau) = (8, 6, 0.2);
    let z_a = unit_rows(n, d, 1);
    let z_b = unit_rows(n, d, 2);

    // Fixed embeddings mean fixed per-example targets g*.
    let targets: Vec<f64> = (0..n)
        .map(|i| {
            let g_a = contrastive_term_g(z_a.row_slice(i), &z_b, i, tau, false).unwrap();
            let g_b = contrastive_term_g(z_b.row_slice(i), &z_a, i, tau, false).unwrap();
            (g_a + g_b) / (2.0 * n as f64)
        })
        .collect::<Vec<_>>();

    for gamma in [0.1, 0.5, 0.9] {
        let mut estimator = EstimatorState::new(n, true);
        println!("gamma = {gamma}: |u_0 - g*| per full-batch update");
        let mut previous: Option<f64> = None;
        for step in 0..8 {
            for i in 0..n {
                let g_a = contrastive_term_g(z_a.row_slice(i), &z_b, i, tau, false)?;
                let g_b = contrastive_term_g(z_b.row_slice(i), &z_a, i, tau, false)?;
                estimator.update(i, g_a, g_b, gamma, n)?;
            }
            let gap = (estimator.get(0) - targets[0]).abs();
            match previous {
                Some(p) if p > 0.0 => println!(
                    "  step {step}: gap {gap:.3e}  (ratio {:.6}, expected {:.6})",
                    gap / p,
                    1.0 - gamma
                ),
                _ => println!("  step {step}: gap {gap:.3e}"),
            }
            previous = Some(gap);
        }
        println!();
    }
    Ok(())
}
