//! Mask selection and the masked value-regression loss.

use rand::Rng;

use super::ObjectiveError;

/// Uniform mask over ceil(rate * len) positions, without replacement.
pub fn sample_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<bool>, ObjectiveError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(ObjectiveError::Config(format!(
            "mask rate must lie in [0,1], got {rate}"
        )));
    }
    let mut mask = vec![false; len];
    if len == 0 || rate == 0.0 {
        return Ok(mask);
    }
    let k = ((rate * len as f64).ceil() as usize).min(len);
    for idx in rand::seq::index::sample(rng, len, k) {
        mask[idx] = true;
    }
    Ok(mask)
}

/// Mask covering the final ceil(len / 10) positions, so the model must
/// reconstruct the tail of the sequence from its past.
pub fn forecast_mask(len: usize) -> Vec<bool> {
    let mut mask = vec![false; len];
    if len == 0 {
        return mask;
    }
    let k = (len as f64 / 10.0).ceil() as usize;
    for m in mask.iter_mut().skip(len - k) {
        *m = true;
    }
    mask
}

/// Mean squared error over masked positions only; predictions and
/// targets are already restricted to those positions.
pub fn masked_loss(predictions: &[f64], targets: &[f64]) -> Result<f64, ObjectiveError> {
    if predictions.len() != targets.len() {
        return Err(ObjectiveError::Config(format!(
            "{} predictions against {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(ObjectiveError::Config(
            "masked loss needs at least one masked position".into(),
        ));
    }
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sse / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use crate::rng::substream;

    use super::*;

    #[test]
    fn masked_loss_matches_hand_computation() {
        let loss = masked_loss(&[1.0, -2.0], &[0.0, 0.0]).unwrap();
        assert!((loss - 2.5).abs() < 1e-15);
        let loss = masked_loss(&[0.5, 1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((loss - (0.25 + 0.0 + 4.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn masked_loss_rejects_empty_or_mismatched_input() {
        assert!(masked_loss(&[], &[]).is_err());
        assert!(masked_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sample_mask_hits_exact_count() {
        let mut rng = substream(9, &[1]);
        for len in [1usize, 7, 10, 53] {
            let mask = sample_mask(len, 0.10, &mut rng).unwrap();
            let k = (0.10 * len as f64).ceil() as usize;
            assert_eq!(mask.iter().filter(|m| **m).count(), k, "len {len}");
        }
        let none = sample_mask(10, 0.0, &mut rng).unwrap();
        assert!(none.iter().all(|m| !*m));
        let all = sample_mask(10, 1.0, &mut rng).unwrap();
        assert!(all.iter().all(|m| *m));
    }

    #[test]
    fn sample_mask_is_roughly_uniform() {
        let mut rng = substream(10, &[2]);
        let mut counts = [0usize; 10];
        let draws = 20_000;
        for _ in 0..draws {
            let mask = sample_mask(10, 0.10, &mut rng).unwrap();
            for (c, m) in counts.iter_mut().zip(&mask) {
                if *m {
                    *c += 1;
                }
            }
        }
        // One index per draw, so each position expects draws / 10.
        let expected = draws as f64 / 10.0;
        for (i, c) in counts.iter().enumerate() {
            let rel = (*c as f64 - expected).abs() / expected;
            assert!(rel < 0.08, "position {i}: {c} vs {expected}");
        }
    }

    #[test]
    fn forecast_mask_covers_the_tail() {
        assert_eq!(forecast_mask(10), {
            let mut m = vec![false; 10];
            m[9] = true;
            m
        });
        let m20 = forecast_mask(20);
        assert_eq!(m20.iter().filter(|m| **m).count(), 2);
        assert!(m20[18] && m20[19]);
        let m5 = forecast_mask(5);
        assert_eq!(m5.iter().filter(|m| **m).count(), 1);
        assert!(m5[4]);
        assert!(forecast_mask(0).is_empty());
    }
}
