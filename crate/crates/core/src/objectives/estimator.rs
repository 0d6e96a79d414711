//! Per-example moving-average estimate u of the contrastive term.

use super::ObjectiveError;

/// One running estimate per dataset example, persisted across epochs
/// and shuffles (indexed by original dataset position).
#[derive(Debug, Clone)]
pub struct EstimatorState {
    u: Vec<f64>,
    touched: Vec<bool>,
    /// Literal update rule even on an example's first touch (where the
    /// zero initialization biases the estimate down by a factor gamma).
    strict: bool,
}

impl EstimatorState {
    pub fn new(n: usize, strict: bool) -> Self {
        Self {
            u: vec![0.0; n],
            touched: vec![false; n],
            strict,
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.u[i]
    }

    /// Moving-average update from the two directional contrastive
    /// terms; returns the new u_i. The default first-touch rule stores
    /// the unscaled average so early gradients are not inflated; the
    /// strict flag keeps the literal recursion from u = 0.
    pub fn update(
        &mut self,
        i: usize,
        g_a: f64,
        g_b: f64,
        gamma: f64,
        batch_size: usize,
    ) -> Result<f64, ObjectiveError> {
        if !(g_a > 0.0 && g_b > 0.0) {
            return Err(ObjectiveError::Internal(format!(
                "contrastive terms must be positive, got ({g_a}, {g_b})"
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(ObjectiveError::Config(format!(
                "gamma must lie in (0,1], got {gamma}"
            )));
        }
        let avg = (g_a + g_b) / (2.0 * batch_size as f64);
        let new = if self.strict || self.touched[i] {
            (1.0 - gamma) * self.u[i] + gamma * avg
        } else {
            avg
        };
        self.u[i] = new;
        self.touched[i] = true;
        Ok(new)
    }

    /// (mean, min, max) of u over touched examples.
    pub fn stats(&self) -> Option<(f64, f64, f64)> {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (u, &t) in self.u.iter().zip(&self.touched) {
            if t {
                count += 1;
                sum += u;
                min = min.min(*u);
                max = max.max(*u);
            }
        }
        (count > 0).then(|| (sum / count as f64, min, max))
    }
}
