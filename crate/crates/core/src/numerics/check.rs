//! Central-difference verification of tape gradients.

use super::{NdArray, NumericsError, Tape, Var};

/// Compares analytic gradients against central differences for a
/// scalar-valued graph built by `f` over the given leaf values.
///
/// Returns the worst relative error across every coordinate of every
/// leaf: `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(mut f: F, points: &[NdArray], step: f64) -> Result<f64, NumericsError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    let eval = |inputs: &[NdArray], f: &mut F| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.param(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        tape.value(root).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    if tape.value(root).len() != 1 {
        return Err(NumericsError::Contract {
            op: "grad_check",
            details: "objective must be scalar".into(),
        });
    }
    tape.backward(root)?;
    let analytic: Vec<NdArray> = vars
        .iter()
        .map(|&v| tape.grad(v))
        .collect::<Result<_, _>>()?;

    let mut worst: f64 = 0.0;
    let mut perturbed: Vec<NdArray> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        for ci in 0..point.len() {
            let orig = point.data()[ci];
            perturbed[pi].data_mut()[ci] = orig + step;
            let plus = eval(&perturbed, &mut f)?;
            perturbed[pi].data_mut()[ci] = orig - step;
            let minus = eval(&perturbed, &mut f)?;
            perturbed[pi].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[ci];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
