//! Central-difference verification of analytic gradients.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// Worst error per parameter tensor, in input order.
    pub per_tensor: Vec<f64>,
}

/// Compare analytic gradients of `f` against central finite differences.
///
/// `f` rebuilds the scalar loss on a fresh tape from the leaf vars it is
/// given, one var per entry of `params`. It must be deterministic.
pub fn grad_check<F>(f: &F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "step size must be positive");

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.constant(p)).collect();
        let loss = f(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take(v, p.shape()))
        .collect();

    let mut per_tensor = vec![0.0f64; params.len()];
    let mut max_rel_err = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for ti in 0..params.len() {
        for ci in 0..params[ti].numel() {
            let orig = work[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + h;
            let plus = eval(&work)?;
            work[ti].data_mut()[ci] = orig - h;
            let minus = eval(&work)?;
            work[ti].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti].data()[ci];
            let denom = a.abs().max(numeric.abs());
            // Both effectively zero counts as exact agreement.
            let err = if denom < 1e-6 { (a - numeric).abs() } else { (a - numeric).abs() / denom };
            per_tensor[ti] = per_tensor[ti].max(err);
            max_rel_err = max_rel_err.max(err);
        }
    }

    Ok(GradCheckReport { pass: max_rel_err < tol, max_rel_err, per_tensor })
}
