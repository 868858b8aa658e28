//! Central-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Smallest and largest accepted finite-difference step.
pub const EPS_RANGE: (f64, f64) = (1e-6, 1e-3);

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

const PROJECTION_SEED: u64 = 0x5ca1_ab1e;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Input tensor and flat coordinate of the worst error.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    /// Number of coordinates probed.
    pub probed: usize,
    /// Number of extra probes taken at smaller steps.
    pub refined: usize,
}

/// Relative error with the floored denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Reduces a possibly non-scalar output to a scalar with a fixed random projection.
fn project(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let weights = Tensor::from_fn(g.shape(out).to_vec(), |_| rng.gen_range(-1.0..1.0));
    let w = g.input(weights);
    let prod = g.broadcast_mul(out, w)?;
    Ok(g.sum(prod))
}

/// Compares the analytic gradient of `forward` against central differences
/// `(f(x + eps) - f(x - eps)) / (2 eps)` at every coordinate of every input.
///
/// `forward` receives one graph variable per input and returns the output
/// under test; non-scalar outputs are contracted with a fixed random tensor.
pub fn grad_check<Fwd>(inputs: &[Tensor<f64>], eps: f64, forward: Fwd) -> Result<GradCheckReport>
where
    Fwd: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_refined(inputs, &[eps], 0.0, forward)
}

/// Like [`grad_check`], but a coordinate whose error at `steps[0]` exceeds
/// `tolerance` is re-probed at each following step, keeping the smallest
/// error. Composite networks have ReLU and max kinks everywhere; a kink
/// lying inside `[x - eps, x + eps]` corrupts the difference quotient but
/// not one taken with a smaller step.
pub fn grad_check_refined<Fwd>(
    inputs: &[Tensor<f64>],
    steps: &[f64],
    tolerance: f64,
    forward: Fwd,
) -> Result<GradCheckReport>
where
    Fwd: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if steps.is_empty() {
        return Err(Error::Argument("gradient check needs at least one step".into()));
    }
    for &eps in steps {
        if !(EPS_RANGE.0..=EPS_RANGE.1).contains(&eps) {
            return Err(Error::Argument(format!(
                "gradient-check step {eps} outside [{}, {}]",
                EPS_RANGE.0, EPS_RANGE.1
            )));
        }
    }
    let evaluate = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = forward(&mut g, &vars)?;
        let s = project(&mut g, out)?;
        Ok(g.value(s).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = forward(&mut g, &vars)?;
    let s = project(&mut g, out)?;
    let grads = g.backward(s)?;

    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, probed: 0, refined: 0 };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros_like(&inputs[ti]));
        for j in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[j];
            let a = analytic.data()[j];
            let mut best = (f64::INFINITY, 0.0);
            for (k, &eps) in steps.iter().enumerate() {
                work[ti].data_mut()[j] = orig + eps;
                let plus = evaluate(&work)?;
                work[ti].data_mut()[j] = orig - eps;
                let minus = evaluate(&work)?;
                work[ti].data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let err = relative_error(a, numeric);
                if err < best.0 || !err.is_finite() {
                    best = (err, numeric);
                }
                if k > 0 {
                    report.refined += 1;
                }
                if best.0 <= tolerance {
                    break;
                }
            }
            report.probed += 1;
            let (err, numeric) = best;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst = (ti, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
