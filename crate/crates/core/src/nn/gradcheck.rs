//! Central finite-difference verification of analytic gradients.
//!
//! The numeric side only ever calls forward passes; it shares no code with
//! the backward kernels it checks.

use rand::Rng;

use super::layer::Mode;
use super::network::Network;
use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::tensor::Tensor2;

pub const DEFAULT_STEP: f64 = 1e-5;
/// Gradient norms below this count as zero. Central differences at step 1e-5
/// carry roundoff near 1e-11·|f|, so a structurally zero gradient (a bias
/// feeding batch-norm) never measures exactly zero.
pub const ZERO_NORM: f64 = 1e-8;

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both norms are below [`ZERO_NORM`].
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < ZERO_NORM {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error per parameter tensor (empty for frozen networks).
    pub param_errors: Vec<f64>,
    pub input_error: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.param_errors.iter().copied().fold(self.input_error, f64::max)
    }
}

/// Checks a network's train-mode gradients against central differences.
///
/// The scalar probed is `Σ output ⊙ R` for a seeded random projection `R`.
/// Each probe runs on a fresh clone of `net`, so dropout masks and batch
/// statistics are identical to the analytic pass.
pub fn check_network(net: &Network, input: &Tensor2, projection_seed: u64, step: f64) -> Result<GradCheckReport> {
    let out_shape = (input.rows(), net.output_dim());
    let mut rng = stream_rng(projection_seed, 77);
    let projection: Vec<f64> = (0..out_shape.0 * out_shape.1)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let projection = Tensor2::from_vec(out_shape.0, out_shape.1, projection)?;

    let probe = |n: &Network, x: &Tensor2| -> f64 {
        let mut n = n.clone();
        let y = n.forward(x, Mode::Train).expect("probe forward");
        y.as_slice().iter().zip(projection.as_slice()).map(|(a, b)| a * b).sum()
    };

    let mut analytic_net = net.clone();
    analytic_net.forward(input, Mode::Train)?;
    let back = analytic_net.backward(&projection)?;

    let numeric_input = numeric_gradient(
        |x| probe(net, &Tensor2::from_vec(input.rows(), input.cols(), x.to_vec()).unwrap()),
        input.as_slice(),
        step,
    );
    let input_error = relative_error(back.input_grad.as_slice(), &numeric_input);

    let mut param_errors = Vec::new();
    if let Some(grads) = back.param_grads {
        for (idx, analytic) in grads.0.iter().enumerate() {
            let base = net.params()[idx].to_vec();
            let numeric = numeric_gradient(
                |theta| {
                    let mut n = net.clone();
                    n.params_mut()[idx].copy_from_slice(theta);
                    probe(&n, input)
                },
                &base,
                step,
            );
            param_errors.push(relative_error(analytic, &numeric));
        }
    }
    if !param_errors.iter().all(|e| e.is_finite()) || !input_error.is_finite() {
        return Err(Error::Numeric("gradient check produced non-finite error".into()));
    }
    Ok(GradCheckReport {
        param_errors,
        input_error,
    })
}
