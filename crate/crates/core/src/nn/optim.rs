//! Adam and the step-size schedule.

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers start at zero.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &Network) -> Self {
        Self::with_shapes(config, net.params().iter().map(|p| p.len()))
    }

    pub fn with_shapes(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let first: Vec<Vec<f64>> = shapes.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &Gradients, step_size: f64) -> Result<()> {
        if params.len() != self.first.len()
            || grads.0.len() != params.len()
            || params
                .iter()
                .zip(&grads.0)
                .zip(&self.first)
                .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
        {
            return Err(Error::config("adam: parameter/gradient shape mismatch"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads.0)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= step_size * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Updates a network's parameters; a frozen network is left untouched.
    pub fn step_network(&mut self, net: &mut Network, grads: &Gradients, step_size: f64) -> Result<()> {
        if !net.is_trainable() {
            return Ok(());
        }
        self.step(&mut net.params_mut(), grads, step_size)
    }
}

/// Step size for a 1-based `epoch` out of `total_epochs`: the base value,
/// cut by 40% in the next-to-last epoch and by another 40% in the last one.
pub fn lr_schedule(epoch: usize, base: f64, total_epochs: usize) -> Result<f64> {
    if epoch == 0 {
        return Err(Error::invalid("epochs are numbered from 1"));
    }
    if epoch > total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} beyond the configured {total_epochs}"
        )));
    }
    let from_end = total_epochs - epoch;
    Ok(match from_end {
        0 => base * 0.6 * 0.6,
        1 => base * 0.6,
        _ => base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(adam: &mut Adam, theta: &mut f64, g: f64, lr: f64) {
        let mut p = [*theta];
        adam.step(&mut [&mut p[..]], &Gradients(vec![vec![g]]), lr).unwrap();
        *theta = p[0];
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = Adam::with_shapes(AdamConfig::default(), [3]);
        let mut p = [1.0, -2.0, 0.5];
        for _ in 0..5 {
            adam.step(&mut [&mut p[..]], &Gradients(vec![vec![0.0; 3]]), 0.1)
                .unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_step_size() {
        for g in [1e-3, 0.5, -7.0] {
            let mut adam = Adam::with_shapes(AdamConfig::default(), [1]);
            let mut theta = 0.0;
            scalar_step(&mut adam, &mut theta, g, 0.0003);
            assert!((theta.abs() - 0.0003).abs() < 1e-6, "g={g} moved {theta}");
            assert_eq!(theta.signum(), -g.signum());
        }
    }

    #[test]
    fn quadratic_bowl_matches_reference_and_decreases() {
        // reference scalar Adam, written out independently
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-7f64, 0.01f64);
        let (mut m, mut v, mut reference) = (0.0f64, 0.0f64, 1.0f64);
        let mut adam = Adam::with_shapes(AdamConfig::default(), [1]);
        let mut theta = 1.0;
        for t in 1..=100 {
            let g = 2.0 * reference;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            reference -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);

            let before = theta;
            let g = 2.0 * theta;
            scalar_step(&mut adam, &mut theta, g, lr);
            assert!(theta.abs() < before.abs());
            assert_eq!(theta, reference);
        }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(5, 0.0003, 10).unwrap(), 0.0003);
        assert_eq!(lr_schedule(8, 0.0003, 10).unwrap(), 0.0003);
        assert!((lr_schedule(9, 0.0003, 10).unwrap() - 0.00018).abs() < 1e-18);
        assert!((lr_schedule(10, 0.0003, 10).unwrap() - 0.000108).abs() < 1e-18);
        assert!(lr_schedule(0, 0.0003, 10).is_err());
        assert!(lr_schedule(11, 0.0003, 10).is_err());
    }
}
