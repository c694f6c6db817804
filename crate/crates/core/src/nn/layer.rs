//! Layer descriptions and their per-layer forward/backward kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm_raw, Tensor2};

/// ELU α.
pub const ELU_ALPHA: f64 = 1.0;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Elu,
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
    BatchNorm { dim: usize, epsilon: f64, momentum: f64 },
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize) -> Self {
        LayerSpec::Dense { input, output }
    }

    pub fn batch_norm(dim: usize) -> Self {
        LayerSpec::BatchNorm {
            dim,
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    /// Output width given the input width, validating kind-specific parameters.
    pub fn output_dim(&self, input: usize) -> Result<usize> {
        match *self {
            LayerSpec::Dense { input: i, output } => {
                if i == 0 || output == 0 {
                    return Err(Error::config("dense layer dimensions must be positive"));
                }
                if i != input {
                    return Err(Error::config(format!(
                        "dense layer expects {i} inputs, receives {input}"
                    )));
                }
                Ok(output)
            }
            LayerSpec::BatchNorm { dim, epsilon, momentum } => {
                if dim != input {
                    return Err(Error::config(format!(
                        "batch-norm over {dim} features receives {input}"
                    )));
                }
                if !(epsilon > 0.0) || !(0.0..1.0).contains(&momentum) {
                    return Err(Error::config("batch-norm needs epsilon > 0 and momentum in [0,1)"));
                }
                Ok(input)
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::config(format!("dropout rate {rate} outside [0,1)")));
                }
                Ok(input)
            }
            LayerSpec::LeakyRelu { slope } => {
                if !(slope > 0.0 && slope < 1.0) {
                    return Err(Error::config(format!("leaky-relu slope {slope} outside (0,1)")));
                }
                Ok(input)
            }
            LayerSpec::Elu | LayerSpec::Tanh | LayerSpec::Relu | LayerSpec::Softmax => Ok(input),
        }
    }
}

/// Learnable parameters and non-learnable buffers of one layer.
///
/// Dense: params `[weight (in x out, row-major), bias]`.
/// Batch-norm: params `[scale, shift]`, buffers `[running_mean, running_var]`.
#[derive(Clone, Debug)]
pub(crate) struct LayerState {
    pub spec: LayerSpec,
    pub params: Vec<Vec<f64>>,
    pub buffers: Vec<Vec<f64>>,
}

/// What a train-mode forward leaves behind for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum Aux {
    None,
    BatchNorm { normalized: Tensor2, inv_std: Vec<f64> },
    Dropout { mask: Vec<f64> },
}

impl LayerState {
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Self {
        match spec {
            LayerSpec::Dense { input, output } => {
                // Glorot uniform
                let limit = (6.0 / (input + output) as f64).sqrt();
                let weight = (0..input * output).map(|_| rng.gen_range(-limit..limit)).collect();
                Self {
                    spec,
                    params: vec![weight, vec![0.0; output]],
                    buffers: Vec::new(),
                }
            }
            LayerSpec::BatchNorm { dim, .. } => Self {
                spec,
                params: vec![vec![1.0; dim], vec![0.0; dim]],
                buffers: vec![vec![0.0; dim], vec![1.0; dim]],
            },
            _ => Self {
                spec,
                params: Vec::new(),
                buffers: Vec::new(),
            },
        }
    }

    /// Pure forward pass; batch-norm uses running statistics, dropout is identity.
    pub fn forward_eval(&self, x: &Tensor2) -> Result<Tensor2> {
        match self.spec {
            LayerSpec::BatchNorm { epsilon, .. } => {
                let (mean, var) = (&self.buffers[0], &self.buffers[1]);
                let (scale, shift) = (&self.params[0], &self.params[1]);
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
                let mut out = x.clone();
                for r in 0..out.rows() {
                    for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                        *v = (*v - mean[c]) * inv[c] * scale[c] + shift[c];
                    }
                }
                Ok(out)
            }
            LayerSpec::Dropout { .. } => Ok(x.clone()),
            _ => Ok(self.forward_stateless(x)),
        }
    }

    /// Train-mode forward; updates batch-norm running statistics.
    pub fn forward_train(&mut self, x: &Tensor2, rng: &mut impl Rng) -> Result<(Tensor2, Aux)> {
        match self.spec {
            LayerSpec::BatchNorm { epsilon, momentum, .. } => {
                let n = x.rows();
                if n < 2 {
                    return Err(Error::config(
                        "batch-norm in train mode needs a batch of at least 2 examples",
                    ));
                }
                let cols = x.cols();
                let mut mean = x.column_sums();
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; cols];
                for r in x.iter_rows() {
                    for c in 0..cols {
                        let d = r[c] - mean[c];
                        var[c] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();

                let mut normalized = x.clone();
                for r in 0..n {
                    for (c, v) in normalized.row_mut(r).iter_mut().enumerate() {
                        *v = (*v - mean[c]) * inv_std[c];
                    }
                }
                let (scale, shift) = (&self.params[0], &self.params[1]);
                let mut out = normalized.clone();
                for r in 0..n {
                    for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                        *v = *v * scale[c] + shift[c];
                    }
                }

                let (rm, rv) = self.buffers.split_at_mut(1);
                for c in 0..cols {
                    rm[0][c] = momentum * rm[0][c] + (1.0 - momentum) * mean[c];
                    rv[0][c] = momentum * rv[0][c] + (1.0 - momentum) * var[c];
                }
                Ok((out, Aux::BatchNorm { normalized, inv_std }))
            }
            LayerSpec::Dropout { rate } => {
                if rate == 0.0 {
                    return Ok((
                        x.clone(),
                        Aux::Dropout {
                            mask: vec![1.0; x.as_slice().len()],
                        },
                    ));
                }
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.as_slice().len())
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                let mut out = x.clone();
                out.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                Ok((out, Aux::Dropout { mask }))
            }
            _ => Ok((self.forward_stateless(x), Aux::None)),
        }
    }

    fn forward_stateless(&self, x: &Tensor2) -> Tensor2 {
        match self.spec {
            LayerSpec::Dense { input, output } => {
                let mut y = gemm_raw(x.as_slice(), x.shape(), false, &self.params[0], (input, output), false)
                    .expect("dense input width validated");
                let b = &self.params[1];
                for r in 0..y.rows() {
                    y.row_mut(r).iter_mut().zip(b).for_each(|(v, b)| *v += b);
                }
                y
            }
            LayerSpec::Elu => x.map(|v| if v >= 0.0 { v } else { ELU_ALPHA * v.exp_m1() }),
            LayerSpec::Tanh => x.map(f64::tanh),
            LayerSpec::Relu => x.map(|v| v.max(0.0)),
            LayerSpec::LeakyRelu { slope } => x.map(|v| if v >= 0.0 { v } else { slope * v }),
            LayerSpec::Softmax => crate::nn::loss::softmax_rows(x),
            LayerSpec::BatchNorm { .. } | LayerSpec::Dropout { .. } => unreachable!(),
        }
    }

    /// Returns parameter gradients (aligned with `params`) and the input gradient.
    pub fn backward(
        &self,
        input: &Tensor2,
        output: &Tensor2,
        aux: &Aux,
        dy: &Tensor2,
    ) -> Result<(Vec<Vec<f64>>, Tensor2)> {
        let zip_map = |f: &dyn Fn(f64, f64, f64) -> f64| {
            let data = dy
                .as_slice()
                .iter()
                .zip(input.as_slice())
                .zip(output.as_slice())
                .map(|((&g, &x), &y)| f(g, x, y))
                .collect();
            Tensor2::from_vec(dy.rows(), dy.cols(), data)
        };
        match (&self.spec, aux) {
            (
                &LayerSpec::Dense {
                    input: din,
                    output: dout,
                },
                _,
            ) => {
                let dw = input.gemm(true, dy, false)?;
                let db = dy.column_sums();
                let dx = gemm_raw(dy.as_slice(), dy.shape(), false, &self.params[0], (din, dout), true)?;
                Ok((vec![dw.into_vec(), db], dx))
            }
            (LayerSpec::Elu, _) => Ok((
                Vec::new(),
                zip_map(&|g, x, y| if x > 0.0 { g } else { g * (y + ELU_ALPHA) })?,
            )),
            (LayerSpec::Tanh, _) => Ok((Vec::new(), zip_map(&|g, _, y| g * (1.0 - y * y))?)),
            (LayerSpec::Relu, _) => Ok((Vec::new(), zip_map(&|g, x, _| if x > 0.0 { g } else { 0.0 })?)),
            (&LayerSpec::LeakyRelu { slope }, _) => {
                Ok((Vec::new(), zip_map(&|g, x, _| if x >= 0.0 { g } else { g * slope })?))
            }
            (LayerSpec::Softmax, _) => {
                let mut dx = Tensor2::zeros(dy.rows(), dy.cols());
                for r in 0..dy.rows() {
                    let (g, y) = (dy.row(r), output.row(r));
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = y[c] * (g[c] - dot);
                    }
                }
                Ok((Vec::new(), dx))
            }
            (LayerSpec::BatchNorm { .. }, Aux::BatchNorm { normalized, inv_std }) => {
                let n = dy.rows() as f64;
                let cols = dy.cols();
                let scale = &self.params[0];
                let dshift = dy.column_sums();
                let mut dscale = vec![0.0; cols];
                for r in 0..dy.rows() {
                    for (c, d) in dscale.iter_mut().enumerate() {
                        *d += dy.get(r, c) * normalized.get(r, c);
                    }
                }
                // dx = inv_std / N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                // with dxhat = dy * scale
                let mut dx = Tensor2::zeros(dy.rows(), cols);
                for r in 0..dy.rows() {
                    for c in 0..cols {
                        let dxhat = dy.get(r, c) * scale[c];
                        let sum_dxhat = dshift[c] * scale[c];
                        let sum_dxhat_xhat = dscale[c] * scale[c];
                        let v = inv_std[c] / n * (n * dxhat - sum_dxhat - normalized.get(r, c) * sum_dxhat_xhat);
                        dx.set(r, c, v);
                    }
                }
                Ok((vec![dscale, dshift], dx))
            }
            (LayerSpec::Dropout { .. }, Aux::Dropout { mask }) => {
                let data = dy.as_slice().iter().zip(mask).map(|(g, m)| g * m).collect();
                Ok((Vec::new(), Tensor2::from_vec(dy.rows(), dy.cols(), data)?))
            }
            (spec, _) => Err(Error::Usage(format!(
                "missing train-mode state for {spec:?} in backward"
            ))),
        }
    }
}
