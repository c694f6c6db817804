//! Sequential layer stacks with cached train-mode forward passes.

use rand_chacha::ChaCha8Rng;

use super::layer::{Aux, LayerSpec, LayerState, Mode};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, streams};
use crate::tensor::Tensor2;

/// Per-parameter gradients, in the same order as [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients(net.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += scale * b);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug)]
pub struct Backward {
    /// `None` for a frozen network.
    pub param_grads: Option<Gradients>,
    pub input_grad: Tensor2,
}

#[derive(Clone, Debug)]
struct Trace {
    /// `activations[i]` is the input of layer `i`; the last entry is the output.
    activations: Vec<Tensor2>,
    aux: Vec<Aux>,
}

/// A feedforward stack of [`LayerSpec`] layers plus its parameters.
///
/// Dropout masks come from an RNG owned by the network and seeded at
/// construction, so train-mode passes are reproducible for a given seed.
#[derive(Clone, Debug)]
pub struct Network {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerState>,
    anchors: Option<Vec<Vec<f64>>>,
    trainable: bool,
    seed: u64,
    dropout_rng: ChaCha8Rng,
    trace: Option<Trace>,
}

impl Network {
    /// Builds and initializes a network; weights are Glorot-uniform, biases zero.
    pub fn new(input_dim: usize, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("network input dimension must be positive"));
        }
        let mut dim = input_dim;
        for s in &specs {
            dim = s.output_dim(dim)?;
        }
        let mut init = stream_rng(seed, streams::INIT);
        let layers = specs.into_iter().map(|s| LayerState::init(s, &mut init)).collect();
        Ok(Self {
            input_dim,
            output_dim: dim,
            layers,
            anchors: None,
            trainable: true,
            seed,
            dropout_rng: stream_rng(seed, streams::DROPOUT),
            trace: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| l.params.iter().map(Vec::as_slice))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.iter_mut().map(Vec::as_mut_slice))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// All parameters concatenated in canonical order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().concat()
    }

    /// Running mean/variance buffers of batch-norm layers.
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| l.buffers.iter().map(Vec::as_slice))
            .collect()
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.buffers.iter_mut()).collect()
    }

    pub(crate) fn param_vecs_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect()
    }

    /// Snapshots the current parameters as anchors. Anchors never change afterwards.
    pub fn attach_anchors(&mut self) {
        if self.anchors.is_none() {
            self.anchors = Some(self.params().iter().map(|p| p.to_vec()).collect());
        }
    }

    pub fn anchors(&self) -> Option<&[Vec<f64>]> {
        self.anchors.as_deref()
    }

    pub(crate) fn set_anchors(&mut self, anchors: Vec<Vec<f64>>) -> Result<()> {
        let ok =
            anchors.len() == self.params().len() && anchors.iter().zip(self.params()).all(|(a, p)| a.len() == p.len());
        if !ok {
            return Err(Error::config("anchor shapes do not match parameter shapes"));
        }
        self.anchors = Some(anchors);
        Ok(())
    }

    fn check_input(&self, input: &Tensor2) -> Result<()> {
        if input.cols() != self.input_dim {
            return Err(Error::config(format!(
                "network expects {} input features, got {}",
                self.input_dim,
                input.cols()
            )));
        }
        Ok(())
    }

    /// Eval-mode forward pass. Pure: never touches running statistics or RNG state.
    pub fn predict(&self, input: &Tensor2) -> Result<Tensor2> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward_eval(&x)?;
        }
        if !x.all_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        Ok(x)
    }

    /// Forward pass in the given mode. Train mode caches what [`Network::backward`] needs.
    pub fn forward(&mut self, input: &Tensor2, mode: Mode) -> Result<Tensor2> {
        if mode == Mode::Eval {
            self.trace = None;
            return self.predict(input);
        }
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &mut self.layers {
            let (y, a) = layer.forward_train(activations.last().unwrap(), &mut self.dropout_rng)?;
            activations.push(y);
            aux.push(a);
        }
        let out = activations.last().unwrap().clone();
        if !out.all_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        self.trace = Some(Trace { activations, aux });
        Ok(out)
    }

    /// Backpropagates `grad_output` through the cached train-mode forward pass.
    pub fn backward(&mut self, grad_output: &Tensor2) -> Result<Backward> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::Usage("backward called without a preceding train-mode forward".into()))?;
        let out = trace.activations.last().unwrap();
        if grad_output.shape() != out.shape() {
            return Err(Error::config(format!(
                "output gradient shape {:?} does not match output {:?}",
                grad_output.shape(),
                out.shape()
            )));
        }
        let mut grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut dy = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, dx) = layer.backward(&trace.activations[i], &trace.activations[i + 1], &trace.aux[i], &dy)?;
            grads.push(g);
            dy = dx;
        }
        if !dy.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        grads.reverse();
        let param_grads = self.trainable.then(|| Gradients(grads.into_iter().flatten().collect()));
        Ok(Backward {
            param_grads,
            input_grad: dy,
        })
    }
}
