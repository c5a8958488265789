//! Layer definitions with forward passes and hand-derived backward passes.
//!
//! Every layer works on batch-major tensors: vectors are `[B, D]` and
//! sequences are `[B, T, F]`. Parameters are passed in the order given by
//! [`LayerSpec::param_shapes`].

mod conv;
mod dense;
mod norm;
mod recurrent;

use std::fmt;

use super::params::ParamKind;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub use norm::{BATCH_NORM_EPSILON, BATCH_NORM_MOMENTUM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecurrentCell {
    /// Fully connected RNN, `h = tanh(x·Wx + h·Wh + b)`.
    Frnn,
    Lstm,
    Gru,
}

impl RecurrentCell {
    /// Number of stacked gate blocks in the weight matrices.
    pub fn gates(self) -> usize {
        match self {
            RecurrentCell::Frnn => 1,
            RecurrentCell::Lstm => 4,
            RecurrentCell::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecurrentCell::Frnn => "frnn",
            RecurrentCell::Lstm => "lstm",
            RecurrentCell::Gru => "gru",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// `[B, inputs]` → `[B, units]`
    Dense {
        inputs: usize,
        units: usize,
    },
    /// `[B, T, in_channels]` → `[B, T - kernel_size + 1, filters]`, stride 1, no padding.
    Conv1d {
        in_channels: usize,
        kernel_size: usize,
        filters: usize,
    },
    /// `[B, T, inputs]` → `[B, T, units]`, or `[B, units]` (last step) when
    /// `return_sequences` is false.
    Recurrent {
        cell: RecurrentCell,
        inputs: usize,
        units: usize,
        return_sequences: bool,
    },
    /// Normalizes each feature of a `[B, features]` input.
    BatchNorm {
        features: usize,
    },
    Relu,
    Sigmoid,
    /// `[B, T, F]` → `[B, T·F]`
    Flatten,
    /// Joins two `[B, D]` inputs along the feature axis.
    Concat,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Recurrent { cell, .. } => cell.name(),
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Concat => "concat",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Dense { inputs, units } => inputs > 0 && units > 0,
            LayerSpec::Conv1d { in_channels, kernel_size, filters } => {
                in_channels > 0 && kernel_size > 0 && filters > 0
            }
            LayerSpec::Recurrent { inputs, units, .. } => inputs > 0 && units > 0,
            LayerSpec::BatchNorm { features } => features > 0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("{self} has a zero hyperparameter")))
        }
    }

    /// Parameter names (suffixes), shapes and kinds in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>, ParamKind)> {
        use ParamKind::*;
        match *self {
            LayerSpec::Dense { inputs, units } => {
                vec![("kernel", vec![inputs, units], Trainable), ("bias", vec![units], Trainable)]
            }
            LayerSpec::Conv1d { in_channels, kernel_size, filters } => {
                vec![("kernel", vec![kernel_size, in_channels, filters], Trainable), ("bias", vec![filters], Trainable)]
            }
            LayerSpec::Recurrent { cell, inputs, units, .. } => {
                let g = cell.gates();
                vec![
                    ("input_kernel", vec![inputs, g * units], Trainable),
                    ("recurrent_kernel", vec![units, g * units], Trainable),
                    ("bias", vec![g * units], Trainable),
                ]
            }
            LayerSpec::BatchNorm { features } => vec![
                ("gamma", vec![features], Trainable),
                ("beta", vec![features], Trainable),
                ("running_mean", vec![features], RunningStatistic),
                ("running_var", vec![features], RunningStatistic),
            ],
            _ => Vec::new(),
        }
    }

    /// Total scalar parameter count, including running statistics.
    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }

    /// Output shape (without the batch dimension) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || Error::config(format!("{self} cannot take input of shape {input:?}"));
        match *self {
            LayerSpec::Dense { inputs, units } => match input {
                [d] if *d == inputs => Ok(vec![units]),
                _ => Err(mismatch()),
            },
            LayerSpec::Conv1d { in_channels, kernel_size, filters } => match input {
                [t, c] if *c == in_channels && *t >= kernel_size => Ok(vec![t - kernel_size + 1, filters]),
                _ => Err(mismatch()),
            },
            LayerSpec::Recurrent { inputs, units, return_sequences, .. } => match input {
                [t, f] if *f == inputs => Ok(if return_sequences { vec![*t, units] } else { vec![units] }),
                _ => Err(mismatch()),
            },
            LayerSpec::BatchNorm { features } => match input {
                [d] if *d == features => Ok(vec![features]),
                _ => Err(mismatch()),
            },
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Concat => Err(Error::config("concat output depends on both inputs")),
        }
    }

    /// Fan-in and fan-out used by Glorot-uniform initialization, for a
    /// parameter of the given shape.
    pub(crate) fn glorot_fans(&self, shape: &[usize]) -> Option<(usize, usize)> {
        match (self, shape) {
            (LayerSpec::Dense { .. }, [i, o]) => Some((*i, *o)),
            (LayerSpec::Recurrent { .. }, [i, o]) => Some((*i, *o)),
            (LayerSpec::Conv1d { .. }, [k, c, f]) => Some((k * c, k * f)),
            _ => None,
        }
    }

    /// Runs one layer. Concat is handled by the model, not here.
    pub fn forward(&self, params: &[&Tensor], input: &Tensor, mode: Mode) -> Result<(Tensor, LayerCache)> {
        self.check_params(params)?;
        let batch = input.shape()[0];
        let in_shape = &input.shape()[1..];
        let out_shape = self.output_shape(in_shape)?;
        let mut full_shape = vec![batch];
        full_shape.extend_from_slice(&out_shape);
        match *self {
            LayerSpec::Dense { inputs, units } => {
                let y = dense::forward(input.data(), params[0].data(), params[1].data(), batch, inputs, units);
                Ok((Tensor::new(full_shape, y)?, LayerCache::Input(input.clone())))
            }
            LayerSpec::Conv1d { in_channels, kernel_size, filters } => {
                let steps = in_shape[0];
                let y = conv::forward(
                    input.data(),
                    params[0].data(),
                    params[1].data(),
                    conv::Dims { batch, steps, channels: in_channels, kernel: kernel_size, filters },
                );
                Ok((Tensor::new(full_shape, y)?, LayerCache::Input(input.clone())))
            }
            LayerSpec::Recurrent { cell, inputs, units, return_sequences } => {
                let dims = recurrent::Dims { batch, steps: in_shape[0], inputs, units };
                let (y, trace) = recurrent::forward(
                    cell,
                    input.data(),
                    params[0].data(),
                    params[1].data(),
                    params[2].data(),
                    dims,
                    return_sequences,
                );
                Ok((Tensor::new(full_shape, y)?, LayerCache::Recurrent(trace)))
            }
            LayerSpec::BatchNorm { features } => {
                let (y, cache) = norm::forward(
                    input.data(),
                    params[0].data(),
                    params[1].data(),
                    params[2].data(),
                    params[3].data(),
                    batch,
                    features,
                    mode,
                );
                Ok((Tensor::new(full_shape, y)?, LayerCache::BatchNorm(cache)))
            }
            LayerSpec::Relu => {
                let y = input.data().iter().map(|&v| v.max(0.0)).collect();
                Ok((Tensor::new(full_shape, y)?, LayerCache::Input(input.clone())))
            }
            LayerSpec::Sigmoid => {
                let y: Vec<f64> = input.data().iter().map(|&v| super::linalg::sigmoid(v)).collect();
                let out = Tensor::new(full_shape, y)?;
                Ok((out.clone(), LayerCache::Output(out)))
            }
            LayerSpec::Flatten => {
                Ok((Tensor::new(full_shape, input.data().to_vec())?, LayerCache::Shape(input.shape().to_vec())))
            }
            LayerSpec::Concat => Err(Error::contract("concat is applied by the model graph")),
        }
    }

    /// Backpropagates `grad_out`, accumulating parameter gradients into
    /// `grads` (aligned with `param_shapes`) and returning the input gradient.
    pub fn backward(
        &self,
        params: &[&Tensor],
        cache: &LayerCache,
        grad_out: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        let batch = grad_out.shape()[0];
        match (self, cache) {
            (&LayerSpec::Dense { inputs, units }, LayerCache::Input(x)) => {
                let (k, b) = split2(grads);
                let dx = dense::backward(x.data(), params[0].data(), grad_out.data(), k, b, batch, inputs, units);
                Tensor::new(x.shape().to_vec(), dx)
            }
            (&LayerSpec::Conv1d { in_channels, kernel_size, filters }, LayerCache::Input(x)) => {
                let (k, b) = split2(grads);
                let dims =
                    conv::Dims { batch, steps: x.shape()[1], channels: in_channels, kernel: kernel_size, filters };
                let dx = conv::backward(x.data(), params[0].data(), grad_out.data(), k, b, dims);
                Tensor::new(x.shape().to_vec(), dx)
            }
            (&LayerSpec::Recurrent { cell, inputs, units, return_sequences }, LayerCache::Recurrent(trace)) => {
                let dims = recurrent::Dims { batch, steps: trace.steps, inputs, units };
                let [gx, gh, gb] = grads else {
                    return Err(Error::contract("recurrent layer expects three gradient slots"));
                };
                let dx = recurrent::backward(
                    cell,
                    trace,
                    params[0].data(),
                    params[1].data(),
                    grad_out.data(),
                    gx.data_mut(),
                    gh.data_mut(),
                    gb.data_mut(),
                    dims,
                    return_sequences,
                );
                Tensor::new(vec![batch, trace.steps, inputs], dx)
            }
            (&LayerSpec::BatchNorm { features }, LayerCache::BatchNorm(cache)) => {
                let (g, b) = split2(grads);
                let dx = norm::backward(cache, params[0].data(), grad_out.data(), g, b, batch, features)?;
                Tensor::new(vec![batch, features], dx)
            }
            (LayerSpec::Relu, LayerCache::Input(x)) => {
                let dx = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                Tensor::new(x.shape().to_vec(), dx)
            }
            (LayerSpec::Sigmoid, LayerCache::Output(y)) => {
                let dx = y.data().iter().zip(grad_out.data()).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                Tensor::new(y.shape().to_vec(), dx)
            }
            (LayerSpec::Flatten, LayerCache::Shape(shape)) => Tensor::new(shape.clone(), grad_out.data().to_vec()),
            _ => Err(Error::contract(format!("cache does not belong to a {self} layer"))),
        }
    }

    fn check_params(&self, params: &[&Tensor]) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(params).any(|((_, s, _), p)| p.shape() != s.as_slice()) {
            return Err(Error::config(format!("parameters do not match {self}")));
        }
        Ok(())
    }
}

fn split2(grads: &mut [Tensor]) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads.split_at_mut(1);
    (a[0].data_mut(), b[0].data_mut())
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Dense { inputs, units } => write!(f, "dense({inputs}→{units})"),
            LayerSpec::Conv1d { in_channels, kernel_size, filters } => {
                write!(f, "conv1d(k={kernel_size}, {in_channels}→{filters})")
            }
            LayerSpec::Recurrent { cell, inputs, units, return_sequences } => {
                write!(f, "{}({inputs}→{units}{})", cell.name(), if return_sequences { ", seq" } else { ", last" })
            }
            LayerSpec::BatchNorm { features } => write!(f, "batchnorm({features})"),
            _ => f.write_str(self.kind_name()),
        }
    }
}

/// Intermediate values kept by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache {
    Input(Tensor),
    Output(Tensor),
    Shape(Vec<usize>),
    Recurrent(recurrent::Trace),
    BatchNorm(norm::Cache),
}

impl LayerCache {
    /// New running mean and variance computed by a train-mode batch-norm pass.
    pub fn running_update(&self) -> Option<(&[f64], &[f64])> {
        match self {
            LayerCache::BatchNorm(c) => c.running_update(),
            _ => None,
        }
    }
}
