use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{bail, Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Self::Tanh => libm::tanh(x),
            Self::Sigmoid => 1.0 / (1.0 + libm::exp(-x)),
            Self::Linear => x,
        }
    }

    /// Derivative at input `x` with output `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - y * y,
            Self::Sigmoid => y * (1.0 - y),
            Self::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Linear => "linear",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "linear" => Ok(Self::Linear),
            other => bail!(Config, "unknown activation `{other}`"),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One layer of a [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Fully connected over all features of a batch row; the output is laid
    /// out as `out_channels` channels of `units / out_channels` samples.
    Dense {
        units: usize,
        out_channels: usize,
    },
    Conv1d {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Conv1dTranspose {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        factor: usize,
    },
    Upsample {
        factor: usize,
    },
    Activation(Activation),
}

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        Self::Dense {
            units,
            out_channels: 1,
        }
    }

    fn has_params(&self) -> bool {
        matches!(
            self,
            Self::Dense { .. } | Self::Conv1d { .. } | Self::Conv1dTranspose { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Dense {
                units,
                out_channels,
            } => units > 0 && out_channels > 0 && units % out_channels == 0,
            Self::Conv1d {
                channels,
                kernel,
                stride,
                padding,
            }
            | Self::Conv1dTranspose {
                channels,
                kernel,
                stride,
                padding,
            } => channels > 0 && kernel > 0 && stride > 0 && padding < kernel,
            Self::MaxPool { factor } | Self::Upsample { factor } => factor > 0,
            Self::Activation(_) => true,
        };
        if !ok {
            bail!(Config, "invalid layer {self:?}");
        }
        Ok(())
    }

    /// Output `(channels, length)` and parameter shapes for an input shape.
    fn propagate(
        &self,
        [c, l]: [usize; 2],
    ) -> Result<([usize; 2], Option<([usize; 3], [usize; 3])>)> {
        self.validate()?;
        Ok(match *self {
            Self::Dense {
                units,
                out_channels,
            } => (
                [out_channels, units / out_channels],
                Some(([1, units, c * l], [1, 1, units])),
            ),
            Self::Conv1d {
                channels,
                kernel,
                stride,
                padding,
            } => {
                if stride >= l || l + 2 * padding < kernel {
                    bail!(
                        Dimension,
                        "conv1d(k={kernel}, s={stride}, p={padding}) does not fit length {l}"
                    );
                }
                (
                    [channels, (l + 2 * padding - kernel) / stride + 1],
                    Some(([channels, c, kernel], [1, 1, channels])),
                )
            }
            Self::Conv1dTranspose {
                channels,
                kernel,
                stride,
                padding,
            } => {
                let full = stride * (l - 1) + kernel;
                if full <= 2 * padding {
                    bail!(Dimension, "transposed convolution output would be empty");
                }
                (
                    [channels, full - 2 * padding],
                    Some(([c, channels, kernel], [1, 1, channels])),
                )
            }
            Self::MaxPool { factor } => ([c, l.div_ceil(factor)], None),
            Self::Upsample { factor } => ([c, l * factor], None),
            Self::Activation(_) => ([c, l], None),
        })
    }
}

/// A feed-forward stack of layers with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    input_shape: [usize; 2],
    output_shape: [usize; 2],
    /// Weight and bias of each parametric layer, in layer order.
    params: Vec<Tensor>,
}

fn shapes(specs: &[LayerSpec], input: [usize; 2]) -> Result<([usize; 2], Vec<[usize; 3]>)> {
    if input[0] == 0 || input[1] == 0 {
        bail!(Config, "network input shape must be positive");
    }
    let mut shape = input;
    let mut params = Vec::new();
    for spec in specs {
        let (next, p) = spec.propagate(shape)?;
        if let Some((w, b)) = p {
            params.push(w);
            params.push(b);
        }
        shape = next;
    }
    Ok((shape, params))
}

impl Network {
    /// Builds the stack with uniform fan-in/fan-out scaled weights and zero
    /// biases. `input_shape` is `(channels, length)`.
    pub fn new(
        specs: Vec<LayerSpec>,
        input_shape: [usize; 2],
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let (output_shape, param_shapes) = shapes(&specs, input_shape)?;
        let mut params = Vec::with_capacity(param_shapes.len());
        for pair in param_shapes.chunks(2) {
            let w = pair[0];
            let (fan_in, fan_out) = if w[0] == 1 {
                (w[2], w[1])
            } else {
                (w[1] * w[2], w[0] * w[2])
            };
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let n: usize = w.iter().product();
            let data = (0..n).map(|_| rng.uniform(-limit, limit)).collect();
            params.push(Tensor::new(w, data)?);
            params.push(Tensor::zeros(pair[1]));
        }
        Ok(Self {
            specs,
            input_shape,
            output_shape,
            params,
        })
    }

    /// Reassembles a network from stored parameters, checking every shape.
    pub fn from_parts(
        specs: Vec<LayerSpec>,
        input_shape: [usize; 2],
        params: Vec<Tensor>,
    ) -> Result<Self> {
        let (output_shape, param_shapes) = shapes(&specs, input_shape)?;
        if param_shapes.len() != params.len()
            || param_shapes
                .iter()
                .zip(&params)
                .any(|(s, p)| *s != p.shape())
        {
            bail!(Dimension, "stored parameters do not match the layer stack");
        }
        Ok(Self {
            specs,
            input_shape,
            output_shape,
            params,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> [usize; 2] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 2] {
        self.output_shape
    }

    pub fn input_features(&self) -> usize {
        self.input_shape[0] * self.input_shape[1]
    }

    pub fn output_features(&self) -> usize {
        self.output_shape[0] * self.output_shape[1]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass of `x` (any `batch x ? x ?` tensor with the
    /// right feature count). Returns the output and the parameter leaves in
    /// `params()` order.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let xin = tape.value(x);
        if xin.features() != self.input_features() {
            bail!(
                Dimension,
                "network expects {} input features, got {}",
                self.input_features(),
                xin.features()
            );
        }
        let batch = xin.batch();
        let mut h = if [xin.channels(), xin.length()] == self.input_shape {
            x
        } else {
            tape.reshape(x, [batch, self.input_shape[0], self.input_shape[1]])?
        };
        let mut leaves = Vec::with_capacity(self.params.len());
        for p in &self.params {
            leaves.push(tape.leaf(p.clone())?);
        }
        let mut next_param = 0;
        for spec in &self.specs {
            h = match *spec {
                LayerSpec::Dense { out_channels, .. } => {
                    let (w, b) = (leaves[next_param], leaves[next_param + 1]);
                    tape.dense(h, w, b, out_channels)?
                }
                LayerSpec::Conv1d {
                    stride, padding, ..
                } => {
                    let (w, b) = (leaves[next_param], leaves[next_param + 1]);
                    tape.conv1d(h, w, b, stride, padding)?
                }
                LayerSpec::Conv1dTranspose {
                    stride, padding, ..
                } => {
                    let (w, b) = (leaves[next_param], leaves[next_param + 1]);
                    tape.conv1d_transpose(h, w, b, stride, padding)?
                }
                LayerSpec::MaxPool { factor } => tape.maxpool(h, factor)?,
                LayerSpec::Upsample { factor } => tape.upsample(h, factor)?,
                LayerSpec::Activation(a) => tape.activation(h, a)?,
            };
            if spec.has_params() {
                next_param += 2;
            }
        }
        Ok((h, leaves))
    }

    /// Forward pass without keeping the tape.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone())?;
        let (y, _) = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}
