use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Activation, LayerSpec};
use crate::error::{bail, Result};

/// Encoder and decoder layer stacks around a latent width.
///
/// For a VAE the encoder's last layer emits `2 * latent_dim` values
/// (`mu ‖ log_var`). Regressors use `encoder` only.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub latent_dim: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

const TRUNK_DIVISOR: usize = 16;

impl Architecture {
    /// Reference convolutional autoencoder for signals of length `m`
    /// (a multiple of 16):
    ///
    /// encoder `conv(8, k16, s4) → relu → maxpool 2 → conv(16, k8, s2) → relu → dense(D)`,
    /// decoder `dense(16·m/16) → relu → convT(8, k8, s2) → relu → upsample 2 → convT(1, k16, s4)`
    /// with a linear output.
    pub fn reference_cae(m: usize, latent_dim: usize) -> Result<Self> {
        Self::reference_trunk(m, latent_dim, latent_dim)
    }

    /// Same trunk as [`Architecture::reference_cae`] with a `2·D` encoder head.
    pub fn reference_vae(m: usize, latent_dim: usize) -> Result<Self> {
        Self::reference_trunk(m, latent_dim, 2 * latent_dim)
    }

    fn reference_trunk(m: usize, latent_dim: usize, head: usize) -> Result<Self> {
        if m == 0 || m % TRUNK_DIVISOR != 0 {
            bail!(
                Config,
                "reference architecture needs a signal length divisible by {TRUNK_DIVISOR}, got {m}"
            );
        }
        if latent_dim == 0 || latent_dim >= m {
            bail!(Config, "latent width {latent_dim} must lie in 1..{m}");
        }
        let bottleneck = m / TRUNK_DIVISOR;
        let encoder = vec![
            LayerSpec::Conv1d {
                channels: 8,
                kernel: 16,
                stride: 4,
                padding: 6,
            },
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::MaxPool { factor: 2 },
            LayerSpec::Conv1d {
                channels: 16,
                kernel: 8,
                stride: 2,
                padding: 3,
            },
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::dense(head),
        ];
        let decoder = vec![
            LayerSpec::Dense {
                units: 16 * bottleneck,
                out_channels: 16,
            },
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::Conv1dTranspose {
                channels: 8,
                kernel: 8,
                stride: 2,
                padding: 3,
            },
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::Upsample { factor: 2 },
            LayerSpec::Conv1dTranspose {
                channels: 1,
                kernel: 16,
                stride: 4,
                padding: 6,
            },
        ];
        Ok(Self {
            latent_dim,
            encoder,
            decoder,
        })
    }

    /// Dense regressor: `hidden` tanh layers then a linear layer of width `outputs`.
    pub fn ffnn(hidden: &[usize], outputs: usize) -> Self {
        let mut encoder = Vec::new();
        for &h in hidden {
            encoder.push(LayerSpec::dense(h));
            encoder.push(LayerSpec::Activation(Activation::Tanh));
        }
        encoder.push(LayerSpec::dense(outputs));
        Self {
            latent_dim: outputs,
            encoder,
            decoder: Vec::new(),
        }
    }

    /// Two hidden layers of 32 tanh units.
    pub fn default_ffnn(outputs: usize) -> Self {
        Self::ffnn(&[32, 32], outputs)
    }
}
