//! Network families built on [`crate::autodiff`]: convolutional autoencoder,
//! variational autoencoder and plain feed-forward regressors, with their
//! training loops.

mod arch;
mod train;

use alloc::vec::Vec;

pub use arch::Architecture;
pub use train::{cae_train, ffnn_train, vae_train, TrainConfig};

use crate::autodiff::{Network, Tensor};
use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Cae,
    Vae,
    Ffnn,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cae => "cae",
            Self::Vae => "vae",
            Self::Ffnn => "ffnn",
        }
    }
}

/// Per-feature affine map onto [-1, 1]: `x' = (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Affine {
    /// Fits the map on the columns of `rows`. Constant columns get scale 1.
    pub fn fit_unit_range(rows: &Matrix) -> Self {
        let cols = rows.cols();
        let mut offset = Vec::with_capacity(cols);
        let mut scale = Vec::with_capacity(cols);
        for c in 0..cols {
            let (lo, hi) = (0..rows.rows())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| {
                    (l.min(rows[(r, c)]), h.max(rows[(r, c)]))
                });
            let half = 0.5 * (hi - lo);
            offset.push(0.5 * (hi + lo));
            scale.push(if half > 0.0 && half.is_finite() {
                half
            } else {
                1.0
            });
        }
        Self { offset, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            offset: alloc::vec![0.0; dim],
            scale: alloc::vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| (v - o) / s)
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| v * s + o)
            .collect()
    }

    fn apply_rows(&self, m: &Matrix) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..m.rows()).map(|r| self.apply(m.row(r))).collect();
        Matrix::from_rows(&rows).expect("rectangular")
    }
}

/// Loss components recorded for one training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// Mean squared error over the epoch's mini-batches.
    pub reconstruction: f64,
    /// Unweighted KL term (VAE only, zero otherwise).
    pub kl: f64,
    pub kl_weight: f64,
}

/// A trained network of one family.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub family: Family,
    pub encoder: Network,
    /// Absent for feed-forward regressors.
    pub decoder: Option<Network>,
    pub latent_dim: usize,
    /// Signal length for autoencoders, input width for regressors.
    pub input_len: usize,
    pub log: Vec<EpochLog>,
    /// Mean RSS/SSS (%) of the deterministic reconstruction of the training
    /// set after the last epoch (autoencoders only).
    pub train_rss: f64,
    pub seed: u64,
    /// Regressor input normalization.
    pub input_map: Option<Affine>,
    /// Regressor output normalization.
    pub output_map: Option<Affine>,
}

impl NetworkModel {
    fn require(&self, families: &[Family]) -> Result<()> {
        if families.contains(&self.family) {
            Ok(())
        } else {
            Err(Error::Family {
                expected: families[0].name(),
                found: self.family.name(),
            })
        }
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            bail!(Dimension, "{what} has length {got}, model expects {want}");
        }
        Ok(())
    }

    /// Encoder head: `(mu, log_var)` for a VAE, `(z, None)` otherwise.
    fn encoder_heads(&self, signals: &Matrix) -> Result<(Matrix, Option<Matrix>)> {
        let out = self.encoder.infer(&Tensor::from_rows(&rows_of(signals))?)?;
        let d = self.latent_dim;
        let n = signals.rows();
        match self.family {
            Family::Vae => {
                let mut mu = Matrix::zeros(n, d);
                let mut lv = Matrix::zeros(n, d);
                for r in 0..n {
                    mu.row_mut(r).copy_from_slice(&out.row(r)[..d]);
                    lv.row_mut(r).copy_from_slice(&out.row(r)[d..2 * d]);
                }
                Ok((mu, Some(lv)))
            }
            _ => Ok((Matrix::from_vec(n, d, out.into_data())?, None)),
        }
    }

    /// Latent codes of each row of `signals`; the posterior mean for a VAE.
    pub fn encode_batch(&self, signals: &Matrix) -> Result<Matrix> {
        self.require(&[Family::Cae, Family::Vae])?;
        self.check_len(signals.cols(), self.input_len, "signal")?;
        Ok(self.encoder_heads(signals)?.0)
    }

    pub fn encode(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, signal.len(), signal.to_vec())?;
        Ok(self.encode_batch(&m)?.into_vec())
    }

    /// Posterior `(mu, log_var)` of a VAE.
    pub fn posterior(&self, signal: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.require(&[Family::Vae])?;
        self.check_len(signal.len(), self.input_len, "signal")?;
        let m = Matrix::from_vec(1, signal.len(), signal.to_vec())?;
        let (mu, lv) = self.encoder_heads(&m)?;
        Ok((mu.into_vec(), lv.expect("vae head").into_vec()))
    }

    pub fn decode_batch(&self, latents: &Matrix) -> Result<Matrix> {
        self.require(&[Family::Cae, Family::Vae])?;
        self.check_len(latents.cols(), self.latent_dim, "latent")?;
        let decoder = self.decoder.as_ref().expect("autoencoder has a decoder");
        let out = decoder.infer(&Tensor::from_rows(&rows_of(latents))?)?;
        Matrix::from_vec(latents.rows(), self.input_len, out.into_data())
    }

    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, latent.len(), latent.to_vec())?;
        Ok(self.decode_batch(&m)?.into_vec())
    }

    /// Draws `count` latents `mu + sigma * eps` from the posterior of `signal`.
    pub fn sample_latents(
        &self,
        signal: &[f64],
        count: usize,
        rng: &mut SplitMix64,
    ) -> Result<Matrix> {
        if count == 0 {
            bail!(Config, "sample count must be at least 1");
        }
        let (mu, lv) = self.posterior(signal)?;
        let d = self.latent_dim;
        let mut out = Matrix::zeros(count, d);
        for r in 0..count {
            for j in 0..d {
                out[(r, j)] = mu[j] + libm::exp(0.5 * lv[j]) * rng.normal();
            }
        }
        Ok(out)
    }

    /// Regressor prediction in the caller's units.
    pub fn predict_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        self.require(&[Family::Ffnn])?;
        self.check_len(inputs.cols(), self.input_len, "input")?;
        let scaled = match &self.input_map {
            Some(a) => a.apply_rows(inputs),
            None => inputs.clone(),
        };
        let out = self.encoder.infer(&Tensor::from_rows(&rows_of(&scaled))?)?;
        let q = self.latent_dim;
        let raw = Matrix::from_vec(inputs.rows(), q, out.into_data())?;
        Ok(match &self.output_map {
            Some(a) => {
                let rows: Vec<Vec<f64>> = (0..raw.rows()).map(|r| a.invert(raw.row(r))).collect();
                Matrix::from_rows(&rows)?
            }
            None => raw,
        })
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.predict_batch(&m)?.into_vec())
    }

    /// Mean RSS/SSS (%) of `decode(encode(y))` over the rows of `signals`.
    pub fn reconstruction_rss(&self, signals: &Matrix) -> Result<f64> {
        let rec = self.decode_batch(&self.encode_batch(signals)?)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for r in 0..signals.rows() {
            if let Ok(e) = crate::signal::rss_sss(signals.row(r), rec.row(r)) {
                total += e;
                count += 1;
            }
        }
        Ok(if count == 0 {
            0.0
        } else {
            total / count as f64
        })
    }
}

fn rows_of(m: &Matrix) -> Vec<&[f64]> {
    (0..m.rows()).map(|r| m.row(r)).collect()
}
