use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::{Affine, Architecture, EpochLog, Family, NetworkModel};
use crate::autodiff::{AdamState, Gradients, Network, Tape, Tensor, Var};
use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

/// Optimizer and schedule settings shared by all families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of `learning_rate`;
    /// the rate decays geometrically in between.
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Final KL weight κ (VAE only).
    pub kl_weight: f64,
    /// Fraction of epochs over which κ ramps linearly from 0.
    pub kl_warmup: f64,
    /// Stop after this many epochs without a lower epoch loss.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            learning_rate: 1e-3,
            lr_final: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            kl_weight: 1e-6,
            kl_warmup: 0.2,
            patience: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Config, "epochs must be positive");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail!(Config, "learning rate must be positive");
        }
        if !(self.lr_final > 0.0 && self.lr_final <= 1.0) {
            bail!(Config, "final learning-rate fraction must lie in (0, 1]");
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            bail!(Config, "KL weight must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.beta1) || !(0.0..=1.0).contains(&self.beta2) {
            bail!(Config, "Adam betas must lie in [0, 1]");
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs < 2 {
            return self.learning_rate;
        }
        let f = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * libm::pow(self.lr_final, f)
    }

    /// κ for a zero-based epoch.
    pub fn kl_weight_at(&self, epoch: usize) -> f64 {
        let ramp = self.kl_warmup * self.epochs as f64;
        if ramp <= 0.0 {
            self.kl_weight
        } else {
            self.kl_weight * ((epoch + 1) as f64 / ramp).min(1.0)
        }
    }
}

// stream tags for SplitMix64::derive
const INIT: u64 = 1;
const SHUFFLE: u64 = 2;
const NOISE: u64 = 3;

/// Initial log-variance bias: σ ≈ 0.14 so early sampling noise stays below
/// the latent scale.
const LOG_VAR_INIT: f64 = -4.0;

fn batch_tensor(data: &Matrix, idx: &[usize]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| data.row(i)).collect();
    Tensor::from_rows(&rows)
}

fn collect(grads: &mut Gradients, leaves: &[Var], params: &[Tensor]) -> Vec<Tensor> {
    leaves
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect()
}

fn diverged(epoch: usize, err: Error) -> Error {
    match err {
        Error::Numeric(reason) => Error::Diverged { epoch, reason },
        other => other,
    }
}

fn init_pair(arch: &Architecture, m: usize, seed: u64, head: usize) -> Result<(Network, Network)> {
    let mut rng = SplitMix64::derive(seed, &[INIT, 0]);
    let encoder = Network::new(arch.encoder.clone(), [1, m], &mut rng)?;
    if encoder.output_features() != head {
        bail!(
            Config,
            "encoder emits {} values, expected {head}",
            encoder.output_features()
        );
    }
    let mut rng = SplitMix64::derive(seed, &[INIT, 1]);
    let decoder = Network::new(arch.decoder.clone(), [1, arch.latent_dim], &mut rng)?;
    if decoder.output_features() != m {
        bail!(
            Config,
            "decoder emits {} samples for signals of length {m}",
            decoder.output_features()
        );
    }
    Ok((encoder, decoder))
}

/// Trains a convolutional autoencoder on the rows of `signals` under MSE.
pub fn cae_train(signals: &Matrix, arch: &Architecture, cfg: &TrainConfig) -> Result<NetworkModel> {
    cfg.validate()?;
    check_autoencoder_input(signals, arch)?;
    let (encoder, decoder) = init_pair(arch, signals.cols(), cfg.seed, arch.latent_dim)?;
    train_autoencoder(Family::Cae, encoder, decoder, signals, arch.latent_dim, cfg)
}

/// Trains a variational autoencoder: MSE reconstruction plus κ·KL with
/// reparameterized sampling.
pub fn vae_train(signals: &Matrix, arch: &Architecture, cfg: &TrainConfig) -> Result<NetworkModel> {
    cfg.validate()?;
    check_autoencoder_input(signals, arch)?;
    let (mut encoder, decoder) = init_pair(arch, signals.cols(), cfg.seed, 2 * arch.latent_dim)?;
    let head_bias = encoder
        .params_mut()
        .last_mut()
        .expect("dense head has a bias");
    head_bias.data_mut()[arch.latent_dim..].fill(LOG_VAR_INIT);
    train_autoencoder(Family::Vae, encoder, decoder, signals, arch.latent_dim, cfg)
}

fn check_autoencoder_input(signals: &Matrix, arch: &Architecture) -> Result<()> {
    if signals.rows() == 0 {
        bail!(Degenerate, "no training signals");
    }
    if arch.latent_dim == 0 || arch.latent_dim >= signals.cols() {
        bail!(
            Config,
            "latent width {} must be below the signal length {}",
            arch.latent_dim,
            signals.cols()
        );
    }
    if !signals.as_slice().iter().all(|x| x.is_finite()) {
        bail!(Numeric, "training signals contain non-finite values");
    }
    Ok(())
}

struct StepOutcome {
    reconstruction: f64,
    kl: f64,
}

#[allow(clippy::too_many_arguments)]
fn autoencoder_step(
    family: Family,
    encoder: &mut Network,
    decoder: &mut Network,
    adam: &mut (AdamState, AdamState),
    x: Tensor,
    latent_dim: usize,
    kl_weight: f64,
    noise: &mut SplitMix64,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x)?;
    let (head, enc_leaves) = encoder.forward(&mut tape, xv)?;
    let (z, kl) = match family {
        Family::Vae => {
            let mu = tape.slice_features(head, 0, latent_dim)?;
            let lv = tape.slice_features(head, latent_dim, latent_dim)?;
            let eps = (0..tape.value(mu).len()).map(|_| noise.normal()).collect();
            (
                tape.reparameterize(mu, lv, eps)?,
                Some(tape.gaussian_kl(mu, lv)?),
            )
        }
        _ => (head, None),
    };
    let (out, dec_leaves) = decoder.forward(&mut tape, z)?;
    let rec = tape.mse(out, xv)?;
    let loss = match kl {
        Some(k) => tape.weighted_sum(&[(rec, 1.0), (k, kl_weight)])?,
        None => rec,
    };
    let mut grads = tape.backward(loss)?;
    let ge = collect(&mut grads, &enc_leaves, encoder.params());
    let gd = collect(&mut grads, &dec_leaves, decoder.params());
    adam.0.step(encoder.params_mut(), &ge)?;
    adam.1.step(decoder.params_mut(), &gd)?;
    Ok(StepOutcome {
        reconstruction: tape.value(rec).data()[0],
        kl: kl.map_or(0.0, |k| tape.value(k).data()[0]),
    })
}

fn train_autoencoder(
    family: Family,
    mut encoder: Network,
    mut decoder: Network,
    signals: &Matrix,
    latent_dim: usize,
    cfg: &TrainConfig,
) -> Result<NetworkModel> {
    let n = signals.rows();
    let mut adam = (
        AdamState::new(encoder.params(), cfg.learning_rate, cfg.beta1, cfg.beta2),
        AdamState::new(decoder.params(), cfg.learning_rate, cfg.beta1, cfg.beta2),
    );
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::derive(cfg.seed, &[SHUFFLE, epoch as u64]).shuffle(&mut order);
        let mut noise = SplitMix64::derive(cfg.seed, &[NOISE, epoch as u64]);
        let kappa = cfg.kl_weight_at(epoch);
        adam.0.learning_rate = cfg.learning_rate_at(epoch);
        adam.1.learning_rate = cfg.learning_rate_at(epoch);
        let (mut rec_sum, mut kl_sum) = (0.0, 0.0);
        for idx in order.chunks(cfg.batch_size) {
            let x = batch_tensor(signals, idx)?;
            let step = autoencoder_step(
                family,
                &mut encoder,
                &mut decoder,
                &mut adam,
                x,
                latent_dim,
                kappa,
                &mut noise,
            )
            .map_err(|e| diverged(epoch, e))?;
            rec_sum += step.reconstruction * idx.len() as f64;
            kl_sum += step.kl * idx.len() as f64;
        }
        let entry = EpochLog {
            reconstruction: rec_sum / n as f64,
            kl: kl_sum / n as f64,
            kl_weight: kappa,
        };
        if !(entry.reconstruction.is_finite() && entry.kl.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                reason: "loss is not finite".to_string(),
            });
        }
        log.push(entry);
        let total = entry.reconstruction + kappa * entry.kl;
        if total < best {
            best = total;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best > p) {
                break;
            }
        }
    }
    let mut model = NetworkModel {
        family,
        encoder,
        decoder: Some(decoder),
        latent_dim,
        input_len: signals.cols(),
        log,
        train_rss: 0.0,
        seed: cfg.seed,
        input_map: None,
        output_map: None,
    };
    model.train_rss = model
        .reconstruction_rss(signals)
        .map_err(|e| diverged(cfg.epochs, e))?;
    Ok(model)
}

/// Trains a dense regressor from `inputs` (N x p) to `targets` (N x q).
/// Both sides are mapped onto [-1, 1] per feature; predictions come back in
/// the original units.
pub fn ffnn_train(
    inputs: &Matrix,
    targets: &Matrix,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<NetworkModel> {
    cfg.validate()?;
    let n = inputs.rows();
    if n == 0 || targets.rows() != n {
        bail!(
            Dimension,
            "{n} input rows but {} target rows",
            targets.rows()
        );
    }
    if !inputs
        .as_slice()
        .iter()
        .chain(targets.as_slice())
        .all(|x| x.is_finite())
    {
        bail!(Numeric, "regression data contains non-finite values");
    }
    let input_map = Affine::fit_unit_range(inputs);
    let output_map = Affine::fit_unit_range(targets);
    let xs = input_map.apply_rows(inputs);
    let ys = output_map.apply_rows(targets);
    let mut rng = SplitMix64::derive(cfg.seed, &[INIT]);
    let mut net = Network::new(arch.encoder.clone(), [1, inputs.cols()], &mut rng)?;
    if net.output_features() != targets.cols() {
        bail!(
            Config,
            "regressor emits {} values for {} targets",
            net.output_features(),
            targets.cols()
        );
    }
    let mut adam = AdamState::new(net.params(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::derive(cfg.seed, &[SHUFFLE, epoch as u64]).shuffle(&mut order);
        let mut sum = 0.0;
        adam.learning_rate = cfg.learning_rate_at(epoch);
        for idx in order.chunks(cfg.batch_size) {
            let mut step = || -> Result<f64> {
                let mut tape = Tape::new();
                let x = tape.leaf(batch_tensor(&xs, idx)?)?;
                let y = tape.leaf(batch_tensor(&ys, idx)?)?;
                let (out, leaves) = net.forward(&mut tape, x)?;
                let loss = tape.mse(out, y)?;
                let mut grads = tape.backward(loss)?;
                let g = collect(&mut grads, &leaves, net.params());
                adam.step(net.params_mut(), &g)?;
                Ok(tape.value(loss).data()[0])
            };
            sum += step().map_err(|e| diverged(epoch, e))? * idx.len() as f64;
        }
        let mse = sum / n as f64;
        if !mse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("loss {mse}"),
            });
        }
        log.push(EpochLog {
            reconstruction: mse,
            kl: 0.0,
            kl_weight: 0.0,
        });
        if mse < best {
            best = mse;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best > p) {
                break;
            }
        }
    }
    Ok(NetworkModel {
        family: Family::Ffnn,
        encoder: net,
        decoder: None,
        latent_dim: targets.cols(),
        input_len: inputs.cols(),
        log,
        train_rss: 0.0,
        seed: cfg.seed,
        input_map: Some(input_map),
        output_map: Some(output_map),
    })
}
