mod common;

use std::sync::OnceLock;

use wavelatent_core::linalg::Matrix;
use wavelatent_core::models::{
    cae_train, ffnn_train, vae_train, Architecture, Family, NetworkModel, TrainConfig,
};
use wavelatent_core::rng::SplitMix64;
use wavelatent_core::signal::rss_sss;
use wavelatent_core::Error;

const D: usize = 7;
const EPOCHS: usize = 500;

fn fifty() -> &'static Matrix {
    static SET: OnceLock<Matrix> = OnceLock::new();
    SET.get_or_init(|| common::clean_set(&common::case1_path0(), 5, 10).0)
}

fn ae_config(kl_weight: f64) -> TrainConfig {
    TrainConfig {
        epochs: EPOCHS,
        batch_size: 5,
        learning_rate: 3e-3,
        lr_final: 0.05,
        kl_weight,
        seed: 17,
        ..TrainConfig::default()
    }
}

fn cae() -> &'static NetworkModel {
    static MODEL: OnceLock<NetworkModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let arch = Architecture::reference_cae(fifty().cols(), D).unwrap();
        cae_train(fifty(), &arch, &ae_config(0.0)).unwrap()
    })
}

fn vae(kl_weight: f64) -> NetworkModel {
    let arch = Architecture::reference_vae(fifty().cols(), D).unwrap();
    vae_train(fifty(), &arch, &ae_config(kl_weight)).unwrap()
}

fn vae_default() -> &'static NetworkModel {
    static MODEL: OnceLock<NetworkModel> = OnceLock::new();
    MODEL.get_or_init(|| vae(TrainConfig::default().kl_weight))
}

#[test]
fn cae_fits_fifty_noise_free_signals() {
    let model = cae();
    assert_eq!(model.family, Family::Cae);
    assert_eq!(model.log.len(), EPOCHS);
    assert!(model.train_rss < 2.0, "train RSS/SSS {}", model.train_rss);
}

#[test]
fn round_trip_matches_logged_train_error() {
    let model = cae();
    let rec = model
        .decode_batch(&model.encode_batch(fifty()).unwrap())
        .unwrap();
    let mean = (0..fifty().rows())
        .map(|r| rss_sss(fifty().row(r), rec.row(r)).unwrap())
        .sum::<f64>()
        / fifty().rows() as f64;
    assert!(mean <= model.train_rss + 0.1);
}

#[test]
fn encode_and_decode_are_pure_and_batch_transparent() {
    let model = cae();
    let batch = model.encode_batch(fifty()).unwrap();
    for r in [0, 13, 49] {
        let a = model.encode(fifty().row(r)).unwrap();
        assert_eq!(a, model.encode(fifty().row(r)).unwrap());
        for (x, y) in a.iter().zip(batch.row(r)) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert_eq!(model.decode(&a).unwrap(), model.decode(&a).unwrap());
    }
    let zero = model.decode(&[0.0; D]).unwrap();
    assert_eq!(zero.len(), fifty().cols());
    assert!(zero.iter().all(|v| v.is_finite()));
}

#[test]
fn distant_states_have_separated_latents() {
    let model = cae();
    let a = model.encode(fifty().row(0)).unwrap();
    let b = model.encode(fifty().row(49)).unwrap();
    let dist = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(dist > 1e-3 * scale.max(1.0), "{dist}");
}

#[test]
fn wrong_lengths_are_dimension_errors() {
    let model = cae();
    assert!(matches!(
        model.encode(&[0.0; 100]),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        model.decode(&[0.0; D + 1]),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn training_is_deterministic_given_seed() {
    let (signals, _) = common::clean_set(&common::short_config(), 3, 4);
    let arch = Architecture::reference_cae(signals.cols(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = cae_train(&signals, &arch, &cfg).unwrap();
    let b = cae_train(&signals, &arch, &cfg).unwrap();
    assert_eq!(a.encoder.params(), b.encoder.params());
    assert_eq!(a.decoder, b.decoder);
    let c = cae_train(&signals, &arch, &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.encoder.params(), c.encoder.params());
}

#[test]
fn zero_epochs_is_a_config_error() {
    let (signals, _) = common::clean_set(&common::short_config(), 2, 2);
    let arch = Architecture::reference_cae(signals.cols(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        cae_train(&signals, &arch, &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn vae_kl_term_is_non_negative_every_epoch() {
    let model = vae_default();
    assert_eq!(model.log.len(), EPOCHS);
    assert!(model.log.iter().all(|e| e.kl >= 0.0));
    assert_eq!(
        model.log.last().unwrap().kl_weight,
        TrainConfig::default().kl_weight
    );
}

#[test]
fn unweighted_vae_reconstructs_like_cae() {
    // paired over three seeds; single runs spread by about 2x
    let arch_c = Architecture::reference_cae(fifty().cols(), D).unwrap();
    let arch_v = Architecture::reference_vae(fifty().cols(), D).unwrap();
    let (mut c, mut v) = (cae().train_rss, vae(0.0).train_rss);
    for seed in [1, 2] {
        let cfg = TrainConfig {
            seed,
            ..ae_config(0.0)
        };
        c += cae_train(fifty(), &arch_c, &cfg).unwrap().train_rss;
        v += vae_train(fifty(), &arch_v, &cfg).unwrap().train_rss;
    }
    assert!(v <= 1.5 * c, "VAE {} vs CAE {}", v / 3.0, c / 3.0);
}

#[test]
fn sample_mean_converges_to_posterior_mean() {
    let model = vae_default();
    let signal = fifty().row(21);
    let (mu, lv) = model.posterior(signal).unwrap();
    let draws = model
        .sample_latents(signal, 10_000, &mut SplitMix64::new(2))
        .unwrap();
    for j in 0..D {
        let mean = draws.column(j).iter().sum::<f64>() / 10_000.0;
        let sigma = (0.5 * lv[j]).exp();
        assert!((mean - mu[j]).abs() <= 3.0 * sigma / 100.0, "dim {j}");
    }
}

#[test]
fn zero_variance_samples_equal_mean() {
    let mut model = vae_default().clone();
    let bias = model.encoder.params_mut().last_mut().unwrap();
    for v in &mut bias.data_mut()[D..] {
        *v = -2000.0;
    }
    let signal = fifty().row(7);
    let (mu, _) = model.posterior(signal).unwrap();
    let draws = model
        .sample_latents(signal, 20, &mut SplitMix64::new(4))
        .unwrap();
    for r in 0..20 {
        assert_eq!(draws.row(r), &mu[..]);
    }
    assert_eq!(model.encode(signal).unwrap(), mu);
}

#[test]
fn operations_outside_a_family_are_rejected() {
    let mut rng = SplitMix64::new(0);
    assert!(matches!(
        cae().sample_latents(fifty().row(0), 1, &mut rng),
        Err(Error::Family { .. })
    ));
    assert!(matches!(
        cae().predict(&[0.0; D]),
        Err(Error::Family { .. })
    ));
    let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
    let reg = ffnn_train(
        &x,
        &x,
        &Architecture::ffnn(&[4], 1),
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(matches!(reg.encode(&[0.0]), Err(Error::Family { .. })));
    assert!(matches!(
        reg.sample_latents(&[0.0], 1, &mut rng),
        Err(Error::Family { .. })
    ));
    assert!(matches!(
        vae_default().sample_latents(fifty().row(0), 0, &mut rng),
        Err(Error::Config(_))
    ));
}

fn regression_config() -> TrainConfig {
    TrainConfig {
        epochs: 5000,
        batch_size: 16,
        learning_rate: 1e-3,
        lr_final: 0.1,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn ffnn_learns_identity() {
    let x: Vec<[f64; 2]> = (0..64)
        .map(|i| {
            let t = i as f64 / 63.0;
            [t, (3.0 * t).sin()]
        })
        .collect();
    let x = Matrix::from_rows(&x).unwrap();
    let model = ffnn_train(&x, &x, &Architecture::default_ffnn(2), &regression_config()).unwrap();
    let pred = model.predict_batch(&x).unwrap();
    let mse = pred
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x.as_slice().len() as f64;
    assert!(mse < 1e-6, "{mse}");
}

#[test]
fn ffnn_recovers_least_squares_slope_in_physical_units() {
    // y = 2x over x in [0, 20]; ordinary least squares gives slope exactly 2
    let x: Vec<[f64; 1]> = (0..41).map(|i| [0.5 * i as f64]).collect();
    let y: Vec<[f64; 1]> = x.iter().map(|v| [2.0 * v[0]]).collect();
    let (x, y) = (
        Matrix::from_rows(&x).unwrap(),
        Matrix::from_rows(&y).unwrap(),
    );
    let model = ffnn_train(&x, &y, &Architecture::default_ffnn(1), &regression_config()).unwrap();
    let pred = model.predict_batch(&x).unwrap().column(0);
    let xs = x.column(0);
    let (mx, my) = (
        xs.iter().sum::<f64>() / 41.0,
        pred.iter().sum::<f64>() / 41.0,
    );
    let slope = xs
        .iter()
        .zip(&pred)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() <= 0.01, "{slope}");
    assert!((pred[40] - 40.0).abs() < 0.1, "{}", pred[40]);
}
